use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::Result;

/// Discriminator loss `BCE(real → 1) + BCE(fake → 0)`, each averaged over the patch grid.
///
/// With `D = sigmoid(logits)` this is `-(log D(x,y) + log(1 - D(x,G(x))))`, the
/// negated conditional-GAN value that the discriminator maximizes.
pub fn loss_d<T: Scalar>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let ones = g.input(Tensor::full(g.shape(real_logits), T::one()));
    let zeros = g.input(Tensor::zeros(g.shape(fake_logits)));
    let real = g.bce_with_logits(real_logits, ones)?;
    let fake = g.bce_with_logits(fake_logits, zeros)?;
    g.add(real, fake)
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorLoss {
    pub total: Var,
    pub adversarial: Var,
    /// Unweighted `mean |y_hat - y|`.
    pub l1: Var,
}

/// Non-saturating generator loss `BCE(fake → 1) + λ·mean|y_hat - y|`.
pub fn loss_g<T: Scalar>(g: &mut Graph<T>, fake_logits: Var, y_hat: Var, y: Var, lambda: f64) -> Result<GeneratorLoss> {
    let ones = g.input(Tensor::full(g.shape(fake_logits), T::one()));
    let adversarial = g.bce_with_logits(fake_logits, ones)?;
    let l1 = g.l1_loss(y_hat, y)?;
    let weighted = g.scale(l1, lambda);
    let total = g.add(adversarial, weighted)?;
    Ok(GeneratorLoss { total, adversarial, l1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn grid(g: &mut Graph<f64>, v: &[f64]) -> Var {
        g.input(Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap())
    }

    /// The log-probability expressions evaluated directly on sigmoid probabilities.
    fn direct_d(real: &[f64], fake: &[f64]) -> f64 {
        let p = |l: f64| 1.0 / (1.0 + (-l).exp());
        let e_real = real.iter().map(|&l| p(l).ln()).sum::<f64>() / real.len() as f64;
        let e_fake = fake.iter().map(|&l| (1.0 - p(l)).ln()).sum::<f64>() / fake.len() as f64;
        -(e_real + e_fake)
    }

    fn direct_g(fake: &[f64], y_hat: &[f64], y: &[f64], lambda: f64) -> f64 {
        let p = |l: f64| 1.0 / (1.0 + (-l).exp());
        let adv = -fake.iter().map(|&l| p(l).ln()).sum::<f64>() / fake.len() as f64;
        let l1 = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
        adv + lambda * l1
    }

    #[test]
    fn discriminator_at_half() {
        let mut g = Graph::new();
        let r = grid(&mut g, &[0.0; 36]);
        let f = grid(&mut g, &[0.0; 36]);
        let l = loss_d(&mut g, r, f).unwrap();
        assert_relative_eq!(g.value(l).item(), 2.0 * LN_2, epsilon = 1e-12);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let mut g = Graph::new();
        let r = grid(&mut g, &[40.0; 4]);
        let f = grid(&mut g, &[-40.0; 4]);
        let l = loss_d(&mut g, r, f).unwrap();
        assert!(g.value(l).item() < 1e-15);
    }

    #[test]
    fn generator_examples() {
        let mut g = Graph::new();
        let f = grid(&mut g, &[0.0; 9]);
        let y = grid(&mut g, &[0.3, -0.2, 0.9]);
        let same = loss_g(&mut g, f, y, y, 100.0).unwrap();
        assert_relative_eq!(g.value(same.total).item(), LN_2, epsilon = 1e-12);

        let shifted = grid(&mut g, &[0.31, -0.19, 0.91]);
        let off = loss_g(&mut g, f, shifted, y, 100.0).unwrap();
        assert_relative_eq!(g.value(off.total).item(), LN_2 + 1.0, epsilon = 1e-12);
        assert_relative_eq!(g.value(off.l1).item(), 0.01, epsilon = 1e-14);

        let pure = loss_g(&mut g, f, shifted, y, 0.0).unwrap();
        assert_eq!(g.value(pure.total).item(), g.value(pure.adversarial).item());
    }

    #[test]
    fn stable_forms_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let real: Vec<f64> = (0..36).map(|_| rng.random_range(-10.0..10.0)).collect();
            let fake: Vec<f64> = (0..36).map(|_| rng.random_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y_hat: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lambda = rng.random_range(0.0..200.0);
            let mut g = Graph::new();
            let (r, f) = (grid(&mut g, &real), grid(&mut g, &fake));
            let (yv, yh) = (grid(&mut g, &y), grid(&mut g, &y_hat));
            let ld = loss_d(&mut g, r, f).unwrap();
            let lg = loss_g(&mut g, f, yh, yv, lambda).unwrap();
            assert!((g.value(ld).item() - direct_d(&real, &fake)).abs() < 1e-6);
            assert!((g.value(lg.total).item() - direct_g(&fake, &y_hat, &y, lambda)).abs() < 1e-6);
        }
    }
}
