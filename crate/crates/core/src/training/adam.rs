use serde::{Deserialize, Serialize};

use crate::tensor::{ParamId, ParamKind, ParamStore, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adaptive-moment optimizer with bias correction. Moments are kept per trainable
/// parameter of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |id: ParamId| match store.kind(id) {
            ParamKind::Trainable => vec![T::zero(); store.get(id).len()],
            ParamKind::Buffer => Vec::new(),
        };
        Self {
            cfg,
            t: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> &[T] {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[T] {
        &self.v[id.index()]
    }

    /// Restores saved state; moment lengths must match the store.
    pub fn restore(&mut self, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        let ok = |a: &[Vec<T>], b: &[Vec<T>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
        if !ok(&m, &self.m) || !ok(&v, &self.v) {
            return Err(Error::Checkpoint("optimizer moments do not match the parameters".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update from the gradients currently held in `store`. `step` is only used
    /// to label a divergence error.
    pub fn step(&mut self, store: &mut ParamStore<T>, step: u64) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable().collect();
        for &id in &ids {
            if let Some(g) = store.get(id).grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        step,
                        what: format!("non-finite gradient in {}", store.name(id)),
                    });
                }
            }
        }
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let t = self.t as i32;
        let lr_t = T::lit(learning_rate);
        let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
        let c1 = T::lit(1.0 - beta1.powi(t));
        let c2 = T::lit(1.0 - beta2.powi(t));
        for id in ids {
            let tensor = store.get_mut(id);
            let Some(grad) = tensor.grad().map(<[T]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};
    use approx::assert_relative_eq;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn store_with(values: &[f64], grads: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(
            "p",
            ParamKind::Trainable,
            Tensor::from_vec(Shape::new(1, 1, 1, values.len()), values.to_vec()).unwrap(),
        );
        s.get_mut(id).grad_mut().copy_from_slice(grads);
        (s, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g², so Δ = -lr·g/(|g| + ε).
        let (mut s, id) = store_with(&[1.0], &[2.0]);
        let mut adam = Adam::new(cfg(0.01), &s);
        adam.step(&mut s, 1).unwrap();
        let expected = 1.0 - 0.01 * 2.0 / (2.0 + 1e-8);
        assert_relative_eq!(s.get(id).data()[0], expected, epsilon = 1e-15);
        assert_relative_eq!(s.get(id).data()[0] - 1.0, -0.01, epsilon = 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let (mut s, id) = store_with(&[0.5, -3.0], &[0.0, 0.0]);
        let mut adam = Adam::new(cfg(0.1), &s);
        for step in 1..=3 {
            adam.step(&mut s, step).unwrap();
        }
        assert_eq!(s.get(id).data(), &[0.5, -3.0]);
    }

    #[test]
    fn equal_gradients_update_identically() {
        let (mut s, id) = store_with(&[0.25, 0.25], &[-0.7, -0.7]);
        let mut adam = Adam::new(cfg(0.05), &s);
        adam.step(&mut s, 1).unwrap();
        let d = s.get(id).data();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let (mut s, id) = store_with(&[0.0, 1.0], &[f64::NAN, 0.0]);
        let mut adam = Adam::new(cfg(0.05), &s);
        match adam.step(&mut s, 12) {
            Err(Error::Divergence { step: 12, what }) => assert!(what.contains('p')),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.get(id).data(), &[0.0, 1.0]);
        assert_eq!(adam.timestep(), 0);
    }
}
