mod common;

use cdc_core::tensor::{grad_check, Graph, Shape, Var};

#[test]
fn generator_objective_matches_finite_differences() {
    let report = common::generator_objective_gradcheck(None);
    println!("{report}");
    assert!(report.passed(), "{report}");
    assert!(report.entries_checked > 1000);
}

#[test]
fn discriminator_objective_matches_finite_differences() {
    use cdc_core::nets::{Discriminator, DiscriminatorConfig, Params};
    use cdc_core::tensor::{GradCheck, Mode, Tensor};
    use cdc_core::training::loss_d;
    use rand::{Rng, SeedableRng};

    let mut disc = Discriminator::<f64>::new(DiscriminatorConfig { num_downsample: 2, base_channels: 4 }, 3).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let shape = Shape::new(2, 3, 16, 16);
    let mut rand_t = || Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (x, y, fake) = (rand_t(), rand_t(), rand_t());
    let mut store = std::mem::take(disc.params_mut());
    let report = GradCheck { max_entries: Some(60), ..GradCheck::default() }
        .run(&mut store, |g, store| {
            std::mem::swap(disc.params_mut(), store);
            let (xv, yv, fv) = (g.input(x.clone()), g.input(y.clone()), g.input(fake.clone()));
            let out = disc
                .forward(g, xv, yv, Mode::Train, Params::Trainable)
                .and_then(|real| Ok((real, disc.forward(g, xv, fv, Mode::Train, Params::Trainable)?)))
                .and_then(|(real, f)| loss_d(g, real, f));
            std::mem::swap(disc.params_mut(), store);
            out
        })
        .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn composed_ops_pass_on_random_inputs() {
    let shapes = [Shape::new(2, 3, 6, 6), Shape::new(4, 3, 3, 3)];
    let report = grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let c = g.conv2d(v[0], v[1], None, 1, 1)?;
            let t = g.tanh(c);
            let l = g.leaky_relu(t, 0.2);
            Ok(g.sum(l))
        },
        &shapes,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}
