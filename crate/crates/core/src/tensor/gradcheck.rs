//! Central-difference verification of the analytic backward rules.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamKind, ParamStore, Shape, Tensor, Var};
use crate::Result;

/// Gradients smaller than this are compared absolutely rather than relatively.
const SCALE_FLOOR: f64 = 1e-6;

/// Settings for a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Check a random subset of this many entries per parameter instead of all of them.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest per-parameter relative error, `max|analytic - numeric| / max(max|analytic|, max|numeric|)`.
    pub max_rel_error: f64,
    pub per_param: Vec<(String, f64)>,
    pub entries_checked: usize,
    /// Entries whose ±step evaluation crossed a kink of a piecewise op and were therefore skipped.
    pub kink_skips: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Passes when the error is within tolerance and no more than 5% of entries had to be skipped.
    pub fn passed(&self) -> bool {
        self.entries_checked > 0
            && self.max_rel_error < self.tolerance
            && self.kink_skips * 20 <= self.entries_checked + self.kink_skips
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} (tol {:.0e}) over {} entries, {} kink skips",
            self.max_rel_error, self.tolerance, self.entries_checked, self.kink_skips
        )
    }
}

impl GradCheck {
    /// Checks the gradient of the scalar built by `op` with respect to every
    /// trainable entry in `store`. `op` is called once for the analytic pass and
    /// twice per checked entry; it must be deterministic.
    pub fn run<F>(&self, store: &mut ParamStore<f64>, mut op: F) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
    {
        store.zero_grads();
        let mut graph = Graph::new();
        graph.track_kinks();
        let loss = op(&mut graph, store)?;
        graph.backward(loss, store)?;
        let baseline = graph.kink_signature().unwrap_or_default().to_vec();
        drop(graph);

        let mut eval = |store: &mut ParamStore<f64>| -> Result<(f64, bool)> {
            let mut g = Graph::new();
            g.track_kinks();
            let l = op(&mut g, store)?;
            let same = g.kink_signature().unwrap_or_default() == baseline.as_slice();
            Ok((g.value(l).item(), same))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let ids: Vec<_> = store.trainable().collect();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            per_param: Vec::new(),
            entries_checked: 0,
            kink_skips: 0,
            tolerance: self.tolerance,
        };
        for id in ids {
            let len = store.get(id).len();
            let analytic = store
                .get(id)
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; len]);
            let entries: Vec<usize> = match self.max_entries {
                Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
                _ => (0..len).collect(),
            };
            let (mut max_diff, mut max_a, mut max_n) = (0.0f64, 0.0f64, 0.0f64);
            let mut checked = 0;
            for idx in entries {
                let orig = store.get(id).data()[idx];
                store.get_mut(id).data_mut()[idx] = orig + self.step;
                let (plus, same_plus) = eval(store)?;
                store.get_mut(id).data_mut()[idx] = orig - self.step;
                let (minus, same_minus) = eval(store)?;
                store.get_mut(id).data_mut()[idx] = orig;
                if !(same_plus && same_minus) {
                    report.kink_skips += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * self.step);
                max_diff = max_diff.max((analytic[idx] - numeric).abs());
                max_a = max_a.max(analytic[idx].abs());
                max_n = max_n.max(numeric.abs());
                checked += 1;
            }
            let rel = max_diff / max_a.max(max_n).max(SCALE_FLOOR);
            report.entries_checked += checked;
            report.max_rel_error = report.max_rel_error.max(rel);
            report.per_param.push((store.name(id).to_string(), rel));
        }
        Ok(report)
    }

    /// Checks `op` with respect to each of `inputs`, which are registered as parameters.
    pub fn run_on_inputs<F>(&self, inputs: Vec<Tensor<f64>>, mut op: F) -> Result<GradCheckReport>
    where
        F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut store = ParamStore::new();
        let ids: Vec<_> = inputs
            .into_iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("input{i}"), ParamKind::Trainable, t))
            .collect();
        self.run(&mut store, |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            op(g, &vars)
        })
    }
}

/// Random inputs in `±[0.05, 1.5]`, away from the kinks of piecewise activations.
pub fn random_inputs(shapes: &[Shape], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|&s| {
            let data = (0..s.len())
                .map(|_| {
                    let mag = rng.random_range(0.05..1.5);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            Tensor::from_vec(s, data).expect("sized from shape")
        })
        .collect()
}

/// Gradient check of `op` on random inputs of the given shapes, with the default step.
pub fn grad_check<F>(op: F, input_shapes: &[Shape], tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let check = GradCheck {
        tolerance,
        ..GradCheck::default()
    };
    check.run_on_inputs(random_inputs(input_shapes, check.seed), op)
}
