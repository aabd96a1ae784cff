//! Central finite-difference gradient checker.
//!
//! Runs entirely at f64: the same generic ops the f32 training path uses are
//! instantiated wide so checker noise stays far below the pass tolerances.

use super::graph::TensorRef;
use super::params::{BnMode, Fwd, ParamStore};
use crate::error::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Max over sampled coordinates of |analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-8). `build` must be deterministic: any randomness (inputs,
/// prior draws) has to be captured before calling.
pub fn gradient_check<B>(
    store: &ParamStore<f64>,
    build: B,
    eps: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<f64>
where
    B: Fn(&mut Fwd<'_, f64>) -> Result<TensorRef>,
{
    // Analytic pass.
    let mut fwd = Fwd::new(store, BnMode::TrainFrozen);
    let loss = build(&mut fwd)?;
    fwd.graph.backward(loss)?;
    let analytic = fwd.grads();
    let bound: Vec<String> = fwd.bound().map(|(n, _)| n.to_string()).collect();
    drop(fwd);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut fwd = Fwd::new(s, BnMode::TrainFrozen);
        let loss = build(&mut fwd)?;
        Ok(fwd.graph.scalar(loss))
    };

    let mut work = store.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for name in &bound {
        let n = work.param(name)?.values.len();
        let coords: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for &c in &coords {
            let orig = work.param(name)?.values[c];
            work.param_mut(name)?.values[c] = orig + eps;
            let fp = eval(&work)?;
            work.param_mut(name)?.values[c] = orig - eps;
            let fm = eval(&work)?;
            work.param_mut(name)?.values[c] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.get(name).map(|g| g[c]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
