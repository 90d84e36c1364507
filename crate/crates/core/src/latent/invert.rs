use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::generator::check_dim;
use super::{Generator, LatentError};
use crate::rng::{stream_rng, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionOpts {
    pub max_iters: usize,
    /// Stop once the residual or the gradient norm falls below this.
    pub tol: f64,
    pub restarts: usize,
    /// Initial gradient step; adapted by backtracking.
    pub step: f64,
    pub seed: u64,
}

impl Default for InversionOpts {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            restarts: 3,
            step: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub z: Vec<f64>,
    /// `||G(z) - x||_2`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn residual_of(gen: &dyn Generator, z: ArrayView1<f64>, x: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let diff = gen.forward(z) - x;
    let r = diff.dot(&diff).sqrt();
    (diff, r)
}

/// Minimize `||G(z) - x||^2` by gradient descent with a backtracking step.
fn descend(
    gen: &dyn Generator,
    x: ArrayView1<f64>,
    start: Array1<f64>,
    opts: &InversionOpts,
) -> Inversion {
    let mut z = start;
    let (mut diff, mut r) = residual_of(gen, z.view(), x);
    let mut step = opts.step;
    let mut it = 0;
    let mut converged = r <= opts.tol;
    while !converged && it < opts.max_iters {
        let grad = gen.vjp(z.view(), diff.view());
        if grad.dot(&grad).sqrt() <= opts.tol {
            converged = true;
            break;
        }
        it += 1;
        let trial = &z - &(&grad * step);
        let (d2, r2) = residual_of(gen, trial.view(), x);
        if r2 < r {
            z = trial;
            diff = d2;
            r = r2;
            step = (step * 1.5).min(1e3);
            converged = r <= opts.tol;
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    Inversion {
        z: z.to_vec(),
        residual: r,
        iterations: it,
        converged,
    }
}

/// Recover a latent code reproducing `x`. The first attempt starts at `init`
/// (or the origin); further restarts draw from a standard normal seeded by
/// `opts.seed`. Returns the best attempt, as an error if none converged.
pub fn invert(
    gen: &dyn Generator,
    x: &[f64],
    init: Option<&[f64]>,
    opts: &InversionOpts,
) -> Result<Inversion, LatentError> {
    check_dim(gen.output_dim(), x.len())?;
    let d = gen.latent_dim();
    if let Some(z0) = init {
        check_dim(d, z0.len())?;
    }
    let x = ArrayView1::from(x);
    let mut rng = stream_rng(opts.seed, &[tag::INVERSION]);
    let mut best: Option<Inversion> = None;
    for attempt in 0..opts.restarts.max(1) {
        let start = match (attempt, init) {
            (0, Some(z0)) => Array1::from(z0.to_vec()),
            (0, None) => Array1::zeros(d),
            _ => Array1::from_shape_fn(d, |_| rng.sample(StandardNormal)),
        };
        let run = descend(gen, x, start, opts);
        let done = run.converged;
        if best.as_ref().is_none_or(|b| run.residual < b.residual) {
            best = Some(run);
        }
        if done {
            break;
        }
    }
    let best = best.expect("at least one attempt");
    if best.converged {
        Ok(best)
    } else {
        Err(LatentError::DidNotConverge(Box::new(best)))
    }
}

/// Best-effort inversion: the result whether or not it converged.
pub fn invert_best_effort(
    gen: &dyn Generator,
    x: &[f64],
    init: Option<&[f64]>,
    opts: &InversionOpts,
) -> Result<Inversion, LatentError> {
    match invert(gen, x, init, opts) {
        Err(LatentError::DidNotConverge(best)) => Ok(*best),
        other => other,
    }
}
