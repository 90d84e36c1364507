use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, Network, NnError, Objective};

/// Denominator floor of the relative error, so parameters whose true
/// gradient is zero (e.g. a bias feeding a batch-norm) are judged on
/// absolute error.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter buffer, element)` with the largest error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compare backprop gradients against central finite differences with step
/// `h` for every parameter. Dropout masks are replayed from `seed` so the
/// train-mode loss is a deterministic function of the parameters.
pub fn gradient_check<N: Network, O: Objective>(
    net: &N,
    x: &Array2<f64>,
    objective: &O,
    mode: Mode,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport, NnError> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let loss_of = |candidate: &N| -> Result<f64, NnError> {
        let mut n = candidate.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (outs, _) = n.forward_heads(x.view(), mode, &mut rng)?;
        Ok(objective.loss(&outs, &rows)?.0)
    };

    let mut probe = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (outs, cache) = probe.forward_heads(x.view(), mode, &mut rng)?;
    let (_, out_grads) = objective.loss(&outs, &rows)?;
    let analytic = probe.backward_heads(&cache, &out_grads)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    for (p, &len) in shapes.iter().enumerate() {
        for k in 0..len {
            let mut plus = net.clone();
            plus.param_slices_mut()[p][k] += h;
            let mut minus = net.clone();
            minus.param_slices_mut()[p][k] -= h;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            let a = analytic.0[p][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_ABS_FLOOR);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (p, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
