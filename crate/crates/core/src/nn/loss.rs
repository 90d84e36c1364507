use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{NnError, Objective};

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(), NnError> {
    if a.dim() != b.dim() {
        return Err(NnError::ShapeMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    Ok(())
}

/// Mean squared error over all elements and its gradient `2 (pred - target) / count`.
pub fn mse_loss(
    pred: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>), NnError> {
    same_shape(pred, target)?;
    let count = pred.len().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff * (2.0 / count)))
}

/// Mean absolute error over all elements. Tables report `1 - mae`.
pub fn mae(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64, NnError> {
    same_shape(pred, target)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Per-class loss weights, all positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self, NnError> {
        if w.is_empty() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(NnError::BadHyperparameter(format!(
                "class weights must be positive, got {w:?}"
            )));
        }
        Ok(Self(w))
    }

    pub fn ones(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    /// `w_c = count(majority) / count(c)`; absent classes get weight 1.
    pub fn majority_ratio(counts: &[usize]) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0) as f64;
        Self(
            counts
                .iter()
                .map(|&c| if c == 0 { 1.0 } else { max / c as f64 })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }
}

/// Weighted softmax cross-entropy. Per item `l_n = -w[y_n] log softmax(x_n)[y_n]`;
/// the loss is the mean of `l_n` over the items that carry a target (`None`
/// rows are masked and receive zero gradient).
pub fn weighted_ce_loss(
    logits: ArrayView2<f64>,
    targets: &[Option<usize>],
    w: &ClassWeights,
) -> Result<(f64, Array2<f64>), NnError> {
    let (n, c) = logits.dim();
    if targets.len() != n {
        return Err(NnError::ShapeMismatch {
            expected: (n, c),
            found: (targets.len(), c),
        });
    }
    if w.classes() != c {
        return Err(NnError::ShapeMismatch {
            expected: (n, c),
            found: (n, w.classes()),
        });
    }
    let active = targets.iter().filter(|t| t.is_some()).count();
    let mut grad = Array2::zeros((n, c));
    if active == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (r, (row, target)) in logits.axis_iter(Axis(0)).zip(targets).enumerate() {
        let Some(y) = *target else { continue };
        if y >= c {
            return Err(NnError::BadClassIndex {
                index: y,
                classes: c,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let wy = w.0[y];
        total += -wy * (row[y] - log_z);
        for k in 0..c {
            let p = (row[k] - log_z).exp();
            let indicator = if k == y { 1.0 } else { 0.0 };
            grad[[r, k]] = wy * (p - indicator) / active as f64;
        }
    }
    Ok((total / active as f64, grad))
}

/// Mean over heads of per-head MSE; validates with mean absolute error.
#[derive(Debug, Clone)]
pub struct MseObjective {
    /// One `(samples, head_width)` target matrix per output head.
    pub targets: Vec<Array2<f64>>,
}

impl Objective for MseObjective {
    fn loss(
        &self,
        outputs: &[Array2<f64>],
        rows: &[usize],
    ) -> Result<(f64, Vec<Array2<f64>>), NnError> {
        let heads = self.targets.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for (out, t) in outputs.iter().zip(&self.targets) {
            let t = t.select(Axis(0), rows);
            let (l, g) = mse_loss(out.view(), t.view())?;
            total += l / heads;
            grads.push(g / heads);
        }
        Ok((total, grads))
    }

    fn validation_metric(&self, outputs: &[Array2<f64>], rows: &[usize]) -> f64 {
        let heads = self.targets.len() as f64;
        outputs
            .iter()
            .zip(&self.targets)
            .map(|(out, t)| {
                let t = t.select(Axis(0), rows);
                mae(out.view(), t.view()).unwrap_or(f64::INFINITY)
            })
            .sum::<f64>()
            / heads
    }
}

/// Mean over heads of masked, class-weighted cross-entropy. Validation uses
/// the same quantity.
#[derive(Debug, Clone)]
pub struct CrossEntropyObjective {
    /// Per head, per sample class index (`None` = unlabeled, masked).
    pub targets: Vec<Vec<Option<usize>>>,
    pub weights: Vec<ClassWeights>,
}

impl CrossEntropyObjective {
    fn head_targets(&self, head: usize, rows: &[usize]) -> Vec<Option<usize>> {
        rows.iter().map(|&r| self.targets[head][r]).collect()
    }
}

impl Objective for CrossEntropyObjective {
    fn loss(
        &self,
        outputs: &[Array2<f64>],
        rows: &[usize],
    ) -> Result<(f64, Vec<Array2<f64>>), NnError> {
        let heads = self.targets.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outputs.len());
        for (h, out) in outputs.iter().enumerate() {
            let t = self.head_targets(h, rows);
            let (l, g) = weighted_ce_loss(out.view(), &t, &self.weights[h])?;
            total += l / heads;
            grads.push(g / heads);
        }
        Ok((total, grads))
    }

    fn validation_metric(&self, outputs: &[Array2<f64>], rows: &[usize]) -> f64 {
        self.loss(outputs, rows).map_or(f64::INFINITY, |(l, _)| l)
    }
}
