use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::data::{GroupLabel, ProtectedAttribute};
use crate::nn::sigmoid;

/// A unit-normal hyperplane `alpha . z + b = 0` in latent space. Codes with
/// positive signed distance belong to `positive_label`'s side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub attribute: ProtectedAttribute,
    pub alpha: Vec<f64>,
    pub b: f64,
    pub positive_label: GroupLabel,
}

impl Boundary {
    /// Normalizes `(w, c)` so that `alpha` has unit length.
    pub fn from_weights(
        attribute: ProtectedAttribute,
        w: &[f64],
        c: f64,
        positive_label: GroupLabel,
    ) -> Result<Self, LatentError> {
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite() && c.is_finite()) {
            return Err(LatentError::DegenerateBoundary);
        }
        Ok(Self {
            attribute,
            alpha: w.iter().map(|v| v / norm).collect(),
            b: c / norm,
            positive_label,
        })
    }

    pub fn signed_distance(&self, z: &[f64]) -> f64 {
        self.alpha.iter().zip(z).map(|(a, v)| a * v).sum::<f64>() + self.b
    }

    pub fn norm(&self) -> f64 {
        self.alpha.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryOpts {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for BoundaryOpts {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1.0,
            l2: 1e-4,
        }
    }
}

/// Fit a logistic-regression separator between the protected side of `attr`
/// (positive) and everyone else. Ethnicity is thereby reduced to AfAm versus
/// the merged Asi + Cau reference group.
pub fn learn_boundary(
    codes: &[Vec<f64>],
    labels: &[GroupLabel],
    attr: ProtectedAttribute,
    opts: &BoundaryOpts,
) -> Result<Boundary, LatentError> {
    if codes.len() != labels.len() {
        return Err(LatentError::DimensionMismatch {
            expected: codes.len(),
            found: labels.len(),
        });
    }
    let d = codes.first().map_or(0, Vec::len);
    if let Some(bad) = codes.iter().find(|c| c.len() != d) {
        return Err(LatentError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    if let Some(&g) = labels.iter().find(|g| g.attribute() != attr) {
        return Err(LatentError::WrongAttribute(g, attr));
    }
    let y: Vec<f64> = labels
        .iter()
        .map(|g| f64::from(u8::from(g.is_protected())))
        .collect();
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == y.len() {
        return Err(LatentError::SingleClass(attr));
    }

    let n = codes.len() as f64;
    let mut w = vec![0.0; d];
    let mut c = 0.0;
    let mut vel_w = vec![0.0; d];
    let mut vel_c = 0.0;
    let momentum = 0.9;
    for _ in 0..opts.iterations {
        let mut gw = vec![0.0; d];
        let mut gc = 0.0;
        for (z, &t) in codes.iter().zip(&y) {
            let p = sigmoid(w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + c);
            let e = (p - t) / n;
            for (g, v) in gw.iter_mut().zip(z) {
                *g += e * v;
            }
            gc += e;
        }
        for k in 0..d {
            vel_w[k] = momentum * vel_w[k] + gw[k] + opts.l2 * w[k];
            w[k] -= opts.learning_rate * vel_w[k];
        }
        vel_c = momentum * vel_c + gc;
        c -= opts.learning_rate * vel_c;
    }
    Boundary::from_weights(attr, &w, c, attr.protected_label())
}
