//! A small dense network engine: exact forward/backward passes, SGD with
//! momentum and step decay, k-fold training with best-checkpoint selection,
//! and a finite-difference gradient checker.

mod checkpoint;
mod dense;
mod gradcheck;
mod init;
mod loss;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub(crate) use dense::sigmoid;
pub use dense::{Activation, BatchNorm, DenseNet, ForwardCache, Layer, LayerSpec, Mode};
pub use gradcheck::{gradient_check, GradCheckReport, GRADCHECK_ABS_FLOOR};
pub use init::xavier_init;
pub use loss::{
    mae, mse_loss, weighted_ce_loss, ClassWeights, CrossEntropyObjective, MseObjective,
};
pub use optim::{SgdConfig, SgdState};
pub use train::{
    assign_folds, train, CrossValidated, FoldHistory, FoldModel, Network, Objective, TrainConfig,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDimension((usize, usize)),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("class index {index} out of range for {classes} classes")]
    BadClassIndex { index: usize, classes: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("fold count must be at least 2 and at most the sample count, got {0}")]
    BadFoldCount(usize),
    #[error("invalid hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training loss became non-finite in fold {fold}, epoch {epoch}")]
    Diverged { fold: usize, epoch: usize },
}

/// Per-parameter gradients, one flat buffer per parameter tensor, in the
/// order of [`Network::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(slices: &[&[f64]]) -> Self {
        Gradients(slices.iter().map(|s| vec![0.0; s.len()]).collect())
    }

    pub fn extend(&mut self, other: Gradients) {
        self.0.extend(other.0);
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}
