use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DenseNet, ForwardCache, Gradients, Mode, NnError, SgdConfig, SgdState};
use crate::rng::{stream_rng, tag};

/// A trainable model with one or more output heads.
pub trait Network: Clone + Send + Sync {
    type Cache;

    fn input_dim(&self) -> usize;

    fn forward_heads(
        &mut self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Vec<Array2<f64>>, Self::Cache), NnError>;

    fn backward_heads(
        &self,
        cache: &Self::Cache,
        output_grads: &[Array2<f64>],
    ) -> Result<Gradients, NnError>;

    fn predict_heads(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>, NnError>;

    fn param_slices(&self) -> Vec<&[f64]>;

    /// Mutable parameter buffers; invalidates outstanding caches.
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Network for DenseNet {
    type Cache = ForwardCache;

    fn input_dim(&self) -> usize {
        DenseNet::input_dim(self)
    }

    fn forward_heads(
        &mut self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Vec<Array2<f64>>, ForwardCache), NnError> {
        let (y, cache) = self.forward(x, mode, rng)?;
        Ok((vec![y], cache))
    }

    fn backward_heads(
        &self,
        cache: &ForwardCache,
        output_grads: &[Array2<f64>],
    ) -> Result<Gradients, NnError> {
        let g = output_grads.first().ok_or(NnError::StaleCache)?;
        Ok(self.backward(cache, g.view())?.0)
    }

    fn predict_heads(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>, NnError> {
        Ok(vec![self.predict(x)?])
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        DenseNet::param_slices(self)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        DenseNet::param_slices_mut(self)
    }
}

/// Loss over a subset of rows of the training targets.
pub trait Objective: Sync {
    /// Loss and gradient per output head for the given sample rows.
    fn loss(
        &self,
        outputs: &[Array2<f64>],
        rows: &[usize],
    ) -> Result<(f64, Vec<Array2<f64>>), NnError>;

    /// Model-selection metric on held-out rows; lower is better.
    fn validation_metric(&self, outputs: &[Array2<f64>], rows: &[usize]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub sgd: SgdConfig,
    /// Stop after this many epochs without validation improvement. `None`
    /// trains all epochs and keeps the best one.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 10,
            folds: 5,
            sgd: SgdConfig::default(),
            patience: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldHistory {
    pub train_loss: Vec<f64>,
    pub validation_metric: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldModel<N> {
    pub net: N,
    /// Sample rows held out for this fold.
    pub validation_rows: Vec<usize>,
    pub history: FoldHistory,
}

/// The per-fold models of a k-fold run. Every sample row is held out by
/// exactly one fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValidated<N> {
    pub folds: Vec<FoldModel<N>>,
}

impl<N: Network> CrossValidated<N> {
    /// Fold index holding out each sample row.
    pub fn fold_of_rows(&self, rows: usize) -> Vec<usize> {
        let mut out = vec![0; rows];
        for (f, fold) in self.folds.iter().enumerate() {
            for &r in &fold.validation_rows {
                if r < rows {
                    out[r] = f;
                }
            }
        }
        out
    }
}

/// Deterministic k-way split of `0..n` after a seeded shuffle.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, NnError> {
    if n == 0 {
        return Err(NnError::EmptyData);
    }
    if k < 2 || k > n {
        return Err(NnError::BadFoldCount(k));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, &[tag::FOLDS]));
    Ok((0..k)
        .map(|f| {
            let mut rows = order[f * n / k..(f + 1) * n / k].to_vec();
            rows.sort_unstable();
            rows
        })
        .collect())
}

/// Train `init` with k-fold cross-validation. Each fold starts from `init`,
/// reshuffles its training rows every epoch from a `(seed, fold, epoch)`
/// stream, and returns the weights of its best validation epoch.
pub fn train<N: Network, O: Objective>(
    init: &N,
    x: &Array2<f64>,
    objective: &O,
    cfg: &TrainConfig,
) -> Result<CrossValidated<N>, NnError> {
    cfg.sgd.validate()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(NnError::BadHyperparameter(
            "epochs and batch size must be positive".into(),
        ));
    }
    if x.ncols() != init.input_dim() {
        return Err(NnError::ShapeMismatch {
            expected: (x.nrows(), init.input_dim()),
            found: x.dim(),
        });
    }
    let splits = assign_folds(x.nrows(), cfg.folds, cfg.seed)?;
    let folds = (0..splits.len())
        .into_par_iter()
        .map(|f| {
            let validation_rows = splits[f].clone();
            let train_rows: Vec<usize> = splits
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            let (net, history) = fit_fold(
                init,
                x,
                objective,
                cfg,
                &train_rows,
                &validation_rows,
                f as u64,
            )?;
            Ok(FoldModel {
                net,
                validation_rows,
                history,
            })
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    Ok(CrossValidated { folds })
}

fn batches(rows: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = rows.chunks(size).collect();
    // A single-row batch has no batch statistics; fold it into its neighbour.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = rows.len() - 1 - out.last().map_or(0, |b| b.len());
        *out.last_mut().expect("at least one batch") = &rows[start..];
    }
    out
}

fn fit_fold<N: Network, O: Objective>(
    init: &N,
    x: &Array2<f64>,
    objective: &O,
    cfg: &TrainConfig,
    train_rows: &[usize],
    validation_rows: &[usize],
    fold: u64,
) -> Result<(N, FoldHistory), NnError> {
    let mut net = init.clone();
    let mut sgd = SgdState::new(cfg.sgd, &net.param_slices());
    let x_val = x.select(Axis(0), validation_rows);
    let mut best = (f64::INFINITY, net.clone(), 0);
    let mut history = FoldHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        validation_metric: Vec::with_capacity(cfg.epochs),
        learning_rates: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut order = train_rows.to_vec();
    for epoch in 0..cfg.epochs {
        let lr = cfg.sgd.learning_rate_at(epoch);
        let mut rng = stream_rng(cfg.seed, &[tag::EPOCH, fold, epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches(&order, cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let (outs, cache) = net.forward_heads(xb.view(), Mode::Train, &mut rng)?;
            let (loss, out_grads) = objective.loss(&outs, batch)?;
            let grads = net.backward_heads(&cache, &out_grads)?;
            sgd.step(net.param_slices_mut(), &grads, lr);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        if !loss_sum.is_finite() {
            return Err(NnError::Diverged {
                fold: fold as usize,
                epoch,
            });
        }
        let metric = if validation_rows.is_empty() {
            loss_sum / seen.max(1) as f64
        } else {
            objective.validation_metric(&net.predict_heads(x_val.view())?, validation_rows)
        };
        history.train_loss.push(loss_sum / seen.max(1) as f64);
        history.validation_metric.push(metric);
        history.learning_rates.push(lr);
        if metric < best.0 {
            best = (metric, net.clone(), epoch);
        }
        if let Some(p) = cfg.patience {
            if epoch - best.2 >= p {
                break;
            }
        }
    }
    history.best_epoch = best.2;
    Ok((best.1, history))
}
