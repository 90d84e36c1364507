//! Multi-task predictors: the OCEAN + interview regressor, the
//! protected-attribute classifier, and their group-wise evaluation.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    CandidateId, Dataset, Demographics, Dimension, GroupLabel, ProtectedAttribute, ScoreVector,
};
use crate::nn::{
    self, Activation, ClassWeights, CrossEntropyObjective, CrossValidated, DenseNet, ForwardCache,
    Gradients, LayerSpec, Mode, MseObjective, Network, NnError, TrainConfig,
};
use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("candidate {0} has no ground-truth labels")]
    MissingLabels(CandidateId),
    #[error("no labels at all for the {0} head")]
    NoLabels(ProtectedAttribute),
    #[error("the {0} head sees a single class; it cannot be trained")]
    DegenerateHead(ProtectedAttribute),
    #[error("candidate {0} is not in the dataset")]
    UnknownCandidate(CandidateId),
    #[error("model has no head for {0}")]
    NoHead(ProtectedAttribute),
}

/// A shared trunk feeding several task heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskNet {
    pub trunk: DenseNet,
    pub heads: Vec<(String, DenseNet)>,
}

#[derive(Debug, Clone)]
pub struct MultiTaskCache {
    trunk: ForwardCache,
    heads: Vec<ForwardCache>,
}

impl MultiTaskNet {
    pub fn new(
        inputs: usize,
        trunk: &[LayerSpec],
        heads: &[(&str, Vec<LayerSpec>)],
        seed: u64,
    ) -> Result<Self, NnError> {
        let trunk_net = DenseNet::new(inputs, trunk, derive_seed(seed, &[0]))?;
        let width = trunk_net.output_dim();
        let heads = heads
            .iter()
            .enumerate()
            .map(|(k, (name, specs))| {
                DenseNet::new(width, specs, derive_seed(seed, &[1 + k as u64]))
                    .map(|h| (name.to_string(), h))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            trunk: trunk_net,
            heads,
        })
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|(n, _)| n == name)
    }

    pub fn zero_parameters(&mut self) {
        self.trunk.zero_parameters();
        for (_, h) in &mut self.heads {
            h.zero_parameters();
        }
    }
}

impl Network for MultiTaskNet {
    type Cache = MultiTaskCache;

    fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn forward_heads(
        &mut self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Vec<Array2<f64>>, MultiTaskCache), NnError> {
        let (shared, trunk) = self.trunk.forward(x, mode, rng)?;
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut heads = Vec::with_capacity(self.heads.len());
        for (_, h) in &mut self.heads {
            let (y, c) = h.forward(shared.view(), mode, rng)?;
            outs.push(y);
            heads.push(c);
        }
        Ok((outs, MultiTaskCache { trunk, heads }))
    }

    fn backward_heads(
        &self,
        cache: &MultiTaskCache,
        output_grads: &[Array2<f64>],
    ) -> Result<Gradients, NnError> {
        if output_grads.len() != self.heads.len() || cache.heads.len() != self.heads.len() {
            return Err(NnError::StaleCache);
        }
        let mut head_grads = Vec::with_capacity(self.heads.len());
        let mut shared_grad: Option<Array2<f64>> = None;
        for (((_, h), c), g) in self.heads.iter().zip(&cache.heads).zip(output_grads) {
            let (pg, dx) = h.backward(c, g.view())?;
            head_grads.push(pg);
            shared_grad = Some(match shared_grad {
                Some(acc) => acc + dx,
                None => dx,
            });
        }
        let shared_grad = shared_grad.ok_or(NnError::StaleCache)?;
        let (mut grads, _) = self.trunk.backward(&cache.trunk, shared_grad.view())?;
        for g in head_grads {
            grads.extend(g);
        }
        Ok(grads)
    }

    fn predict_heads(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>, NnError> {
        let shared = self.trunk.predict(x)?;
        self.heads
            .iter()
            .map(|(_, h)| h.predict(shared.view()))
            .collect()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = self.trunk.param_slices();
        for (_, h) in &self.heads {
            out.extend(h.param_slices());
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.trunk.param_slices_mut();
        for (_, h) in &mut self.heads {
            out.extend(h.param_slices_mut());
        }
        out
    }
}

/// Architecture and training hyperparameters of a multi-task model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub trunk_widths: Vec<usize>,
    pub head_hidden: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            trunk_widths: vec![64, 64],
            head_hidden: 32,
            dropout: 0.2,
            train: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelHyper {
    fn trunk_specs(&self) -> Vec<LayerSpec> {
        self.trunk_widths
            .iter()
            .map(|&w| LayerSpec::hidden(w, self.dropout))
            .collect()
    }

    fn head_specs(&self, outputs: usize, activation: Activation) -> Vec<LayerSpec> {
        vec![
            LayerSpec::hidden(self.head_hidden, self.dropout),
            LayerSpec::output(outputs, activation),
        ]
    }

    /// The six-head OCEAN + interview regressor.
    pub fn oceani_net(&self, inputs: usize) -> Result<MultiTaskNet, NnError> {
        let heads: Vec<_> = Dimension::ALL
            .iter()
            .map(|d| (d.code(), self.head_specs(1, Activation::Sigmoid)))
            .collect();
        MultiTaskNet::new(inputs, &self.trunk_specs(), &heads, self.init_seed)
    }

    /// The three-head gender / ethnicity / age classifier (logit outputs).
    pub fn attribute_net(&self, inputs: usize) -> Result<MultiTaskNet, NnError> {
        let heads: Vec<_> = ProtectedAttribute::ALL
            .iter()
            .map(|a| {
                (
                    a.code(),
                    self.head_specs(a.labels().len(), Activation::Identity),
                )
            })
            .collect();
        MultiTaskNet::new(inputs, &self.trunk_specs(), &heads, self.init_seed)
    }
}

/// A k-fold trained model plus the fold that held out each candidate, so
/// every training candidate can be scored by a model that never saw it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub cv: CrossValidated<MultiTaskNet>,
    pub holdout: BTreeMap<CandidateId, usize>,
}

impl FittedModel {
    fn new(cv: CrossValidated<MultiTaskNet>, ds: &Dataset) -> Self {
        let folds = cv.fold_of_rows(ds.len());
        let holdout = ds.iter().map(|c| c.id).zip(folds).collect();
        Self { cv, holdout }
    }

    pub fn fold_net(&self, fold: usize) -> &MultiTaskNet {
        &self.cv.folds[fold].net
    }

    /// Head outputs per candidate: the held-out fold model for training
    /// candidates, the mean over folds for unseen ids.
    fn head_outputs(&self, ds: &Dataset) -> Result<Vec<Vec<Vec<f64>>>, NnError> {
        let x = ds.feature_matrix();
        let per_fold: Vec<Vec<Array2<f64>>> = self
            .cv
            .folds
            .iter()
            .map(|f| f.net.predict_heads(x.view()))
            .collect::<Result<_, _>>()?;
        Ok(ds
            .iter()
            .enumerate()
            .map(|(r, c)| {
                let heads = per_fold[0].len();
                (0..heads)
                    .map(|h| match self.holdout.get(&c.id) {
                        Some(&f) => per_fold[f][h].row(r).to_vec(),
                        None => {
                            let k = per_fold.len() as f64;
                            let width = per_fold[0][h].ncols();
                            (0..width)
                                .map(|j| per_fold.iter().map(|p| p[h][[r, j]]).sum::<f64>() / k)
                                .collect()
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// OCEAN + interview scores from the held-out fold models.
    pub fn score_out_of_fold(
        &self,
        ds: &Dataset,
    ) -> Result<BTreeMap<CandidateId, ScoreVector>, ModelError> {
        let outs = self.head_outputs(ds)?;
        Ok(ds
            .iter()
            .zip(outs)
            .map(|(c, heads)| {
                let v: [f64; 6] = std::array::from_fn(|k| heads[k][0]);
                (c.id, ScoreVector::from_array(v))
            })
            .collect())
    }

    /// Predicted protected-attribute labels from the held-out fold models.
    pub fn classify_out_of_fold(
        &self,
        ds: &Dataset,
    ) -> Result<BTreeMap<CandidateId, Demographics>, ModelError> {
        let outs = self.head_outputs(ds)?;
        Ok(ds
            .iter()
            .zip(outs)
            .map(|(c, heads)| (c.id, decode_attributes(&heads)))
            .collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

fn decode_attributes(heads: &[Vec<f64>]) -> Demographics {
    let mut d = Demographics::default();
    for (attr, logits) in ProtectedAttribute::ALL.iter().zip(heads) {
        d.set(*attr, GroupLabel::from_class_index(*attr, argmax(logits)));
    }
    d
}

/// Scores every candidate with one network (eval mode).
pub fn score_candidates(
    model: &MultiTaskNet,
    ds: &Dataset,
) -> Result<BTreeMap<CandidateId, ScoreVector>, ModelError> {
    let outs = model.predict_heads(ds.feature_matrix().view())?;
    Ok(ds
        .iter()
        .enumerate()
        .map(|(r, c)| {
            let v: [f64; 6] = std::array::from_fn(|k| outs[k][[r, 0]]);
            (c.id, ScoreVector::from_array(v))
        })
        .collect())
}

/// Predicted labels for every candidate with one network.
pub fn classify_candidates(
    model: &MultiTaskNet,
    ds: &Dataset,
) -> Result<BTreeMap<CandidateId, Demographics>, ModelError> {
    let outs = model.predict_heads(ds.feature_matrix().view())?;
    Ok(ds
        .iter()
        .enumerate()
        .map(|(r, c)| {
            let heads: Vec<Vec<f64>> = outs.iter().map(|o| o.row(r).to_vec()).collect();
            (c.id, decode_attributes(&heads))
        })
        .collect())
}

/// Train the OCEAN + interview regressor with k-fold cross-validation;
/// the loss is the mean of the six per-head MSEs.
pub fn fit_oceani(ds: &Dataset, hyper: &ModelHyper) -> Result<FittedModel, ModelError> {
    let mut targets = Array2::zeros((ds.len(), 6));
    for (r, c) in ds.iter().enumerate() {
        let t = c.truth.ok_or(ModelError::MissingLabels(c.id))?;
        for (k, v) in t.to_array().into_iter().enumerate() {
            targets[[r, k]] = v;
        }
    }
    let objective = MseObjective {
        targets: (0..6)
            .map(|k| targets.column(k).to_owned().insert_axis(Axis(1)))
            .collect(),
    };
    let init = hyper.oceani_net(ds.feature_dim())?;
    let cv = nn::train(&init, &ds.feature_matrix(), &objective, &hyper.train)?;
    Ok(FittedModel::new(cv, ds))
}

/// Class weights per attribute head: equal for gender, majority-to-class
/// count ratios for ethnicity and age.
pub fn attribute_class_weights(ds: &Dataset, attr: ProtectedAttribute) -> ClassWeights {
    let labels = attr.labels();
    if attr == ProtectedAttribute::Gender {
        return ClassWeights::ones(labels.len());
    }
    let mut counts = vec![0usize; labels.len()];
    for c in ds.iter() {
        if let Some(l) = c.demographics.get(attr) {
            counts[l.class_index()] += 1;
        }
    }
    ClassWeights::majority_ratio(&counts)
}

pub fn attribute_objective(ds: &Dataset) -> Result<CrossEntropyObjective, ModelError> {
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for attr in ProtectedAttribute::ALL {
        let t: Vec<Option<usize>> = ds
            .iter()
            .map(|c| c.demographics.get(attr).map(GroupLabel::class_index))
            .collect();
        let mut present: Vec<usize> = t.iter().flatten().copied().collect();
        present.sort_unstable();
        present.dedup();
        match present.len() {
            0 => return Err(ModelError::NoLabels(attr)),
            1 => return Err(ModelError::DegenerateHead(attr)),
            _ => {}
        }
        targets.push(t);
        weights.push(attribute_class_weights(ds, attr));
    }
    Ok(CrossEntropyObjective { targets, weights })
}

/// Train the protected-attribute classifier. Rows without an age label are
/// masked out of the age head only.
pub fn fit_pattribute(ds: &Dataset, hyper: &ModelHyper) -> Result<FittedModel, ModelError> {
    let objective = attribute_objective(ds)?;
    let init = hyper.attribute_net(ds.feature_dim())?;
    let cv = nn::train(&init, &ds.feature_matrix(), &objective, &hyper.train)?;
    Ok(FittedModel::new(cv, ds))
}

/// `1 - MAE` per dimension and demographic group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvalTable {
    /// Per group, one cell per dimension (O, C, E, A, N, I).
    pub cells: BTreeMap<GroupLabel, [f64; 6]>,
    pub overall: [f64; 6],
    pub group_size: BTreeMap<GroupLabel, usize>,
    pub size: usize,
}

impl GroupEvalTable {
    /// Mean of a group's six cells.
    pub fn group_average(&self, g: GroupLabel) -> Option<f64> {
        self.cells.get(&g).map(|c| c.iter().sum::<f64>() / 6.0)
    }

    pub fn overall_average(&self) -> f64 {
        self.overall.iter().sum::<f64>() / 6.0
    }
}

/// Group-wise accuracy table over every labeled group of every attribute.
pub fn evaluate_by_group(
    predictions: &BTreeMap<CandidateId, ScoreVector>,
    ds: &Dataset,
) -> Result<GroupEvalTable, ModelError> {
    let mut abs_sum: BTreeMap<GroupLabel, [f64; 6]> = BTreeMap::new();
    let mut counts: BTreeMap<GroupLabel, usize> = BTreeMap::new();
    let mut total = [0.0; 6];
    for (&id, pred) in predictions {
        let c = ds.get(id).ok_or(ModelError::UnknownCandidate(id))?;
        let truth = c.truth.ok_or(ModelError::MissingLabels(id))?;
        let err: [f64; 6] =
            std::array::from_fn(|k| (pred.to_array()[k] - truth.to_array()[k]).abs());
        for k in 0..6 {
            total[k] += err[k];
        }
        for attr in ProtectedAttribute::ALL {
            if let Some(g) = c.demographics.get(attr) {
                let acc = abs_sum.entry(g).or_insert([0.0; 6]);
                for k in 0..6 {
                    acc[k] += err[k];
                }
                *counts.entry(g).or_default() += 1;
            }
        }
    }
    let n = predictions.len();
    let cells = abs_sum
        .into_iter()
        .map(|(g, s)| {
            let m = counts[&g] as f64;
            (g, s.map(|v| 1.0 - v / m))
        })
        .collect();
    Ok(GroupEvalTable {
        cells,
        overall: total.map(|v| if n == 0 { 1.0 } else { 1.0 - v / n as f64 }),
        group_size: counts,
        size: n,
    })
}

/// Recall of each actual class of `attr`; classes without members are absent.
pub fn recall_per_class(
    predicted: &BTreeMap<CandidateId, Demographics>,
    ds: &Dataset,
    attr: ProtectedAttribute,
) -> BTreeMap<GroupLabel, f64> {
    let mut hits: BTreeMap<GroupLabel, (usize, usize)> = BTreeMap::new();
    for c in ds.iter() {
        let (Some(actual), Some(pred)) = (c.demographics.get(attr), predicted.get(&c.id)) else {
            continue;
        };
        let e = hits.entry(actual).or_default();
        e.1 += 1;
        if pred.get(attr) == Some(actual) {
            e.0 += 1;
        }
    }
    hits.into_iter()
        .map(|(g, (tp, n))| (g, tp as f64 / n as f64))
        .collect()
}

/// Fraction of labeled candidates whose `attr` is predicted correctly.
pub fn accuracy(
    predicted: &BTreeMap<CandidateId, Demographics>,
    ds: &Dataset,
    attr: ProtectedAttribute,
) -> f64 {
    let mut n = 0usize;
    let mut ok = 0usize;
    for c in ds.iter() {
        if let (Some(a), Some(p)) = (c.demographics.get(attr), predicted.get(&c.id)) {
            n += 1;
            ok += usize::from(p.get(attr) == Some(a));
        }
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}
