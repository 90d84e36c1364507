//! The three audit experiments on synthetic populations, and black-box
//! audits from score files or an external scoring command.

mod blackbox;
mod experiments;
mod report;

pub use blackbox::{audit_blackbox, audit_blackbox_files, score_via_external, ExternalScorer};
pub use experiments::{
    learn_boundaries, run_audit, run_experiment1, run_experiment2, run_experiment3,
    score_counterfactuals, Exp1Artifacts, Exp2Artifacts, ScoredCounterfactuals, StageCache,
};
pub use report::{
    audit_scores, box_stats, AttributeAudit, AuditReport, AuditSettings, BoundarySummary, BoxRow,
    Exp1Report, Exp2Report, Exp3Report, MeanSd, MetricsBlock, PopulationSummary, Provenance,
    RuleValues, SourceMetrics, Sweeps,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{CandidateId, DataError, ProtectedAttribute};
use crate::io::IoError;
use crate::latent::{BiasConfig, BoundaryOpts, CounterfactualOpts, EditSpec, LatentError};
use crate::metrics::{MetricError, MiEstimator, ProbeConfig, DEFAULT_EPSILON};
use crate::models::{ModelError, ModelHyper};
use crate::nn::{NnError, TrainConfig};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("external scorer exited with code {0:?}")]
    ExternalFailure(Option<i32>),
    #[error("external scorer protocol error: {0}")]
    ProtocolError(String),
    #[error("candidate {0} missing from the scored population")]
    MissingScore(CandidateId),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    /// True for failures of numeric routines, as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PipelineError::Latent(
                LatentError::IllConditioned(_)
                    | LatentError::DidNotConverge(_)
                    | LatentError::DegenerateBoundary
            ) | PipelineError::Model(ModelError::Nn(NnError::Diverged { .. }))
        )
    }
}

/// Fields whose JSON value is a keyed map or an enum. An override
/// replaces these whole instead of merging key by key.
const REPLACED_WHOLE: [&str; 4] = [
    "mi_estimator",
    "edit.mode",
    "population.proportions",
    "population.offsets",
];

fn merge(base: &mut serde_json::Value, overrides: serde_json::Value, path: &str) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o))
            if !REPLACED_WHOLE.contains(&path) =>
        {
            for (k, v) in o {
                let child = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &child),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Selection and metric parameters shared by every audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionDefaults {
    pub top_n: usize,
    pub threshold: f64,
    /// Spacing of the top-N sweep grid (which starts at 10).
    pub sweep_n_step: usize,
    pub sweep_threshold_step: f64,
}

impl Default for SelectionDefaults {
    fn default() -> Self {
        Self {
            top_n: 200,
            threshold: 0.75,
            sweep_n_step: 10,
            sweep_threshold_step: 0.05,
        }
    }
}

/// Everything that determines an audit run. Sub-configurations carry their
/// own seed fields, but those are overwritten by streams derived from
/// `seed` when the run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub population: BiasConfig,
    pub oceani_model: ModelHyper,
    pub attribute_model: ModelHyper,
    pub counterfactual: CounterfactualOpts,
    pub boundary: BoundaryOpts,
    pub edit: EditSpec,
    pub selection: SelectionDefaults,
    pub mi_estimator: MiEstimator,
    pub epsilon: f64,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelHyper {
            train: TrainConfig {
                sgd: crate::nn::SgdConfig {
                    learning_rate: 0.01,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        };
        Self {
            seed: 2024,
            population: BiasConfig::default(),
            oceani_model: model.clone(),
            attribute_model: model,
            counterfactual: CounterfactualOpts::default(),
            boundary: BoundaryOpts::default(),
            edit: EditSpec::default(),
            selection: SelectionDefaults::default(),
            mi_estimator: MiEstimator::default(),
            epsilon: DEFAULT_EPSILON,
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The default configuration without injected label bias.
    pub fn unbiased() -> Self {
        Self {
            population: BiasConfig::unbiased(),
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Copy with every sub-seed derived from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.population.seed = derive_seed(s, &[tag::POPULATION]);
        c.oceani_model.train.seed = derive_seed(s, &[tag::FOLDS, 0]);
        c.oceani_model.init_seed = derive_seed(s, &[tag::INIT, 0]);
        c.attribute_model.train.seed = derive_seed(s, &[tag::FOLDS, 1]);
        c.attribute_model.init_seed = derive_seed(s, &[tag::INIT, 1]);
        c.counterfactual.inversion.seed = derive_seed(s, &[tag::INVERSION]);
        c.probe.seed = derive_seed(s, &[tag::PROBE]);
        c
    }

    pub fn generator_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag::GENERATOR])
    }

    pub fn settings(&self) -> AuditSettings {
        AuditSettings {
            top_n: self.selection.top_n,
            threshold: self.selection.threshold,
            sweep_n_step: self.selection.sweep_n_step,
            sweep_threshold_step: self.selection.sweep_threshold_step,
            mi_estimator: self.mi_estimator,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.population.validate()?;
        self.edit.validate()?;
        let s = &self.selection;
        if !(0.0..=1.0).contains(&s.threshold) {
            return Err(MetricError::BadThreshold(s.threshold).into());
        }
        if s.sweep_n_step == 0 || !(s.sweep_threshold_step > 0.0 && s.sweep_threshold_step <= 1.0) {
            return Err(PipelineError::Config("sweep steps must be positive".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(PipelineError::Config("epsilon must be non-negative".into()));
        }
        Ok(())
    }

    /// Parse a JSON configuration in which every omitted field, at any
    /// depth, keeps its value from `ExperimentConfig::default()`.
    pub fn from_json_overrides(text: &str) -> Result<Self, PipelineError> {
        let overrides: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if !overrides.is_object() {
            return Err(PipelineError::Config(
                "configuration must be a JSON object".into(),
            ));
        }
        let mut merged = serde_json::to_value(Self::default()).expect("config serializes");
        merge(&mut merged, overrides, "");
        serde_json::from_value(merged).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// The attributes audited, in report order.
pub const AUDITED: [ProtectedAttribute; 3] = ProtectedAttribute::ALL;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_overrides_keep_experiment_defaults() {
        let cfg = ExperimentConfig::from_json_overrides(
            r#"{"seed": 9, "oceani_model": {"train": {"epochs": 3}}, "mi_estimator": {"Knn": 4}}"#,
        )
        .unwrap();
        let default = ExperimentConfig::default();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.oceani_model.train.epochs, 3);
        assert_eq!(
            cfg.oceani_model.train.sgd.learning_rate,
            default.oceani_model.train.sgd.learning_rate
        );
        assert_eq!(cfg.attribute_model, default.attribute_model);
        assert_eq!(cfg.mi_estimator, MiEstimator::Knn(4));
    }

    #[test]
    fn keyed_maps_are_replaced_whole() {
        let cfg =
            ExperimentConfig::from_json_overrides(r#"{"population": {"offsets": {}}}"#).unwrap();
        assert!(cfg.population.offsets.is_empty());
        assert_eq!(cfg.population.population, BiasConfig::default().population);
    }

    #[test]
    fn malformed_configs_are_rejected() {
        for text in [
            "[1]",
            "{\"seed\": -1}",
            "{\"population\": {\"population\": \"many\"}}",
            "{",
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_json_overrides(text),
                    Err(PipelineError::Config(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = ExperimentConfig::default();
        let b = a.clone().with_seed(a.seed + 1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
    }
}
