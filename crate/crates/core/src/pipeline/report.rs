use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::{
    pair_records, CandidateId, DataError, Dimension, GroupLabel, ProtectedAttribute,
    ScoredPopulation,
};
use crate::io::CounterfactualScores;
use crate::metrics::{
    di_sweep, disparate_impact, mutual_information, select_threshold, select_top_n, shift_stats,
    MiEstimator, ShiftStats, SweepFamily, SweepPoint, UnawarenessVerdict,
};
use crate::models::GroupEvalTable;

/// Where a report came from. Only `generated_at` varies between identical
/// runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub generated_at: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            tool: "counterfair".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            seed,
            generated_at: None,
        }
    }

    pub fn stamped(mut self) -> Self {
        self.generated_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub top_n: usize,
    pub threshold: f64,
    pub sweep_n_step: usize,
    pub sweep_threshold_step: f64,
    pub mi_estimator: MiEstimator,
    pub epsilon: f64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        super::ExperimentConfig::default().settings()
    }
}

impl AuditSettings {
    fn top_n_family(&self) -> SweepFamily {
        SweepFamily::TopN {
            start: 10,
            step: self.sweep_n_step,
        }
    }

    fn threshold_family(&self) -> SweepFamily {
        SweepFamily::Threshold {
            step: self.sweep_threshold_step,
        }
    }
}

/// One value per selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleValues {
    #[serde(with = "crate::io::ratio")]
    pub top_n: f64,
    #[serde(with = "crate::io::ratio")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweeps {
    pub top_n: Vec<SweepPoint>,
    pub threshold: Vec<SweepPoint>,
}

/// Interview-score independence and selection parity for one attribute of
/// one scored population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub mi: f64,
    pub di: RuleValues,
    pub sweeps: Sweeps,
}

/// Metrics before and after editing one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAudit {
    pub before: SourceMetrics,
    pub after: Option<SourceMetrics>,
    pub shift: Option<ShiftStats>,
}

/// Everything computable from paired score files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    /// Valid members of the original population.
    pub population: usize,
    pub attributes: BTreeMap<ProtectedAttribute, AttributeAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Five-number summary of one dimension within one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub attribute: ProtectedAttribute,
    pub group: GroupLabel,
    pub dimension: Dimension,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Group sizes before and after discarding rejected inversions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub size: usize,
    pub valid: usize,
    pub counts: BTreeMap<GroupLabel, usize>,
    pub valid_counts: BTreeMap<GroupLabel, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Report {
    pub group_eval: GroupEvalTable,
    /// Interview score per group, keyed by source (`dataset`, `model`).
    pub interview: BTreeMap<String, BTreeMap<GroupLabel, MeanSd>>,
    pub boxes: BTreeMap<String, Vec<BoxRow>>,
    pub baseline: BTreeMap<String, BTreeMap<ProtectedAttribute, SourceMetrics>>,
    pub unawareness: UnawarenessVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub positive_label: GroupLabel,
    pub offset: f64,
    /// Share of training codes on the side of their label.
    pub training_accuracy: f64,
    pub training_codes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Report {
    pub rejected_inversions: usize,
    pub rejection_threshold: f64,
    pub median_residual: f64,
    pub boundaries: BTreeMap<ProtectedAttribute, BoundarySummary>,
    /// The scoring model evaluated on reconstructed observations.
    pub group_eval_reconstructed: GroupEvalTable,
    pub interview: BTreeMap<String, BTreeMap<GroupLabel, MeanSd>>,
    pub boxes: BTreeMap<String, Vec<BoxRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3Report {
    pub accuracy: BTreeMap<ProtectedAttribute, f64>,
    pub recall_original: BTreeMap<GroupLabel, f64>,
    /// Only edited classes have an entry.
    pub recall_counterfactual: BTreeMap<GroupLabel, f64>,
    pub counterfactual_count: BTreeMap<GroupLabel, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub provenance: Provenance,
    pub settings: AuditSettings,
    pub population: Option<PopulationSummary>,
    pub experiment1: Option<Exp1Report>,
    pub experiment2: Option<Exp2Report>,
    pub counterfactual: Option<MetricsBlock>,
    pub experiment3: Option<Exp3Report>,
}

impl AuditReport {
    pub fn new(provenance: Provenance, settings: AuditSettings) -> Self {
        Self {
            provenance,
            settings,
            population: None,
            experiment1: None,
            experiment2: None,
            counterfactual: None,
            experiment3: None,
        }
    }

    /// Canonical JSON with the timestamp removed, for comparing runs.
    pub fn without_timestamp(&self) -> Self {
        let mut r = self.clone();
        r.provenance.generated_at = None;
        r
    }
}

/// Attributes with labeled members on both sides of the protected split.
pub(crate) fn auditable(pop: &ScoredPopulation, attr: ProtectedAttribute) -> bool {
    let mut sides = [false; 2];
    for m in pop.members() {
        if let Some(p) = m.demographics.is_protected(attr) {
            sides[usize::from(p)] = true;
        }
    }
    sides == [true, true]
}

pub(crate) fn source_metrics(
    pop: &ScoredPopulation,
    attr: ProtectedAttribute,
    s: &AuditSettings,
) -> Result<SourceMetrics, PipelineError> {
    let (y, a): (Vec<f64>, Vec<GroupLabel>) = pop
        .members()
        .iter()
        .filter_map(|m| m.demographics.get(attr).map(|g| (m.scores.i, g)))
        .unzip();
    let mi = mutual_information(&y, &a, s.mi_estimator)?;
    let top = disparate_impact(&select_top_n(pop, s.top_n), pop, attr)?;
    let thr = disparate_impact(&select_threshold(pop, s.threshold)?, pop, attr)?;
    Ok(SourceMetrics {
        mi,
        di: RuleValues {
            top_n: top,
            threshold: thr,
        },
        sweeps: Sweeps {
            top_n: di_sweep(pop, attr, s.top_n_family())?,
            threshold: di_sweep(pop, attr, s.threshold_family())?,
        },
    })
}

/// The paired-score metric block. Only valid members of `orig` are
/// audited; counterfactual rows of invalid members are ignored, rows of
/// unknown candidates are an error.
pub fn audit_scores(
    orig: &ScoredPopulation,
    cf: &CounterfactualScores,
    settings: &AuditSettings,
) -> Result<MetricsBlock, PipelineError> {
    let pop = orig.valid_only();
    let mut attributes = BTreeMap::new();
    for attr in ProtectedAttribute::ALL {
        let edited: BTreeMap<CandidateId, _> = match cf.get(&attr) {
            Some(rows) => {
                if let Some(&id) = rows.keys().find(|&&id| orig.get(id).is_none()) {
                    return Err(DataError::UnknownCandidate(id).into());
                }
                rows.iter()
                    .filter(|(&id, _)| pop.get(id).is_some())
                    .map(|(&id, &s)| (id, s))
                    .collect()
            }
            None => BTreeMap::new(),
        };
        if !auditable(&pop, attr) {
            continue;
        }
        let before = source_metrics(&pop, attr, settings)?;
        let (after, shift) = if edited.is_empty() {
            (None, None)
        } else {
            let records = pair_records(&pop, &edited, attr)?;
            let post = pop.with_replaced_scores(&edited);
            (
                Some(source_metrics(&post, attr, settings)?),
                Some(shift_stats(&records, settings.epsilon)?),
            )
        };
        attributes.insert(
            attr,
            AttributeAudit {
                before,
                after,
                shift,
            },
        );
    }
    Ok(MetricsBlock {
        population: pop.len(),
        attributes,
    })
}

pub(crate) fn interview_by_group(pop: &ScoredPopulation) -> BTreeMap<GroupLabel, MeanSd> {
    let mut groups: BTreeMap<GroupLabel, Vec<f64>> = BTreeMap::new();
    for m in pop.members() {
        for attr in ProtectedAttribute::ALL {
            if let Some(g) = m.demographics.get(attr) {
                groups.entry(g).or_default().push(m.scores.i);
            }
        }
    }
    groups
        .into_iter()
        .map(|(g, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (
                g,
                MeanSd {
                    count: v.len(),
                    mean,
                    sd: var.sqrt(),
                },
            )
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box-plot summaries per labeled group and dimension.
pub fn box_stats(pop: &ScoredPopulation) -> Vec<BoxRow> {
    let mut rows = Vec::new();
    for attr in ProtectedAttribute::ALL {
        for &g in attr.labels() {
            let members: Vec<_> = pop
                .members()
                .iter()
                .filter(|m| m.demographics.get(attr) == Some(g))
                .collect();
            if members.is_empty() {
                continue;
            }
            for d in Dimension::ALL {
                let mut v: Vec<f64> = members.iter().map(|m| m.scores.get(d)).collect();
                v.sort_by(f64::total_cmp);
                rows.push(BoxRow {
                    attribute: attr,
                    group: g,
                    dimension: d,
                    min: v[0],
                    q1: quantile(&v, 0.25),
                    median: quantile(&v, 0.5),
                    q3: quantile(&v, 0.75),
                    max: v[v.len() - 1],
                });
            }
        }
    }
    rows
}
