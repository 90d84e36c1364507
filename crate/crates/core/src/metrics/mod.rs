//! Bias quantification: mutual information, selection rules and disparate
//! impact, paired counterfactual shifts and the unawareness check.

mod mi;
mod selection;
mod shift;
mod unawareness;

pub use mi::{mutual_information, MiEstimator, MIN_MI_SAMPLES};
pub use selection::{
    di_from_rates, di_sweep, disparate_impact, disparate_impact_between, select, select_threshold,
    select_top_n, SelectionOutcome, SelectionRule, SweepFamily, SweepPoint, ADVERSE_IMPACT,
};
pub use shift::{shift_stats, DimensionShift, GroupShift, ShiftStats, DEFAULT_EPSILON};
pub use unawareness::{assert_unawareness, ProbeConfig, ProbeResult, UnawarenessVerdict};

use thiserror::Error;

use crate::data::ProtectedAttribute;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("need at least {MIN_MI_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("length mismatch: {0} scores, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("a {0} comparison group is empty")]
    EmptyGroup(ProtectedAttribute),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("bad estimator parameter: {0}")]
    BadEstimator(String),
    #[error("no records")]
    Empty,
}
