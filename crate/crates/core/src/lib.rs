//! Counterfactual fairness auditing for multi-task personality/interview
//! scorers.
//!
//! The crate covers the whole audit loop at desk scale: sampling candidate
//! populations from a latent generator with injected label bias, training a
//! multi-task OCEAN + interview regressor and a protected-attribute
//! classifier, inverting observations back to latent codes, editing protected
//! attributes across learned latent boundaries, and quantifying bias with
//! mutual information, disparate impact and paired counterfactual shifts.
//! Every metric can also be computed from score files alone, which is how
//! black-box scorers are audited.

pub mod data;
pub mod io;
pub mod latent;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use data::{
    Candidate, CandidateId, Dataset, Demographics, Dimension, GroupLabel, PairedAuditRecord,
    ProtectedAttribute, ScoreVector, ScoredCandidate, ScoredPopulation,
};
