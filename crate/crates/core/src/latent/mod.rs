//! Latent generators, synthetic populations, inversion, attribute
//! boundaries and counterfactual editing.

mod boundary;
mod edit;
mod generator;
mod invert;
mod population;

pub use boundary::{learn_boundary, Boundary, BoundaryOpts};
pub use edit::{
    conditioned_direction, counterfactualize, counterfactualize_inverted, edit, edit_along,
    invert_population, CounterfactualOpts, EditMode, EditSpec, InvertedPopulation,
};
pub use generator::{generate, Generator, LatentLayout, LinearGenerator, SyntheticFaceGenerator};
pub use invert::{invert, invert_best_effort, Inversion, InversionOpts};
pub use population::{
    sample_population, solve_thresholds, BiasConfig, PlantedAttribute, SampledPopulation,
};

use thiserror::Error;

use crate::data::{CandidateId, GroupLabel, ProtectedAttribute};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatentError {
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("generator Jacobian condition number {0:.1} exceeds the limit")]
    IllConditioned(f64),
    #[error("bad population proportions: {0}")]
    BadProportions(String),
    #[error("inversion did not converge (best residual {:.3e})", .0.residual)]
    DidNotConverge(Box<Inversion>),
    #[error("only one {0} class present")]
    SingleClass(ProtectedAttribute),
    #[error("label {0} does not belong to {1}")]
    WrongAttribute(GroupLabel, ProtectedAttribute),
    #[error("degenerate boundary direction")]
    DegenerateBoundary,
    #[error("edit lambda must be finite")]
    NonFiniteLambda,
    #[error("no boundary learned for {0}")]
    MissingBoundary(ProtectedAttribute),
    #[error("no latent code for candidate {0}")]
    MissingCode(CandidateId),
}
