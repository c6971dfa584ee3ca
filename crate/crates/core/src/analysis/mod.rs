//! Executable counterparts of the convergence analysis: the orthogonal
//! disagreement reduction, transfer matrices and their decay statistics, and
//! a centralized reference solver for the optimum.

mod fit;
mod reduction;
mod reference;
mod transfer;

pub use fit::{fit_decay, summability, DecayFit, DecayVerdict, InnerSumCheck, SeriesCheck, SumChecks};
pub use reduction::{build_reduction, disagreement_state, gamma_norm, h_matrix, reduced_step, Reduction};
pub use reference::{centralized_reference, Provenance, Reference, SearchBox};
pub use transfer::{
    estimate_transfer_norm, spectral_norm, summability_pairs, transfer_matrix, window_average_max_eigenvalue,
    TransferEstimate, TransferPair,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("reduction needs at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("minimizer {x:?} lies on the boundary of the search box; enlarge it")]
    BoxTooSmall { x: Vec<f64> },
    #[error("grid search supports at most 3 dimensions, got {0}")]
    TooManyDimensions(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
