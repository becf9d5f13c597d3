//! Trainable maps that are equivariant for any choice of weights:
//! intertwiner-basis linear layers for arbitrary finite-group representation
//! pairs, and p4/p4m group convolutions (lifting and group-to-group).

mod gconv;
mod intertwiner;
mod linear;

pub use gconv::{transform_image, transform_lifted, Fiber, GroupConv, LiftConv};
pub use intertwiner::{brute_force_hom_dim, solve_cached, solve_intertwiner_basis, IntertwinerBasis};
pub use linear::{EquivLinear, EquivMlp};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EquivError {
    #[error("hidden representation {index} ('{label}') is not a permutation representation; pointwise ReLU would break equivariance")]
    NonPermutationHidden { index: usize, label: String },
    #[error("representations belong to different groups: '{left}' vs '{right}'")]
    GroupMismatch { left: String, right: String },
    #[error("equivariant MLP needs at least two representations (in and out)")]
    TooFewLayers,
}
