//! Finite groups, their orthogonal matrix representations, decomposition
//! into real irreducibles, and SO(3) utilities.

mod finite;
mod irrep;
mod rep;
mod so3;

pub use finite::{direct_product, make_cyclic, make_dihedral, make_symmetric, permutations, FiniteGroup};
pub use irrep::{decompose_irreps, IrrepBlock, IrrepDecomposition};
pub use rep::{
    rep_box_product, rep_direct_sum, rep_flip, rep_permutation, rep_regular, rep_std, rep_trivial,
    Representation,
};
pub use so3::{gram_schmidt_frame, Axis, Rotation3};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("parameter {value} outside supported range for {what}")]
    OutOfRange { what: &'static str, value: usize },
    #[error("{op} unsupported for group '{group}'")]
    Unsupported { op: &'static str, group: String },
    #[error("representations belong to different groups: '{left}' vs '{right}'")]
    GroupMismatch { left: String, right: String },
    #[error("invalid group table: {0}")]
    InvalidTable(String),
    #[error("invalid representation '{label}': {reason} (deviation {deviation:.3e})")]
    InvalidRepresentation { label: String, reason: &'static str, deviation: f64 },
    #[error("degenerate frame inputs: {0}")]
    DegenerateFrame(String),
    #[error("rotation matrix invalid: {reason} (deviation {deviation:.3e})")]
    InvalidRotation { reason: &'static str, deviation: f64 },
    #[error("irrep decomposition failed to block-diagonalize: residual {residual:.3e}")]
    DecompositionResidual { residual: f64 },
}
