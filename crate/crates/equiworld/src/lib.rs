//! Equivariant world models with learned symmetric embeddings.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense arrays with tape-based reverse-mode differentiation
//!   and an Adam optimizer. Generic over the scalar type.
//! - [`groups`]: finite groups, orthogonal matrix representations, irrep
//!   decomposition, and SO(3) utilities including the orthonormal frame head.
//! - [`equivariant`]: intertwiner-basis linear layers and p4/p4m group
//!   convolutions — trainable maps that are equivariant for *any* weights.
//! - [`envs`]: deterministic synthetic environments with known hidden state
//!   and a known ground-truth group action, plus dataset generation.
//! - [`model`]: the embedding/encoder/transition meta-architecture, the
//!   contrastive objective, and the training loop.
//! - [`metrics`]: ranking metrics (H@k, MRR, HH@k, TH@k), equivariance
//!   errors (EE, DIE), and the limited-action error-bound verifier.
//! - [`config`] / [`cli`]: config-driven command harness and plotting.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod envs;
pub mod equivariant;
pub mod groups;
pub mod metrics;
pub mod model;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Scalar types the numeric core can run on. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Shorthand for lossy conversion from `f64` literals.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default scalar for all shipped models, environments, and metrics.
/// Equivariance identities are verified to 1e-10 and tighter, which rules
/// out `f32` for the stock pipeline.
pub type F = f64;

/// Dense array over the default scalar.
pub type Arr = autodiff::Array<F>;

/// Differentiation tape over the default scalar.
pub type Tape = autodiff::Tape<F>;
