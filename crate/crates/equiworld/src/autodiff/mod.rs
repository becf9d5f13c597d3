//! Dense arrays with tape-based reverse-mode differentiation.
//!
//! [`Array`] is a value-semantic row-major buffer. [`Tape`] records primitive
//! operations on [`Var`] handles during the forward pass and replays their
//! adjoints in reverse. Environments and models rebuild the graph every
//! batch, so the tape is append-only and short-lived; trainable parameters
//! live outside it in a [`ParamStore`] and are re-bound as leaves per batch.

mod adam;
mod array;
pub mod gradcheck;
mod ops;
mod serialize;
mod tape;

pub use adam::{Adam, BoundParams, OptimError, ParamId, ParamStore};
pub use array::Array;
pub use ops::{conv1d_out_len, conv2d_out_dims, matmul as matmul_plain};
pub use serialize::{read_array, write_array};
pub use tape::{Gradients, Tape, Var};
