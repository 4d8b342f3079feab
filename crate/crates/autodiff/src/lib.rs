//! Minimal dense-tensor reverse-mode differentiation for small models.
//!
//! * [`Tensor`]: row-major `f64` storage.
//! * [`Tape`]: records primitives and runs the backward sweep.
//! * [`Adam`]: bias-corrected Adam updates.
//! * [`finite_diff_check`]: central-difference oracle for gradients.
//! * [`Checkpoint`]: bit-exact single-file serialisation.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use error::AutodiffError;
pub use gradcheck::{finite_diff_check, FdReport};
pub use tape::{Gradients, Segment, Tape, Var};
pub use tensor::Tensor;
