//! Dense tensors with reverse-mode differentiation over a recorded tape.
//!
//! The tape is rebuilt for every forward pass. Parameters live in a
//! [`ParamStore`] outside the tape; [`Tape::backward`] accumulates their
//! gradients there and [`Adam`] consumes them.

mod adam;
mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};
