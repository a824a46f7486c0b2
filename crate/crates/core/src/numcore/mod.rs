//! Dense numeric kernel: tensors, a reverse-mode tape, GRU layers, Adam and
//! the checkpoint container.

mod adam;
pub mod container;
pub mod gradcheck;
mod gru;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, Adam};
pub use gru::{gru_cell, Gru};
pub use ops::{argmax, cross_entropy, masked_argmax, softmax, CE_EPSILON};
pub use params::{Gradients, ParamStore, INIT_SCALE};
pub use tape::{NodeId, Tape};
pub use tensor::{Real, Tensor};
