//! Reverse-mode differentiable numeric core: tensors, the op tape,
//! trainable parameters with Adam, and finite-difference gradient checks.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, GradCheckEntry, GradCheckReport, SUBSAMPLE_THRESHOLD};
pub use params::{AdamConfig, Binding, Param, ParameterStore};
pub use tape::{Gradients, Tape, TensorId};
pub use tensor::Tensor;
