//! Small dense networks with reverse-mode gradients.
//!
//! [`Tape`] records matrix primitives; [`MlpParams`] is the 2-hidden-layer
//! perceptron used for every policy and critic; [`AdamState`] updates it.

mod adam;
mod dropout;
mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dropout::{Dropout, DropoutMask};
pub use gradcheck::{grad_check, GRAD_FLOOR};
pub use mlp::{forward, forward_slot, Head, Layer, MlpForward, MlpGrads, MlpParams};
pub use tape::{Gradients, ParamSlot, Tape, Var};
pub use tensor::{linear, log_sum_exp, Tensor};
pub(crate) use tensor::{log_softmax_rows, softmax_rows};
