//! Minimal differentiable-computation core used by every network in the
//! workspace: `f32` parameter tensors, `f64` compute, conv/dense/relu/
//! spatial-softmax layers with hand-written backward passes, MSE and
//! BCE-with-logits losses, Adam, finite-difference gradient checks and a
//! binary checkpoint format.

mod batch;
mod checkpoint;
mod error;
mod gemm;
mod gradcheck;
mod loss;
mod net;
mod optim;
mod tensor;

pub use batch::Batch;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{NumError, Result};
pub use gradcheck::{check_gradients, check_input_gradients, LossKind};
pub use loss::{bce_mean, bce_with_logits, mse, sigmoid};
pub use net::{bias_name, weight_name, Layer, Net, NetBuilder, Trace};
pub use optim::Adam;
pub use tensor::{Gradients, ParamSet, Tensor};
