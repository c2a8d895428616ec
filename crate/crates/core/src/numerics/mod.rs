//! fp64 tensors, reverse-mode tape, gradient checking, Adam, learning-rate
//! schedule, EMA and seeded randomness.

mod gradcheck;
mod kernels;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_coords, grad_check, grad_check_params, GradCheckReport};
pub use optim::{adam_step, cosine_lr, ema_update, Adam, AdamConfig, OptState};
pub use params::{Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{segment_bounds, Gradients, Tape, Var, LN_EPS};
pub use tensor::{softmax, Tensor};

pub(crate) use kernels::sigmoid;
