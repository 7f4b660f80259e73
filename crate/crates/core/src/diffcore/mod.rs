//! Dense tensors, parameterised MLP layers with hand-written reverse-mode
//! gradients, and the Adam update.

mod mlp;
mod params;
mod tensor;

pub use mlp::{Activation, Init, Mlp, MlpSpec, MlpTrace, LEAKY_SLOPE};
pub use params::{AdamConfig, Grads, Param, ParamStore};
pub use tensor::Tensor;
