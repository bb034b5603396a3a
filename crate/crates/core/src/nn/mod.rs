//! Dense layers with hand-written backward passes.

pub mod attention;
pub mod layers;
pub mod loss;
pub mod params;
pub mod tensor;
pub mod transformer;

pub use attention::{AttentionCache, MultiHeadAttention};
pub use layers::{gelu, gelu_grad, DropoutMask, LayerNorm, LayerNormCache, Linear};
pub use params::{Initializer, ParamId, ParameterStore};
pub use tensor::{gemm, lit, MatMut, MatRef, Real, Tensor};
pub use transformer::{Encoder, LayerCache, TransformerLayer};
