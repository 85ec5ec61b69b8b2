//! Reverse-mode automatic differentiation over 2-D `f64` tensors, with the
//! transformer layers, optimizer, sampler and checkpoint format used by the
//! generative model.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
mod params;
pub mod sample;
pub mod tensor;

pub use checkpoint::{read_tensors, write_tensors, CheckpointError};
pub use graph::{Graph, Var};
pub use layers::{Decoder, DecoderState, Encoder, FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerConfig};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use sample::{nucleus_sample, nucleus_support};
pub use tensor::Tensor;
