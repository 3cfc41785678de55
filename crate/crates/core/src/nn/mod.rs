//! Minimal dense layers with hand-written backward passes, enough for the
//! contrastive encoder, the adversary CNN and the replacement autoencoder.

mod layers;
mod matrix;
mod optim;

pub use layers::{
    mse, relu, relu_backward, selu, selu_backward, softmax_cross_entropy, AttentionCache, Conv1d, LayerNorm,
    LayerNormCache, Linear, Param, SelfAttention,
};
pub use matrix::{l2_normalize_rows, l2_normalize_rows_backward, matmul, matmul_nt, matmul_tn, Matrix};
pub use optim::Adam;
