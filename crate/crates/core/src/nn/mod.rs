//! Layer-level building blocks on top of [`crate::graph`].

mod attention;
mod layers;
mod norm;

pub use attention::{
    multi_head_attention, scaled_dot_attention, AttentionMaskSet, AttentionOutput, MhaParams,
    ZeroMask,
};
pub use layers::{dropout_apply, position_wise_ffn, residual_sublayer, ResidualConfig};
pub use norm::{layer_norm, prepare_inputs, LayerNormParams, NormMode};
