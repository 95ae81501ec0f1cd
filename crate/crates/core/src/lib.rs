//! A desk-scale encoder-decoder Transformer laboratory.
//!
//! Four architectural variants can be toggled independently on top of a
//! post-norm Transformer:
//!
//! * input streams normalized separately before summation ([`nn::prepare_inputs`]),
//! * weighted residual connections `F(x) + k x` ([`nn::residual_sublayer`]),
//! * positional encodings learned with a soft actor-critic agent ([`posenc`]),
//! * self-attention with each token's score to itself masked out ([`nn::ZeroMask`]).
//!
//! Everything runs on a small `f64` tensor core with reverse-mode
//! differentiation ([`graph`]). See the `examples/` directory for one runnable
//! program per capability.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod posenc;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use rng::Rng;
pub use tensor::{Init, Tensor};
