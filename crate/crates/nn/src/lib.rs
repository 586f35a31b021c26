//! Tape-based reverse-mode autodiff over row-major 2-D tensors, with the
//! neural modules the rest of the workspace builds on: linear layers, layer
//! norm, multi-head attention, pre-norm transformer encoders, MLPs, and Adam.
//!
//! Everything is generic over the scalar (f32 or f64) through [`Scalar`];
//! the aliases below pin f64, which the training and evaluation stack uses
//! for gradient-check headroom and cross-run bitwise determinism. All ops are
//! single-threaded and fixed-order; parallelism belongs one level up, across
//! independent environments, never inside an op.

pub mod adam;
pub mod gradcheck;
pub mod modules;
pub mod params;
pub mod scalar;
pub mod tape;

pub use adam::{Adam, AdamConfig, AdamError, AdamStepStats};
pub use modules::{
    sinusoidal_position_encoding, Activation, LayerNorm, Linear, Mlp, MultiHeadAttention,
    TransformerConfig, TransformerEncoder, LAYER_NORM_EPS,
};
pub use params::{
    Init, ParamBinder, ParamError, ParamId, ParamStore, ParamTensor, CHECKPOINT_MAGIC,
};
pub use scalar::Scalar;
pub use tape::{TapeOf, TensorRef};

/// The workspace-wide scalar: f64 end to end.
pub type Tape = TapeOf<f64>;
pub type Params = ParamStore<f64>;
pub type Optimizer = Adam<f64>;
