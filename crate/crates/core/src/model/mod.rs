//! Causal transformer over chord-first token sequences.
//!
//! Each layer is pre-norm: `x + Attn(LN(x))` followed by `x + FF(LN(x))`.
//! Attention logits add a learned relative-position term `Q·R[j - t]`
//! (clipped to `±max_rel_dist`) to the usual `Q·K`, then mask keys after the
//! query. A final layer norm and a linear head produce next-token logits.
//!
//! All tensors are generic over [`Real`] so the same code trains in `f32` and
//! is gradient-checked in `f64`. Backward passes are written by hand, one per
//! sublayer.

mod attention;
mod checkpoint;
mod config;
mod decode;
pub(crate) mod forward;
mod layers;
mod params;

pub use attention::{
    relative_attention, relative_logits_naive, relative_logits_skewed, relative_index,
    MASK_VALUE,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointFile, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use decode::IncrementalDecoder;
pub use forward::{
    cross_entropy, embed, forward, loss_and_gradients, ForwardTrace, TrainingPass,
};
pub use layers::{feed_forward, layer_norm, sinusoidal_encoding, LN_EPS};
pub use params::{
    init_params, AttentionParams, FeedForwardParams, LayerNormParams, LayerParams, ModelParams,
};

use std::fmt::{Debug, Display};

/// Floating-point element type of model tensors.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
}
