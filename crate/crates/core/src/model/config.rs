use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::VOCAB_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub d_ff: usize,
    /// Longest token sequence the model accepts.
    pub max_len: usize,
    /// Relative distances are clipped to `[-max_rel_dist, max_rel_dist]`.
    pub max_rel_dist: usize,
    /// Add the sinusoidal absolute encoding to the token embedding.
    pub use_absolute_pe: bool,
    /// When off, the relative table stays at zero and receives no updates.
    pub relative_attention: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            d_model: 256,
            num_heads: 8,
            num_layers: 6,
            d_ff: 1024,
            max_len: 1920,
            max_rel_dist: 512,
            use_absolute_pe: true,
            relative_attention: true,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn rel_rows(&self) -> usize {
        2 * self.max_rel_dist + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.max_rel_dist > self.max_len {
            return bad(format!(
                "max_rel_dist {} exceeds max_len {}",
                self.max_rel_dist, self.max_len
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
