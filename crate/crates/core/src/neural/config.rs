use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a transformer. `causal = false` gives a cross-encoder with a
/// [CLS] classification head; `causal = true` gives a decoder with a token head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub causal: bool,
}

/// Segment types an encoder distinguishes: query, product, key attributes.
pub const N_SEGMENTS: usize = 3;
/// Sections a decoder distinguishes: prompt, then the CoT's query, product
/// and compare sections.
pub const N_DECODER_SEGMENTS: usize = 4;
/// Output classes of an encoder head: Irrelevant, Relevant.
pub const N_CLASSES: usize = 2;

impl ModelConfig {
    pub fn encoder(vocab_size: usize, max_len: usize, n_layers: usize) -> Self {
        Self {
            vocab_size,
            max_len,
            hidden_dim: 64,
            n_layers,
            n_heads: 4,
            ffn_dim: 128,
            causal: false,
        }
    }

    pub fn decoder(vocab_size: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            max_len,
            hidden_dim: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            causal: true,
        }
    }

    pub fn n_segments(&self) -> usize {
        if self.causal {
            N_DECODER_SEGMENTS
        } else {
            N_SEGMENTS
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}
