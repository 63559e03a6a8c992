// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small pre-LayerNorm causal transformer with residual-stream hooks.
//!
//! Layers are numbered from 1. The residual "at layer `l`" is the stream
//! value after block `l` has added both its attention and MLP outputs.

mod io;
mod model;
mod params;
mod tokenizer;
mod train;

pub use model::{ForwardOutput, Model};
pub use params::Params;
pub use tokenizer::{split_words, Tokenizer, PAD_ID, UNK_ID};
pub use train::{mean_cross_entropy, train_lm, TrainConfig};

use crate::error::{Error, Result};

/// Architecture and initialization seed for a [`Model`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::invalid("vocab_size must be at least 4"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Token ids of one input. Range checks against a model happen at forward time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("token sequence must be non-empty"));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Returns a copy with `token` appended.
    pub fn pushed(&self, token: usize) -> Self {
        let mut v = self.0.clone();
        v.push(token);
        Self(v)
    }
}

/// Post-block residual vector at one (layer, position).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCapture {
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f64>,
}

/// Which token positions an intervention rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    #[default]
    LastPosition,
    AllPositions,
}

impl std::str::FromStr for PositionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_position" | "last" => Ok(Self::LastPosition),
            "all_positions" | "all" => Ok(Self::AllPositions),
            other => Err(Error::invalid(format!("unknown position policy {other:?}"))),
        }
    }
}

/// Maps a residual vector to its replacement.
pub type DeltaFn<'a> = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a;

/// Rewrites the post-block residual at `layer` for the selected positions.
pub struct InterventionSpec<'a> {
    pub layer: usize,
    pub position_policy: PositionPolicy,
    pub delta_fn: Box<DeltaFn<'a>>,
}

impl<'a> InterventionSpec<'a> {
    pub fn new(
        layer: usize,
        position_policy: PositionPolicy,
        delta_fn: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
    ) -> Self {
        Self {
            layer,
            position_policy,
            delta_fn: Box::new(delta_fn),
        }
    }
}

impl std::fmt::Debug for InterventionSpec<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InterventionSpec")
            .field("layer", &self.layer)
            .field("position_policy", &self.position_policy)
            .finish_non_exhaustive()
    }
}
