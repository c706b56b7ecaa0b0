use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Shape of the transformer and of its two weight-space augmentations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width; 0 means `4 * d_model`.
    pub d_ff: usize,
    /// 0 means "derive from the corpus vocabulary".
    pub vocab_size: usize,
    pub ctx_len: usize,
    /// Bottleneck width of each adapter.
    pub adapter_rank: usize,
    /// Rank of each LoRA patch; 0 disables LoRA.
    pub lora_rank: usize,
    /// Also patch the output projection, in addition to query and value.
    pub lora_on_head: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 0,
            vocab_size: 0,
            ctx_len: 64,
            adapter_rank: 8,
            lora_rank: 8,
            lora_on_head: true,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn ffn_width(&self) -> usize {
        if self.d_ff == 0 {
            4 * self.d_model
        } else {
            self.d_ff
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Largest LoRA rank every targeted matrix admits.
    pub fn max_lora_rank(&self) -> usize {
        if self.lora_on_head {
            self.d_model.min(self.vocab_size)
        } else {
            self.d_model
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return fail("d_model, n_layers and n_heads must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive (resolve it from the corpus first)".into());
        }
        if self.ctx_len == 0 {
            return fail("ctx_len must be positive".into());
        }
        if self.adapter_rank == 0 || self.adapter_rank > self.d_model / 2 {
            return fail(format!(
                "adapter_rank {} must lie in 1..={}",
                self.adapter_rank,
                self.d_model / 2
            ));
        }
        if self.lora_rank > self.max_lora_rank() {
            return fail(format!(
                "lora_rank {} exceeds the smallest targeted dimension {}",
                self.lora_rank,
                self.max_lora_rank()
            ));
        }
        Ok(())
    }
}
