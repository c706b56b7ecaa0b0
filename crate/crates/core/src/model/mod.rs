//! Tiny decoder-only transformer with bottleneck adapters and LoRA patches.

mod adapted;
mod adapter;
mod base;
mod config;
mod lora;
mod params;
mod vocab;

pub use adapted::{lora_targets, AdaptedModel, ModelVars};
pub use adapter::{adapter_forward, AdapterLayer, AdapterVars, ADAPTER_INIT_STD};
pub use base::{forward, init_model, inject_rows, AugVars, BaseLm, BaseVars, Block, BlockVars, INIT_STD, LN_EPS};
pub use config::{Activation, ModelConfig};
pub use lora::{merge_lora, LoraPatch, LoraTarget, LORA_INIT_STD};
pub use params::{count_params, CountMode, GroupCount, GroupSet, ParamCountReport, ParamGroup};
pub use vocab::{Vocab, BOS, EOS, PAD, SEP, UNK};
