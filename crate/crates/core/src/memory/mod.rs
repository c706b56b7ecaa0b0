//! Dual-stage memory: a FIFO short-term store, a frequency-admitted long-term
//! store, and attention retrieval fused into a single readout vector.

mod retrieval;
mod store;

pub use retrieval::{
    argmax_first, attend, attention_weights, encode_item, encode_tokens, fuse_on_tape,
    inject_readout, record_access_and_promote, retrieval_accuracy, retrieve, Attention,
    MemoryProjections, MemoryReadout, ProjectionVars,
};
pub use store::{
    Admission, LongTermMemory, MemoryConfig, MemoryItem, MemoryStore, ShortTermMemory,
};

use crate::error::Result;
use crate::scalar::Scalar;

/// Both stores under one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct DualMemory<S> {
    pub stm: ShortTermMemory<S>,
    pub ltm: LongTermMemory<S>,
}

impl<S: Scalar> DualMemory<S> {
    pub fn new(cfg: &MemoryConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            stm: ShortTermMemory::new(cfg.stm_capacity),
            ltm: LongTermMemory::new(cfg.ltm_threshold, cfg.ltm_capacity),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.stm.is_empty() && self.ltm.is_empty()
    }

    /// Attention for `q`, or `None` when both stores are empty.
    pub fn attend(&self, q: &[S]) -> Result<Option<Attention<S>>> {
        if self.is_empty() {
            return Ok(None);
        }
        attend(&self.stm, &self.ltm, q).map(Some)
    }
}
