//! Losses, curriculum scheduling, Adam, and the three-stage trainer.

mod adam;
mod curriculum;
mod loss;
mod plan;
mod trainer;

#[cfg(test)]
mod tests;

pub use adam::{Adam, AdamConfig, Moments};
pub use curriculum::{buckets_for_stage, curriculum_buckets, schedule_curriculum, stage_pool};
pub use loss::{consistency_loss, fine_tune_loss, task_loss, total_loss, LossBreakdown};
pub use plan::{Ablation, CurriculumStage, LossMode, LossTerms, StagePlan, TrainPlan};
pub use trainer::{run_icft, Cursor, IcftRun, StepRecord, Trainer};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::memory::{encode_tokens, retrieve, DualMemory, MemoryItem, MemoryProjections};
use crate::model::{AdaptedModel, ParamGroup, Vocab};
use crate::scalar::Scalar;

/// One training sequence `<bos> prompt <sep> response <eos>`, encoded.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// Memory item text: prompt and response joined by a space.
    pub text: String,
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
    /// The sequence without its final token.
    pub inputs: Vec<usize>,
    /// Next-token targets; only response positions and `<eos>` are unmasked.
    pub targets: Vec<Option<usize>>,
    pub difficulty: f64,
}

impl Example {
    pub fn new(vocab: &Vocab, id: &str, prompt: &str, response: &str, difficulty: f64) -> Result<Self> {
        let p = vocab.encode(prompt);
        let r = vocab.encode(response);
        if p.is_empty() || r.is_empty() {
            return Err(Error::invalid("example", format!("{id}: prompt and response must be nonempty")));
        }
        let mut seq = vec![vocab.bos()];
        seq.extend(&p);
        seq.push(vocab.sep());
        let first_target = seq.len();
        seq.extend(&r);
        seq.push(vocab.eos());
        let targets = (1..seq.len())
            .map(|t| (t >= first_target).then_some(seq[t]))
            .collect();
        seq.pop();
        Ok(Self {
            id: id.to_string(),
            text: format!("{prompt} {response}"),
            prompt: p,
            response: r,
            inputs: seq,
            targets,
            difficulty,
        })
    }

    /// `<bos> prompt <sep>`, the decoding prefix.
    pub fn prefix(&self) -> &[usize] {
        &self.inputs[..self.prompt.len() + 2]
    }

    /// Tokens encoded into the memory item's key and value.
    pub fn item_tokens(&self) -> Vec<usize> {
        [self.prompt.as_slice(), self.response.as_slice()].concat()
    }
}

/// Everything that is trained or consulted at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct IcftModel<S> {
    pub model: AdaptedModel<S>,
    pub proj: MemoryProjections<S>,
    pub memory: DualMemory<S>,
    pub use_memory: bool,
}

impl<S: Scalar> IcftModel<S> {
    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor<S>)> {
        let mut p = self.model.named_params();
        p.extend(self.proj.named_params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut p = self.model.params_mut();
        p.extend(self.proj.params_mut());
        p
    }

    pub fn memory_item(&self, ex: &Example) -> Result<MemoryItem<S>> {
        let e = encode_tokens(&self.model.base, &ex.item_tokens())?;
        Ok(MemoryItem::new(ex.id.clone(), ex.text.clone(), e))
    }

    /// The readout `z` for a prompt, or `None` when memory is off or empty.
    pub fn readout(&self, prompt: &[usize]) -> Result<Option<Tensor<S>>> {
        if !self.use_memory || self.memory.is_empty() {
            return Ok(None);
        }
        let q = encode_tokens(&self.model.base, prompt)?;
        let r = retrieve(&self.memory.stm, &self.memory.ltm, &self.proj, &q)?;
        Ok(Some(Tensor::new(vec![r.z.len()], r.z)?))
    }

    /// Greedy response for an example's prompt, without the `<eos>`.
    pub fn generate(&self, ex: &Example, eos: usize, max_new: usize) -> Result<Vec<usize>> {
        let z = self.readout(&ex.prompt)?;
        self.model.greedy_decode(ex.prefix(), z.as_ref(), eos, max_new)
    }

    /// Token-weighted mean NLL over `examples` with the full model and memory.
    pub fn task_loss(&self, examples: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for ex in examples {
            let z = self.readout(&ex.prompt)?;
            let logits = self.model.forward_with_readout(&ex.inputs, z.as_ref())?;
            let v = logits.cols();
            for (i, t) in ex.targets.iter().enumerate() {
                if let Some(t) = *t {
                    let row: Vec<f64> = logits.row(i).iter().map(|x| x.as_f64()).collect();
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                    debug_assert!(t < v);
                    total += lse - row[t];
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::invalid("task_loss", "no target positions"));
        }
        Ok(total / count as f64)
    }
}
