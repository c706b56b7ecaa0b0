use crate::autograd::{SeededRng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::adapter::{AdapterLayer, AdapterVars};
use crate::model::base::{forward, AugVars, BaseLm, BaseVars};
use crate::model::config::ModelConfig;
use crate::model::lora::{merge_lora, LoraPatch, LoraTarget};
use crate::model::params::{CountMode, GroupSet, ParamCountReport, ParamGroup};
use crate::scalar::Scalar;

/// A frozen base model together with its adapters and LoRA patches.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedModel<S> {
    pub base: BaseLm<S>,
    pub adapters: Vec<AdapterLayer<S>>,
    pub patches: Vec<LoraPatch<S>>,
}

/// All parameters of an [`AdaptedModel`] bound onto one tape.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub base: BaseVars,
    pub aug: AugVars,
    /// One var per parameter, in [`AdaptedModel::named_params`] order.
    pub entries: Vec<Var>,
}

pub fn lora_targets(cfg: &ModelConfig) -> Vec<LoraTarget> {
    if cfg.lora_rank == 0 {
        return Vec::new();
    }
    let mut t: Vec<LoraTarget> = (0..cfg.n_layers)
        .flat_map(|l| [LoraTarget::Query(l), LoraTarget::Value(l)])
        .collect();
    if cfg.lora_on_head {
        t.push(LoraTarget::Output);
    }
    t
}

impl<S: Scalar> AdaptedModel<S> {
    /// Base weights, then one adapter per block, then the LoRA patches, all
    /// drawn from one stream seeded by `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        let mut rng = SeededRng::new(cfg.seed);
        let base = BaseLm::init(cfg, &mut rng)?;
        let d = cfg.d_model;
        let adapters = (0..cfg.n_layers)
            .map(|l| AdapterLayer::init(l, d, cfg.adapter_rank, &mut rng))
            .collect();
        let mut patches = Vec::new();
        for t in lora_targets(cfg) {
            let k = base.target(t)?.shape()[1];
            patches.push(LoraPatch::init(t, d, k, cfg.lora_rank, &mut rng));
        }
        Ok(Self {
            base,
            adapters,
            patches,
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.base.cfg
    }

    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor<S>)> {
        let mut out = self.base.named_params();
        for a in &self.adapters {
            out.push((format!("adapters.{}.w_down", a.layer), ParamGroup::Adapter, &a.w_down));
            out.push((format!("adapters.{}.w_up", a.layer), ParamGroup::Adapter, &a.w_up));
        }
        for p in &self.patches {
            out.push((format!("lora.{}.a", p.target), ParamGroup::Lora, &p.a));
            out.push((format!("lora.{}.b", p.target), ParamGroup::Lora, &p.b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = self.base.params_mut();
        for a in &mut self.adapters {
            out.push(&mut a.w_down);
            out.push(&mut a.w_up);
        }
        for p in &mut self.patches {
            out.push(&mut p.a);
            out.push(&mut p.b);
        }
        out
    }

    /// Binds every parameter; those in `grads` track gradients.
    pub fn bind(&self, tape: &mut Tape<S>, grads: GroupSet) -> ModelVars {
        self.bind_with(tape, grads, None)
    }

    /// Like [`AdaptedModel::bind`], but parameter `index` (in
    /// [`AdaptedModel::named_params`] order) is replaced by an existing var.
    pub fn bind_with(&self, tape: &mut Tape<S>, grads: GroupSet, replace: Option<(usize, Var)>) -> ModelVars {
        let mut entries: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, g, t)| tape.bind(t, grads.contains(g)))
            .collect();
        if let Some((i, v)) = replace {
            entries[i] = v;
        }
        let base = BaseVars::from_entries(self.base.blocks.len(), &entries);
        let mut rest = entries[base.entries.len()..].iter().copied();
        let mut adapters = vec![None; self.base.cfg.n_layers];
        for a in &self.adapters {
            let v = AdapterVars {
                w_down: rest.next().expect("adapter var"),
                w_up: rest.next().expect("adapter var"),
            };
            if let Some(slot) = adapters.get_mut(a.layer) {
                *slot = Some(v);
            }
        }
        let mut lora = Vec::new();
        for p in &self.patches {
            let a = rest.next().expect("lora var");
            let b = rest.next().expect("lora var");
            if !p.merged {
                lora.push((p.target, a, b));
            }
        }
        ModelVars {
            base,
            aug: AugVars { adapters, lora },
            entries,
        }
    }

    /// Logits with adapters on every block (no LoRA contribution).
    pub fn forward_adapted(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        let mut m = self.clone();
        m.patches.clear();
        m.forward_full(tokens)
    }

    /// Logits with LoRA patches only (adapters off).
    pub fn apply_lora(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        let mut m = self.clone();
        m.adapters.clear();
        m.forward_full(tokens)
    }

    /// Logits with every augmentation active and no memory readout.
    pub fn forward_full(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        self.forward_with_readout(tokens, None)
    }

    pub fn forward_with_readout(&self, tokens: &[usize], z: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        self.base.validate_tokens(tokens)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, GroupSet::EMPTY);
        let zv = match z {
            Some(z) => Some(tape.bind(z, false)),
            None => None,
        };
        let y = forward(&mut tape, self.cfg(), &vars.base, Some(&vars.aug), tokens, zv)?;
        Ok(tape.to_tensor(y))
    }

    /// Folds every unmerged patch into its target weight.
    pub fn merged(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..out.patches.len() {
            if out.patches[i].merged {
                continue;
            }
            let target = out.patches[i].target;
            let w = out.base.target(target)?.clone();
            let merged = merge_lora(&mut out.patches[i], &w)?;
            *out.base.target_mut(target)? = merged;
        }
        Ok(out)
    }

    /// Counts by walking the allocated buffers rather than the closed form.
    pub fn enumerate_params(&self, mode: CountMode) -> ParamCountReport {
        let counts: Vec<(ParamGroup, usize)> = self
            .named_params()
            .into_iter()
            .map(|(_, g, t)| (g, t.numel()))
            .collect();
        ParamCountReport::from_groups(mode, &counts)
    }

    /// Greedy decoding: appends argmax tokens (ties to the lowest id) until
    /// `stop` is produced, `max_new` tokens are emitted, or the context fills.
    pub fn greedy_decode(
        &self,
        prompt: &[usize],
        z: Option<&Tensor<S>>,
        stop: usize,
        max_new: usize,
    ) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::invalid("greedy_decode", "empty prompt"));
        }
        let mut seq = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.cfg().ctx_len {
            let logits = self.forward_with_readout(&seq, z)?;
            let last = logits.row(logits.rows() - 1);
            let mut best = 0;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            if best == stop {
                break;
            }
            out.push(best);
            seq.push(best);
        }
        Ok(out)
    }
}
