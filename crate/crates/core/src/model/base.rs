//! The frozen decoder-only transformer.

use crate::autograd::{SeededRng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::adapter::{adapter_forward, AdapterVars};
use crate::model::config::ModelConfig;
use crate::model::lora::LoraTarget;
use crate::model::params::ParamGroup;
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Block<S> {
    pub ln1_gain: Tensor<S>,
    pub ln1_bias: Tensor<S>,
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub wo: Tensor<S>,
    pub ln2_gain: Tensor<S>,
    pub ln2_bias: Tensor<S>,
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

/// Pre-norm decoder: learned token and position embeddings, `n_layers`
/// blocks of causal multi-head attention and a ReLU feed-forward, final
/// layer norm and an untied output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseLm<S> {
    pub cfg: ModelConfig,
    pub tok_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub blocks: Vec<Block<S>>,
    pub lnf_gain: Tensor<S>,
    pub lnf_bias: Tensor<S>,
    pub w_out: Tensor<S>,
}

/// Gaussian(0, 0.02) weights, unit layer-norm gains, zero biases.
pub fn init_model<S: Scalar>(cfg: &ModelConfig) -> Result<BaseLm<S>> {
    let mut rng = SeededRng::new(cfg.seed);
    BaseLm::init(cfg, &mut rng)
}

impl<S: Scalar> BaseLm<S> {
    pub fn init(cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let f = cfg.ffn_width();
        let mut w = |shape: &[usize]| Tensor::randn(shape, INIT_STD, rng);
        let tok_emb = w(&[cfg.vocab_size, d]);
        let pos_emb = w(&[cfg.ctx_len, d]);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            blocks.push(Block {
                ln1_gain: Tensor::filled(&[d], S::one()),
                ln1_bias: Tensor::zeros(&[d]),
                wq: w(&[d, d]),
                wk: w(&[d, d]),
                wv: w(&[d, d]),
                wo: w(&[d, d]),
                ln2_gain: Tensor::filled(&[d], S::one()),
                ln2_bias: Tensor::zeros(&[d]),
                w1: w(&[d, f]),
                b1: Tensor::zeros(&[f]),
                w2: w(&[f, d]),
                b2: Tensor::zeros(&[d]),
            });
        }
        let w_out = w(&[d, cfg.vocab_size]);
        Ok(Self {
            cfg: cfg.clone(),
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: Tensor::filled(&[d], S::one()),
            lnf_bias: Tensor::zeros(&[d]),
            w_out,
        })
    }

    /// Every parameter buffer in deterministic order.
    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor<S>)> {
        use ParamGroup::*;
        let mut out = vec![
            ("tok_emb".to_string(), Embedding, &self.tok_emb),
            ("pos_emb".to_string(), Embedding, &self.pos_emb),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{l}.{n}");
            out.extend([
                (p("ln1_gain"), LayerNorm, &b.ln1_gain),
                (p("ln1_bias"), LayerNorm, &b.ln1_bias),
                (p("wq"), Attention, &b.wq),
                (p("wk"), Attention, &b.wk),
                (p("wv"), Attention, &b.wv),
                (p("wo"), Attention, &b.wo),
                (p("ln2_gain"), LayerNorm, &b.ln2_gain),
                (p("ln2_bias"), LayerNorm, &b.ln2_bias),
                (p("w1"), FeedForward, &b.w1),
                (p("b1"), FeedForward, &b.b1),
                (p("w2"), FeedForward, &b.w2),
                (p("b2"), FeedForward, &b.b2),
            ]);
        }
        out.extend([
            ("lnf_gain".to_string(), LayerNorm, &self.lnf_gain),
            ("lnf_bias".to_string(), LayerNorm, &self.lnf_bias),
            ("w_out".to_string(), Head, &self.w_out),
        ]);
        out
    }

    /// Mutable twin of [`BaseLm::named_params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.w1,
                &mut b.b1,
                &mut b.w2,
                &mut b.b2,
            ]);
        }
        out.extend([&mut self.lnf_gain, &mut self.lnf_bias, &mut self.w_out]);
        out
    }

    pub fn target(&self, t: LoraTarget) -> Result<&Tensor<S>> {
        match t {
            LoraTarget::Query(l) => self.blocks.get(l).map(|b| &b.wq),
            LoraTarget::Value(l) => self.blocks.get(l).map(|b| &b.wv),
            LoraTarget::Output => Some(&self.w_out),
        }
        .ok_or_else(|| Error::invalid("lora", format!("unknown target {t}")))
    }

    pub fn target_mut(&mut self, t: LoraTarget) -> Result<&mut Tensor<S>> {
        match t {
            LoraTarget::Query(l) => self.blocks.get_mut(l).map(|b| &mut b.wq),
            LoraTarget::Value(l) => self.blocks.get_mut(l).map(|b| &mut b.wv),
            LoraTarget::Output => Some(&mut self.w_out),
        }
        .ok_or_else(|| Error::invalid("lora", format!("unknown target {t}")))
    }

    pub fn validate_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("forward", "empty token sequence"));
        }
        if tokens.len() > self.cfg.ctx_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                ctx: self.cfg.ctx_len,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Plain logits `Φ(x; W)` for one sequence with no augmentation.
    pub fn forward_base(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = BaseVars::bind(self, &mut tape, |_| false);
        let y = forward(&mut tape, &self.cfg, &vars, None, tokens, None)?;
        Ok(tape.to_tensor(y))
    }
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Base parameters bound onto a tape, in [`BaseLm::named_params`] order.
#[derive(Clone, Debug)]
pub struct BaseVars {
    pub tok_emb: Var,
    pub pos_emb: Var,
    pub blocks: Vec<BlockVars>,
    pub lnf_gain: Var,
    pub lnf_bias: Var,
    pub w_out: Var,
    pub entries: Vec<Var>,
}

impl BaseVars {
    pub fn bind<S: Scalar>(
        model: &BaseLm<S>,
        tape: &mut Tape<S>,
        grad: impl Fn(ParamGroup) -> bool,
    ) -> Self {
        let entries: Vec<Var> = model
            .named_params()
            .into_iter()
            .map(|(_, g, t)| tape.bind(t, grad(g)))
            .collect();
        Self::from_entries(model.blocks.len(), &entries)
    }

    /// Rebuilds the structure from vars laid out in [`BaseLm::named_params`] order.
    pub fn from_entries(n_blocks: usize, entries: &[Var]) -> Self {
        let mut it = entries.iter().copied();
        let mut next = || it.next().expect("binding order");
        let tok_emb = next();
        let pos_emb = next();
        let blocks = (0..n_blocks)
            .map(|_| BlockVars {
                ln1_gain: next(),
                ln1_bias: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        let lnf_gain = next();
        let lnf_bias = next();
        let w_out = next();
        let used = 2 + 12 * n_blocks + 3;
        Self {
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain,
            lnf_bias,
            w_out,
            entries: entries[..used].to_vec(),
        }
    }
}

/// Adapter and LoRA parameters bound onto a tape.
#[derive(Clone, Debug, Default)]
pub struct AugVars {
    /// Indexed by layer.
    pub adapters: Vec<Option<AdapterVars>>,
    /// Unmerged patches only.
    pub lora: Vec<(LoraTarget, Var, Var)>,
}

impl AugVars {
    fn adapter(&self, layer: usize) -> Option<AdapterVars> {
        self.adapters.get(layer).copied().flatten()
    }

    fn lora(&self, t: LoraTarget) -> Option<(Var, Var)> {
        self.lora
            .iter()
            .find(|(tt, _, _)| *tt == t)
            .map(|&(_, a, b)| (a, b))
    }
}

fn linear<S: Scalar>(
    tape: &mut Tape<S>,
    h: Var,
    w: Var,
    aug: Option<&AugVars>,
    target: LoraTarget,
) -> Result<Var> {
    let y = tape.matmul(h, w)?;
    match aug.and_then(|a| a.lora(target)) {
        Some((a, b)) => {
            let ha = tape.matmul(h, a)?;
            let hab = tape.matmul(ha, b)?;
            tape.add(y, hab)
        }
        None => Ok(y),
    }
}

/// Causal logits `[n × V]` for one sequence.
///
/// `aug = None` gives the base model. `z`, when present, is a length-`d`
/// row added to every input embedding.
pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &ModelConfig,
    vars: &BaseVars,
    aug: Option<&AugVars>,
    tokens: &[usize],
    z: Option<Var>,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::invalid("forward", "empty token sequence"));
    }
    if tokens.len() > cfg.ctx_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            ctx: cfg.ctx_len,
        });
    }
    let n = tokens.len();
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let scale = S::lit(1.0 / (dh as f64).sqrt());
    let eps = S::lit(LN_EPS);
    let positions: Vec<usize> = (0..n).collect();

    let tok = tape.gather_rows(vars.tok_emb, tokens)?;
    let pos = tape.gather_rows(vars.pos_emb, &positions)?;
    let mut x = tape.add(tok, pos)?;
    if let Some(z) = z {
        x = inject_rows(tape, z, x)?;
    }
    for (l, b) in vars.blocks.iter().enumerate() {
        let h = tape.layer_norm(x, b.ln1_gain, b.ln1_bias, eps)?;
        let q = linear(tape, h, b.wq, aug, LoraTarget::Query(l))?;
        let k = tape.matmul(h, b.wk)?;
        let v = linear(tape, h, b.wv, aug, LoraTarget::Value(l))?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let p = tape.causal_softmax(s)?;
            heads.push(tape.matmul(p, vh)?);
        }
        let att = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let att = tape.matmul(att, b.wo)?;
        x = tape.add(x, att)?;

        let h2 = tape.layer_norm(x, b.ln2_gain, b.ln2_bias, eps)?;
        let f = tape.matmul(h2, b.w1)?;
        let f = tape.add_row(f, b.b1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, b.w2)?;
        let mut f = tape.add_row(f, b.b2)?;
        if let Some(a) = aug.and_then(|a| a.adapter(l)) {
            f = adapter_forward(tape, a, f)?;
        }
        x = tape.add(x, f)?;
    }
    debug_assert_eq!(tape.shape(x), &[n, d]);
    let x = tape.layer_norm(x, vars.lnf_gain, vars.lnf_bias, eps)?;
    linear(tape, x, vars.w_out, aug, LoraTarget::Output)
}

/// Adds the memory readout `z` to every row of the token embeddings.
pub fn inject_rows<S: Scalar>(tape: &mut Tape<S>, z: Var, embeddings: Var) -> Result<Var> {
    tape.add_row(embeddings, z)
}
