use crate::autograd::{softmax, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::memory::store::{
    Admission, LongTermMemory, MemoryItem, MemoryStore, ShortTermMemory,
};
use crate::model::{inject_rows, BaseLm, GroupSet, ParamGroup, Vocab};
use crate::scalar::Scalar;

/// Mean of the frozen token embeddings of `text`, used as both key and value.
pub fn encode_item<S: Scalar>(model: &BaseLm<S>, vocab: &Vocab, text: &str) -> Result<Vec<S>> {
    encode_tokens(model, &vocab.encode(text))
}

pub fn encode_tokens<S: Scalar>(model: &BaseLm<S>, tokens: &[usize]) -> Result<Vec<S>> {
    if tokens.is_empty() {
        return Err(Error::invalid("encode_item", "text has no tokens"));
    }
    let d = model.cfg.d_model;
    let mut acc = vec![S::zero(); d];
    for &t in tokens {
        if t >= model.cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: model.cfg.vocab_size,
            });
        }
        acc.iter_mut()
            .zip(model.tok_emb.row(t))
            .for_each(|(a, &e)| *a = *a + e);
    }
    let n = S::lit(tokens.len() as f64);
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Trainable `W_STM`, `W_LTM` (both `d × d`, applied as `W · m`).
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryProjections<S> {
    pub w_stm: Tensor<S>,
    pub w_ltm: Tensor<S>,
}

impl<S: Scalar> MemoryProjections<S> {
    /// Identity initialization: memory starts as a pass-through.
    pub fn identity(d: usize) -> Self {
        Self {
            w_stm: Tensor::eye(d),
            w_ltm: Tensor::eye(d),
        }
    }

    pub fn width(&self) -> usize {
        self.w_stm.shape()[0]
    }

    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor<S>)> {
        vec![
            ("memory.w_stm".into(), ParamGroup::Memory, &self.w_stm),
            ("memory.w_ltm".into(), ParamGroup::Memory, &self.w_ltm),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w_stm, &mut self.w_ltm]
    }

    pub fn bind(&self, tape: &mut Tape<S>, grads: GroupSet) -> ProjectionVars {
        let g = grads.contains(ParamGroup::Memory);
        ProjectionVars {
            w_stm: tape.bind(&self.w_stm, g),
            w_ltm: tape.bind(&self.w_ltm, g),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub w_stm: Var,
    pub w_ltm: Var,
}

/// Attention of one query over both stores, before projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<S> {
    pub a_stm: Vec<S>,
    pub a_ltm: Vec<S>,
    /// `Σ a_i · value_i` per store; zeros for an empty store.
    pub m_stm: Vec<S>,
    pub m_ltm: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryReadout<S> {
    pub a_stm: Vec<S>,
    pub a_ltm: Vec<S>,
    pub m_stm: Vec<S>,
    pub m_ltm: Vec<S>,
    /// `W_STM · m_STM + W_LTM · m_LTM`.
    pub z: Vec<S>,
}

fn check_width<S>(items: &[MemoryItem<S>], d: usize) -> Result<()> {
    if let Some(it) = items.iter().find(|it| it.key.len() != d || it.value.len() != d) {
        return Err(Error::Shape {
            op: "retrieve",
            lhs: vec![it.key.len()],
            rhs: vec![d],
        });
    }
    Ok(())
}

/// Softmax of `qᵀ key_i` over the items of one store.
pub fn attention_weights<S: Scalar>(items: &[MemoryItem<S>], q: &[S]) -> Vec<S> {
    let logits: Vec<S> = items
        .iter()
        .map(|it| it.key.iter().zip(q).map(|(&k, &x)| k * x).sum())
        .collect();
    softmax(&logits)
}

fn weighted_values<S: Scalar>(items: &[MemoryItem<S>], weights: &[S], d: usize) -> Vec<S> {
    let mut m = vec![S::zero(); d];
    for (it, &w) in items.iter().zip(weights) {
        m.iter_mut().zip(&it.value).for_each(|(a, &v)| *a = *a + w * v);
    }
    m
}

/// Index of the largest weight; ties go to the earliest (lowest insert time) item.
pub fn argmax_first<S: Scalar>(weights: &[S]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &w) in weights.iter().enumerate() {
        if best.is_none_or(|b| w > weights[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn attend<S: Scalar>(
    stm: &ShortTermMemory<S>,
    ltm: &LongTermMemory<S>,
    q: &[S],
) -> Result<Attention<S>> {
    if stm.is_empty() && ltm.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let d = q.len();
    check_width(stm.items(), d)?;
    check_width(ltm.items(), d)?;
    let a_stm = attention_weights(stm.items(), q);
    let a_ltm = attention_weights(ltm.items(), q);
    let m_stm = weighted_values(stm.items(), &a_stm, d);
    let m_ltm = weighted_values(ltm.items(), &a_ltm, d);
    Ok(Attention {
        a_stm,
        a_ltm,
        m_stm,
        m_ltm,
    })
}

/// Records `z = W_STM · m_STM + W_LTM · m_LTM` on the tape as a `[d]` node.
pub fn fuse_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    proj: ProjectionVars,
    att: &Attention<S>,
) -> Result<Var> {
    let d = att.m_stm.len();
    let ms = tape.constant(&[d, 1], att.m_stm.clone())?;
    let ml = tape.constant(&[d, 1], att.m_ltm.clone())?;
    let zs = tape.matmul(proj.w_stm, ms)?;
    let zl = tape.matmul(proj.w_ltm, ml)?;
    let z = tape.add(zs, zl)?;
    tape.reshape(z, &[d])
}

/// Attention retrieval over both stores fused through the projections. Pure.
pub fn retrieve<S: Scalar>(
    stm: &ShortTermMemory<S>,
    ltm: &LongTermMemory<S>,
    proj: &MemoryProjections<S>,
    q: &[S],
) -> Result<MemoryReadout<S>> {
    if q.len() != proj.width() {
        return Err(Error::shape("retrieve", &[q.len()], proj.w_stm.shape()));
    }
    let att = attend(stm, ltm, q)?;
    let mut tape = Tape::new();
    let vars = proj.bind(&mut tape, GroupSet::EMPTY);
    let z = fuse_on_tape(&mut tape, vars, &att)?;
    Ok(MemoryReadout {
        z: tape.value(z).to_vec(),
        a_stm: att.a_stm,
        a_ltm: att.a_ltm,
        m_stm: att.m_stm,
        m_ltm: att.m_ltm,
    })
}

/// Adds `z` to every token-embedding row.
pub fn inject_readout<S: Scalar>(z: &Tensor<S>, embeddings: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let zv = tape.bind(z, false);
    let ev = tape.bind(embeddings, false);
    let y = inject_rows(&mut tape, zv, ev)?;
    Ok(tape.to_tensor(y))
}

/// Counts the access implied by a retrieval and promotes items that reach θ.
///
/// The STM argmax item gains one access; if that brings it to θ it is
/// offered to LTM (it stays in STM). The LTM argmax item also gains one
/// access, which feeds the LTM eviction order. Returns the items admitted.
pub fn record_access_and_promote<S: Scalar>(
    stm: &mut ShortTermMemory<S>,
    ltm: &mut LongTermMemory<S>,
    att: &Attention<S>,
) -> Vec<MemoryItem<S>> {
    assert_eq!(att.a_stm.len(), stm.len(), "attention computed over a different STM");
    assert_eq!(att.a_ltm.len(), ltm.len(), "attention computed over a different LTM");
    if let Some(j) = argmax_first(&att.a_ltm) {
        ltm.items_mut()[j].access_count += 1;
    }
    let mut promoted = Vec::new();
    if let Some(i) = argmax_first(&att.a_stm) {
        let item = &mut stm.items_mut()[i];
        item.access_count += 1;
        let item = item.clone();
        if let Admission::Admitted { .. } = ltm.admit(&item) {
            promoted.push(item);
        }
    }
    promoted
}

/// Fraction of `(query, expected id)` probes whose argmax item carries the expected id.
pub fn retrieval_accuracy<S: Scalar>(
    store: &impl MemoryStore<S>,
    probes: &[(Vec<S>, String)],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("retrieval_accuracy", "no probes"));
    }
    let mut hits = 0usize;
    for (q, expected) in probes {
        if !store.contains_id(expected) {
            return Err(Error::UnknownItem(expected.clone()));
        }
        let w = attention_weights(store.items(), q);
        if let Some(i) = argmax_first(&w) {
            if store.items()[i].id == *expected {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}
