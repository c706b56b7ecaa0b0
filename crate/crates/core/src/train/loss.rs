use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-step loss values. Absent terms were not part of the step's objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_consistency: Option<f64>,
    pub l_task: Option<f64>,
    pub l_finetune: Option<f64>,
    pub l_total: f64,
    /// Sequences in the batch.
    pub n: usize,
    /// Task NLL of the batch, recorded even when it only enters through `l_finetune`.
    pub task_nll: f64,
}

impl LossBreakdown {
    pub fn active_terms(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("l_consistency", self.l_consistency),
            ("l_task", self.l_task),
            ("l_finetune", self.l_finetune),
        ]
        .into_iter()
        .filter_map(|(name, v)| v.map(|v| (name, v)))
    }
}

/// Sum of the present terms.
pub fn total_loss(parts: &LossBreakdown) -> f64 {
    parts.active_terms().map(|(_, v)| v).sum()
}

/// `(1/N) Σ_i ‖base_i − adapted_i‖²` over flattened logits. The base side should be a constant.
pub fn consistency_loss<S: Scalar>(tape: &mut Tape<S>, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::invalid("consistency_loss", "empty batch"));
    }
    let mut acc: Option<Var> = None;
    for &(base, adapted) in pairs {
        if tape.shape(base) != tape.shape(adapted) {
            return Err(Error::shape("consistency_loss", tape.shape(base), tape.shape(adapted)));
        }
        let diff = tape.sub(adapted, base)?;
        let sq = tape.frobenius_sq(diff);
        acc = Some(match acc {
            Some(a) => tape.add(a, sq)?,
            None => sq,
        });
    }
    let sum = acc.expect("nonempty");
    Ok(tape.scale(sum, S::lit(1.0 / pairs.len() as f64)))
}

/// Mean cross-entropy over every unmasked position in the batch.
pub fn task_loss<S: Scalar>(tape: &mut Tape<S>, batch: &[(Var, &[Option<usize>])]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::invalid("task_loss", "empty batch"));
    }
    let total: usize = batch.iter().map(|(_, t)| t.iter().flatten().count()).sum();
    let mut acc: Option<Var> = None;
    for &(logits, targets) in batch {
        let rows = tape.shape(logits)[0];
        if rows != targets.len() {
            return Err(Error::invalid(
                "task_loss",
                format!("{} targets for {rows} logit rows", targets.len()),
            ));
        }
        let count = targets.iter().flatten().count();
        let ce = tape.cross_entropy_masked(logits, targets)?;
        let w = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        let term = tape.scale(ce, S::lit(w));
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("nonempty"))
}

/// `task + λ Σ (‖A‖_F² + ‖B‖_F²)` over the given patch factors.
pub fn fine_tune_loss<S: Scalar>(tape: &mut Tape<S>, task: Var, patches: &[(Var, Var)], lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("fine_tune_loss", format!("lambda must be >= 0, got {lambda}")));
    }
    let mut out = task;
    if lambda == 0.0 {
        return Ok(out);
    }
    for &(a, b) in patches {
        let fa = tape.frobenius_sq(a);
        let fb = tape.frobenius_sq(b);
        let reg = tape.add(fa, fb)?;
        let reg = tape.scale(reg, S::lit(lambda));
        out = tape.add(out, reg)?;
    }
    Ok(out)
}
