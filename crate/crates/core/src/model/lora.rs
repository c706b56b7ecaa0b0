//! Low-rank patches `W' = W + A·B`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autograd::{SeededRng, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LORA_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoraTarget {
    Query(usize),
    Value(usize),
    Output,
}

impl fmt::Display for LoraTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoraTarget::Query(l) => write!(f, "blocks.{l}.wq"),
            LoraTarget::Value(l) => write!(f, "blocks.{l}.wv"),
            LoraTarget::Output => f.write_str("w_out"),
        }
    }
}

/// `A` is `[d × r]`, `B` is `[r × k]` for a target `W ∈ R^{d×k}` used as `y = x·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPatch<S> {
    pub target: LoraTarget,
    pub a: Tensor<S>,
    pub b: Tensor<S>,
    pub merged: bool,
}

impl<S: Scalar> LoraPatch<S> {
    /// `A ~ N(0, 0.02²)`, `B = 0`.
    pub fn init(target: LoraTarget, d: usize, k: usize, rank: usize, rng: &mut SeededRng) -> Self {
        Self {
            target,
            a: Tensor::randn(&[d, rank], LORA_INIT_STD, rng),
            b: Tensor::zeros(&[rank, k]),
            merged: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[1]
    }

    /// The low-rank correction `A·B`.
    pub fn delta(&self) -> Result<Tensor<S>> {
        self.a.matmul(&self.b)
    }

    pub fn check_target(&self, w: &Tensor<S>) -> Result<()> {
        let ws = w.shape();
        if ws.len() != 2 || ws[0] != self.a.shape()[0] || ws[1] != self.b.shape()[1] {
            return Err(Error::Shape {
                op: "lora",
                lhs: ws.to_vec(),
                rhs: vec![self.a.shape()[0], self.b.shape()[1]],
            });
        }
        Ok(())
    }
}

/// Returns `W + A·B` and marks the patch as merged.
pub fn merge_lora<S: Scalar>(patch: &mut LoraPatch<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    if patch.merged {
        return Err(Error::invalid(
            "merge_lora",
            format!("patch on {} is already merged", patch.target),
        ));
    }
    patch.check_target(w)?;
    let merged = w.add(&patch.delta()?)?;
    patch.merged = true;
    Ok(merged)
}
