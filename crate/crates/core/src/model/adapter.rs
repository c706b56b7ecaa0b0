//! Bottleneck adapters: `x + W_up · relu(W_down · x)`.

use crate::autograd::{SeededRng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ADAPTER_INIT_STD: f64 = 0.02;

/// Adapter wrapping the feed-forward sublayer output of one transformer block.
///
/// Row-vector convention: `W_down` is `[d × r]` and maps a row `x ∈ R^d` to
/// `x · W_down ∈ R^r`; `W_up` is `[r × d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterLayer<S> {
    pub layer: usize,
    pub w_down: Tensor<S>,
    pub w_up: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct AdapterVars {
    pub w_down: Var,
    pub w_up: Var,
}

impl<S: Scalar> AdapterLayer<S> {
    /// `W_down ~ N(0, 0.02²)`, `W_up = 0`, so the adapter starts as the identity.
    pub fn init(layer: usize, d: usize, rank: usize, rng: &mut SeededRng) -> Self {
        Self {
            layer,
            w_down: Tensor::randn(&[d, rank], ADAPTER_INIT_STD, rng),
            w_up: Tensor::zeros(&[rank, d]),
        }
    }

    pub fn width(&self) -> usize {
        self.w_down.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.w_down.shape()[1]
    }

    /// Applies the adapter to a single vector, off-tape.
    pub fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = AdapterVars {
            w_down: tape.bind(&self.w_down, false),
            w_up: tape.bind(&self.w_up, false),
        };
        let xv = tape.bind(x, false);
        let y = adapter_forward(&mut tape, vars, xv)?;
        Ok(tape.to_tensor(y))
    }
}

/// Residual adapter on every row of `x` (`[n × d]` or `[d]`).
pub fn adapter_forward<S: Scalar>(tape: &mut Tape<S>, a: AdapterVars, x: Var) -> Result<Var> {
    let d = tape.shape(a.w_down)[0];
    let shape = tape.shape(x).to_vec();
    if *shape.last().expect("shape") != d {
        return Err(Error::shape("adapter_forward", &shape, tape.shape(a.w_down)));
    }
    let rows = if shape.len() == 1 {
        tape.reshape(x, &[1, d])?
    } else {
        x
    };
    let down = tape.matmul(rows, a.w_down)?;
    let act = tape.relu(down);
    let up = tape.matmul(act, a.w_up)?;
    let out = tape.add(rows, up)?;
    if shape.len() == 1 {
        tape.reshape(out, &shape)
    } else {
        Ok(out)
    }
}
