use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers of one parameter. `t` counts the updates it has received.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

/// Adam with per-parameter step counts, so parameters that join in a later
/// stage start their bias correction from one.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub cfg: AdamConfig,
    pub moments: Vec<Option<Moments<S>>>,
    pub steps: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            moments: vec![None; n_params],
            steps: 0,
        }
    }

    /// Updates every parameter flagged in `active`; the rest are left untouched.
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [&mut Tensor<S>],
        grads: &[Option<&[S]>],
        active: &[bool],
    ) -> Result<()> {
        let n = self.moments.len();
        if params.len() != n || grads.len() != n || active.len() != n {
            return Err(Error::invalid(
                "adam_step",
                format!(
                    "optimizer tracks {n} parameters, got {} params / {} grads / {} flags",
                    params.len(),
                    grads.len(),
                    active.len()
                ),
            ));
        }
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let g = grads[i].ok_or_else(|| Error::invalid("adam_step", format!("missing gradient for parameter {i}")))?;
            if g.len() != params[i].numel() {
                return Err(Error::shape("adam_step", params[i].shape(), &[g.len()]));
            }
        }
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let g = grads[i].expect("checked");
            let st = self.moments[i].get_or_insert_with(|| Moments {
                m: vec![S::zero(); g.len()],
                v: vec![S::zero(); g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = S::lit(1.0 - b1.powi(st.t as i32));
            let c2 = S::lit(1.0 - b2.powi(st.t as i32));
            let (b1s, b2s) = (S::lit(b1), S::lit(b2));
            let (one, lr, eps) = (S::one(), S::lit(lr), S::lit(self.cfg.eps));
            let data = params[i].data_mut();
            for j in 0..g.len() {
                st.m[j] = b1s * st.m[j] + (one - b1s) * g[j];
                st.v[j] = b2s * st.v[j] + (one - b2s) * g[j] * g[j];
                let mh = st.m[j] / c1;
                let vh = st.v[j] / c2;
                data[j] = data[j] - lr * mh / (vh.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
