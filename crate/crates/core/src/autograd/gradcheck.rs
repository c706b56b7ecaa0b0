//! Central finite-difference gradient checker.

use crate::autograd::tape::{Tape, Var};
use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` over checked
    /// coordinates whose absolute error exceeds the floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h probes straddle a ReLU kink.
    pub skipped: Vec<usize>,
    pub tol: f64,
    pub passed: bool,
}

fn relu_pattern<S: Scalar>(tape: &Tape<S>) -> Vec<bool> {
    tape.relu_preactivations()
        .into_iter()
        .map(|p| p > S::zero())
        .collect()
}

fn eval<S, F>(f: &F, x: &Tensor<S>) -> Result<(S, Vec<bool>)>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.bind(x, false);
    let y = f(&mut tape, xv)?;
    if tape.shape(y).iter().product::<usize>() != 1 {
        return Err(Error::invalid("check_gradients", "function must be scalar-valued"));
    }
    Ok((tape.item(y), relu_pattern(&tape)))
}

/// Compares the tape gradient of `f` at `x` against central differences.
pub fn check_gradients<S, F>(f: F, x: &Tensor<S>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    check_gradients_with_floor(f, x, h, tol, DEFAULT_ABS_FLOOR)
}

pub fn check_gradients_with_floor<S, F>(
    f: F,
    x: &Tensor<S>,
    h: f64,
    tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("check_gradients", "step h must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.bind(x, true);
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let zeros = vec![S::zero(); x.numel()];
    let analytic: Vec<f64> = tape
        .grad(xv)
        .unwrap_or(&zeros)
        .iter()
        .map(|g| g.as_f64())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: Vec::new(),
        tol,
        passed: true,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + S::lit(h);
        let (fp, pat_p) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - S::lit(h);
        let (fm, pat_m) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        if pat_p != pat_m {
            report.skipped.push(i);
            continue;
        }
        let numeric = (fp.as_f64() - fm.as_f64()) / (2.0 * h);
        let a = analytic[i];
        let abs_err = (a - numeric).abs();
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs_err);
        if abs_err <= abs_floor {
            continue;
        }
        let rel = abs_err / a.abs().max(numeric.abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
