//! Finite-difference oracle for reverse-mode gradients.
//!
//! Central differences (f(x+h) − f(x−h)) / 2h, elementwise over every input,
//! compared against the tape's gradients. The oracle never touches the
//! backward implementation it checks.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckOpts {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub step: f64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative mismatch seen, with scale max(|analytic|, |fd|).
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input index, element index) of the worst mismatch.
    pub worst: (usize, usize),
    pub passed: bool,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst: (0, 0),
            passed: true,
        }
    }

    fn observe(&mut self, input: usize, element: usize, analytic: f64, fd: f64, opts: &GradCheckOpts) {
        let abs = (analytic - fd).abs();
        let scale = analytic.abs().max(fd.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = (input, element);
        }
        self.max_abs_err = self.max_abs_err.max(abs);
        if abs > opts.abs_tol.max(opts.rel_tol * scale) {
            self.passed = false;
        }
    }
}

fn eval_outputs<S, F>(f: &F, inputs: &[Tensor<S>]) -> Result<(Vec<f64>, Vec<Option<Tensor<S>>>, usize)>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Var<S>]) -> Result<Vec<Var<S>>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<S>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let outs = f(&tape, &vars)?;
    let mut values = Vec::with_capacity(outs.len());
    let mut grads = Vec::new();
    for out in &outs {
        if out.value().numel() != 1 {
            return Err(Error::contract("gradcheck outputs must be scalars"));
        }
        values.push(out.value().item().to64());
        tape.backward(out)?;
        for var in &vars {
            grads.push(var.grad());
        }
    }
    Ok((values, grads, outs.len()))
}

fn eval_values_only<S, F>(f: &F, inputs: &[Tensor<S>]) -> Result<Vec<f64>>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Var<S>]) -> Result<Vec<Var<S>>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<S>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let outs = f(&tape, &vars)?;
    Ok(outs.iter().map(|o| o.value().item().to64()).collect())
}

/// Checks every scalar output of `f` against central finite differences over
/// every element of every input. Returns one report per output.
pub fn gradcheck_multi<S, F>(
    f: &F,
    inputs: &[Tensor<S>],
    opts: &GradCheckOpts,
) -> Result<Vec<GradCheckReport>>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Var<S>]) -> Result<Vec<Var<S>>>,
{
    let (base_values, analytic, n_outputs) = eval_outputs(f, inputs)?;
    let repeat = eval_values_only(f, inputs)?;
    if base_values
        .iter()
        .zip(&repeat)
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::Verification(
            "function under gradcheck is non-deterministic".into(),
        ));
    }

    let mut reports = vec![GradCheckReport::empty(); n_outputs];
    let h = opts.step;
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + S::of(h);
            let plus = eval_values_only(f, &work)?;
            work[i].data_mut()[e] = orig - S::of(h);
            let minus = eval_values_only(f, &work)?;
            work[i].data_mut()[e] = orig;
            for k in 0..n_outputs {
                let fd = (plus[k] - minus[k]) / (2.0 * h);
                let a = analytic[k * inputs.len() + i]
                    .as_ref()
                    .map(|t| t.data()[e].to64())
                    .unwrap_or(0.0);
                reports[k].observe(i, e, a, fd, opts);
            }
        }
    }
    Ok(reports)
}

/// Single-output convenience wrapper.
pub fn gradcheck<S, F>(f: &F, inputs: &[Tensor<S>], opts: &GradCheckOpts) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Var<S>]) -> Result<Var<S>>,
{
    let wrapped = |tape: &Tape<S>, vars: &[Var<S>]| f(tape, vars).map(|v| vec![v]);
    Ok(gradcheck_multi(&wrapped, inputs, opts)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn sum_of_squares_matches_analytic() {
        let f = |_t: &Tape<f64>, vars: &[Var<f64>]| Ok(vars[0].mul(&vars[0])?.sum_all());
        let x = Tensor::vector(vec![1.0, 2.0]);
        let report = gradcheck(&f, &[x.clone()], &GradCheckOpts::default()).unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);

        // and the analytic gradient itself is [2, 4]
        let tape = Tape::new();
        let v = tape.param(x);
        let y = v.mul(&v).unwrap().sum_all();
        tape.backward(&y).unwrap();
        let g = v.grad().unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-12);
        assert!((g.data()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let f = |tape: &Tape<f64>, _vars: &[Var<f64>]| Ok(tape.constant(Tensor::scalar(3.0)).sum_all());
        let x = Tensor::vector(vec![0.5, -0.5, 2.0]);
        let report = gradcheck(&f, &[x], &GradCheckOpts::default()).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_abs_err, 0.0);
    }

    #[test]
    fn nondeterminism_is_detected() {
        thread_local! {
            static CALLS: Cell<u64> = const { Cell::new(0) };
        }
        let f = |tape: &Tape<f64>, _vars: &[Var<f64>]| {
            let n = CALLS.with(|c| {
                c.set(c.get() + 1);
                c.get()
            });
            Ok(tape.constant(Tensor::scalar(n as f64)).sum_all())
        };
        let x = Tensor::vector(vec![1.0]);
        let err = gradcheck(&f, &[x], &GradCheckOpts::default()).unwrap_err();
        assert!(matches!(err, Error::Verification(_)));
    }
}
