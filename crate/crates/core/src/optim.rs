//! AdamW with decoupled weight decay, and the warmup+cosine schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.04,
        }
    }
}

/// First/second moments, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<S: Scalar = f64> {
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamMoments<S> {
    pub fn zeros_like(params: &ParameterSet<S>) -> Self {
        let zeros = |_: &Tensor<S>| ();
        let _ = zeros;
        let m = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        let v = params
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        AdamMoments { m, v }
    }
}

/// One decoupled-weight-decay Adam step. `t` is the 1-based step count used
/// for bias correction. Rejects non-finite gradients before touching any
/// state, so an aborted step leaves parameters and moments intact.
pub fn adamw_step<S: Scalar>(
    params: &mut ParameterSet<S>,
    grads: &BTreeMap<String, Tensor<S>>,
    moments: &mut AdamMoments<S>,
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {name}; step aborted"
            )));
        }
    }
    let b1 = S::of(cfg.beta1);
    let b2 = S::of(cfg.beta2);
    let one_m_b1 = S::of(1.0 - cfg.beta1);
    let one_m_b2 = S::of(1.0 - cfg.beta2);
    let bc1 = S::of(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = S::of(1.0 - cfg.beta2.powi(t as i32));
    let eps = S::of(cfg.eps);
    let step = S::of(lr);
    let decay = S::of(lr * cfg.weight_decay);

    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    for name in names {
        let g = grads
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("missing gradient for {name}")))?;
        let p = params.get_mut(&name)?;
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let m = moments
            .m
            .get_mut(&name)
            .ok_or_else(|| Error::Contract(format!("missing first moment for {name}")))?;
        let v = moments
            .v
            .get_mut(&name)
            .ok_or_else(|| Error::Contract(format!("missing second moment for {name}")))?;
        for i in 0..p.numel() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + one_m_b1 * gi;
            let vi = b2 * v.data()[i] + one_m_b2 * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let p_old = p.data()[i];
            p.data_mut()[i] = p_old - step * m_hat / (v_hat.sqrt() + eps) - decay * p_old;
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// to 0 over the remaining steps.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    debug_assert!(warmup_steps < total_steps, "warmup must end before total");
    if step <= warmup_steps {
        if warmup_steps == 0 {
            return base_lr;
        }
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
