//! Adam, cosine annealing and EMA parameter averaging.

use alloc::vec::Vec;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ParamStore) -> Self {
        let m: Vec<Tensor> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        OptState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptState,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            state: OptState::new(params),
        }
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    /// Weight decay is classical L2: `wd · θ` is added to the gradient.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
        adam_step(params, &mut self.state, &self.config, lr, weight_decay)
    }
}

pub fn adam_step(
    params: &mut ParamStore,
    state: &mut OptState,
    cfg: &AdamConfig,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::StructureMismatch(alloc::format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
            return Err(Error::mismatch("adam_step", p.value.shape(), m.shape()));
        }
        let theta = p.value.data_mut();
        let grad = p.grad.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..theta.len() {
            let g = grad[i] + weight_decay * theta[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            theta[i] -= lr * mhat / (libm::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

/// Cosine annealing to zero: `lr0 · (1 + cos(π·step/total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::arg("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::arg("step beyond schedule"));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr0 * (1.0 + libm::cos(core::f64::consts::PI * frac)) / 2.0)
}

/// `teacher ← m·teacher + (1 − m)·student`, elementwise.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::arg("EMA momentum must lie in [0, 1]"));
    }
    teacher.check_same_structure(student)?;
    for (t, (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (a, b) in t.value.data_mut().iter_mut().zip(s.value.data()) {
            *a = momentum * *a + (1.0 - momentum) * b;
        }
    }
    Ok(())
}
