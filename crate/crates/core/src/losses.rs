//! Training objectives. Each loss has a plain form over slices and a tape
//! form producing a `1 × 1` node.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Availability;
use crate::error::{Error, Result};
use crate::model::Task;
use crate::numerics::{sigmoid, softmax, Tape, Tensor, Var};

/// Floor for logarithms of hazards and survival factors.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// feature-level distillation weight
    pub alpha: f64,
    /// response-level distillation weight
    pub beta: f64,
    pub temperature: f64,
}

impl LossWeights {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Response => LossWeights {
                alpha: 5.0,
                beta: 3.0,
                temperature: 4.0,
            },
            Task::Survival => LossWeights {
                alpha: 6.0,
                beta: 0.0,
                temperature: 4.0,
            },
        }
    }

    pub fn none() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            temperature: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::arg("distillation weights must be finite and non-negative"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::arg("temperature must be positive"));
        }
        Ok(())
    }

    pub fn distills(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    check_finite(logits, "cross_entropy logits")?;
    if label >= logits.len() {
        return Err(Error::arg("label outside the logit range"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>());
    Ok(lse - logits[label])
}

/// `Σ p log(p/q)` with `p = softmax(teacher/T)` and `q = softmax(student/T)`.
pub fn kl_temperature(teacher: &[f64], student: &[f64], t: f64) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::mismatch("kl_temperature", &[teacher.len()], &[student.len()]));
    }
    if teacher.len() < 2 {
        return Err(Error::arg("kl_temperature needs at least two entries"));
    }
    let p = softmax(&Tensor::row(teacher.to_vec()), 1, t)?;
    let lq = log_softmax_plain(student, t)?;
    let lp = log_softmax_plain(teacher, t)?;
    let kl = p
        .data()
        .iter()
        .zip(lp.iter().zip(&lq))
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, (a, b))| p * (a - b))
        .sum::<f64>();
    Ok(kl.max(0.0))
}

fn log_softmax_plain(x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_finite(x, "log_softmax input")?;
    if !(t > 0.0) {
        return Err(Error::arg("softmax temperature must be positive"));
    }
    let s: Vec<f64> = x.iter().map(|v| v / t).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(s.iter().map(|z| libm::exp(z - max)).sum::<f64>());
    Ok(s.iter().map(|v| v - lse).collect())
}

/// Discrete-time negative log-likelihood. `censored` means the event was not
/// observed by the end of `bin`.
pub fn nll_survival(logits: &[f64], bin: usize, censored: bool) -> Result<f64> {
    check_finite(logits, "hazard logits")?;
    if bin >= logits.len() {
        return Err(Error::arg("survival bin outside the hazard range"));
    }
    let ln = |x: f64| libm::log(x.max(LOG_FLOOR));
    let mut loss = 0.0;
    for (k, &z) in logits.iter().enumerate().take(bin + 1) {
        let h = sigmoid(z);
        if k == bin && !censored {
            loss -= ln(h);
        } else {
            loss -= ln(1.0 - h);
        }
    }
    Ok(loss)
}

fn row_len(tape: &Tape<'_>, x: Var, op: &'static str) -> Result<usize> {
    match tape.dims(x) {
        (1, c) => Ok(c),
        (r, c) => Err(Error::mismatch(op, &[r, c], &[1, c])),
    }
}

pub fn cross_entropy_var(tape: &mut Tape<'_>, logits: Var, label: usize) -> Result<Var> {
    let k = row_len(tape, logits, "cross_entropy")?;
    if label >= k {
        return Err(Error::arg("label outside the logit range"));
    }
    let ls = tape.log_softmax(logits, 1.0)?;
    let pick = tape.slice_cols(ls, label, 1)?;
    tape.scale(pick, -1.0)
}

/// Tape KL with the teacher row treated as a constant.
pub fn kl_temperature_var(tape: &mut Tape<'_>, teacher: &[f64], student: Var, t: f64) -> Result<Var> {
    let k = row_len(tape, student, "kl_temperature")?;
    if teacher.len() != k {
        return Err(Error::mismatch("kl_temperature", &[teacher.len()], &[k]));
    }
    if k < 2 {
        return Err(Error::arg("kl_temperature needs at least two entries"));
    }
    let lp = log_softmax_plain(teacher, t)?;
    let p: Vec<f64> = lp.iter().map(|v| libm::exp(*v)).collect();
    let entropy_term: f64 = p.iter().zip(&lp).filter(|(p, _)| **p > 0.0).map(|(p, l)| p * l).sum();
    let lq = tape.log_softmax(student, t)?;
    let pv = tape.constant(Tensor::row(p));
    let cross = tape.mul(pv, lq)?;
    let cross = tape.sum(cross)?;
    let neg = tape.scale(cross, -1.0)?;
    let c = tape.constant(Tensor::scalar(entropy_term));
    tape.add(neg, c)
}

pub fn nll_survival_var(tape: &mut Tape<'_>, logits: Var, bin: usize, censored: bool) -> Result<Var> {
    let n = row_len(tape, logits, "nll_survival")?;
    if bin >= n {
        return Err(Error::arg("survival bin outside the hazard range"));
    }
    let mut event_mask = vec![0.0; n];
    let mut surv_mask = vec![0.0; n];
    for k in 0..=bin {
        if k == bin && !censored {
            event_mask[k] = 1.0;
        } else {
            surv_mask[k] = 1.0;
        }
    }
    let h = tape.sigmoid(logits)?;
    let ones = tape.constant(Tensor::row(vec![1.0; n]));
    let one_minus = tape.sub(ones, h)?;
    let ln_h = tape.ln_clamped(h, LOG_FLOOR)?;
    let ln_s = tape.ln_clamped(one_minus, LOG_FLOOR)?;
    let em = tape.constant(Tensor::row(event_mask));
    let sm = tape.constant(Tensor::row(surv_mask));
    let a = tape.mul(em, ln_h)?;
    let b = tape.mul(sm, ln_s)?;
    let ll = tape.add(a, b)?;
    let ll = tape.sum(ll)?;
    tape.scale(ll, -1.0)
}

/// Student outputs for one modality subset.
#[derive(Clone, Copy, Debug)]
pub struct SubsetOutput {
    pub subset: Availability,
    pub logits: Var,
    pub fused: Var,
    pub task_loss: Var,
}

/// Teacher outputs used as fixed targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub logits: Vec<f64>,
    pub fused: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub task: f64,
    pub feature: f64,
    pub response: f64,
    /// Task loss of each subset in input order.
    pub per_subset: Vec<(Availability, f64)>,
}

/// `Σ task + α Σ KL(fused) + β Σ KL(logits)`. KL terms with zero weight are
/// not recorded, and `teacher` may be `None` only when both weights are zero.
pub fn total_loss(
    tape: &mut Tape<'_>,
    subsets: &[SubsetOutput],
    teacher: Option<&TeacherTargets>,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    if subsets.is_empty() {
        return Err(Error::arg("total_loss needs at least one subset"));
    }
    if weights.distills() && teacher.is_none() {
        return Err(Error::arg("distillation weights set without teacher outputs"));
    }
    let mut terms = Vec::with_capacity(subsets.len() * 3);
    let mut bd = LossBreakdown {
        total: 0.0,
        task: 0.0,
        feature: 0.0,
        response: 0.0,
        per_subset: Vec::with_capacity(subsets.len()),
    };
    for s in subsets {
        let v = tape.value(s.task_loss).data()[0];
        bd.task += v;
        bd.per_subset.push((s.subset, v));
        terms.push(s.task_loss);
        if let Some(t) = teacher {
            if weights.alpha > 0.0 {
                let kl = kl_temperature_var(tape, &t.fused, s.fused, weights.temperature)?;
                bd.feature += tape.value(kl).data()[0];
                terms.push(tape.scale(kl, weights.alpha)?);
            }
            if weights.beta > 0.0 {
                let kl = kl_temperature_var(tape, &t.logits, s.logits, weights.temperature)?;
                bd.response += tape.value(kl).data()[0];
                terms.push(tape.scale(kl, weights.beta)?);
            }
        }
    }
    let total = if terms.len() == 1 {
        terms[0]
    } else {
        let cat = tape.concat_cols(&terms)?;
        tape.sum(cat)?
    };
    bd.total = tape.value(total).data()[0];
    Ok((total, bd))
}
