//! Power-set student training against an EMA teacher.
//!
//! One step tokenizes each available modality once, forwards the student on
//! every non-empty subset (masked modalities are absent exactly as if the
//! record lacked them), sums all losses into a single backward pass, takes
//! one Adam step and then moves the teacher toward the student.

use alloc::vec::Vec;

use crate::data::{Availability, CaseRecord, Label, Modality};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_var, nll_survival_var, total_loss, LossBreakdown, LossWeights, SubsetOutput,
    TeacherTargets,
};
use crate::model::{Model, Prediction, Task};
use crate::numerics::{ema_update, Adam, AdamConfig, ParamStore, Rng, Tape, Var};

/// All non-empty subsets of `set`, ordered by size and then
/// lexicographically over C < R < P < G.
pub fn powerset_nonempty(set: Availability) -> Result<Vec<Availability>> {
    if set.is_empty() {
        return Err(Error::NoModality);
    }
    let members: Vec<Modality> = set.iter().collect();
    let mut out: Vec<Vec<Modality>> = Vec::with_capacity((1 << members.len()) - 1);
    for mask in 1u32..(1 << members.len()) {
        out.push(
            members
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, m)| *m)
                .collect(),
        );
    }
    out.sort_by(|a, b| {
        a.len()
            .cmp(&b.len())
            .then_with(|| a.iter().map(|m| m.index()).cmp(b.iter().map(|m| m.index())))
    });
    Ok(out.into_iter().map(Availability::from_modalities).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub weights: LossWeights,
    pub momentum: f64,
    pub weight_decay: f64,
    pub adam: AdamConfig,
    /// Caps the subsets per step; the full set is always kept and the rest
    /// sampled without replacement.
    pub max_subsets: Option<usize>,
}

impl DistillConfig {
    pub fn for_task(task: Task) -> Self {
        DistillConfig {
            weights: LossWeights::for_task(task),
            momentum: 0.99,
            weight_decay: 1e-5,
            adam: AdamConfig::default(),
            max_subsets: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DistillState {
    pub student: ParamStore,
    pub teacher: ParamStore,
    pub optimizer: Adam,
    pub config: DistillConfig,
    pub steps: u64,
    subset_rng: Rng,
}

impl DistillState {
    /// The teacher starts as an exact copy of the student.
    pub fn new(student: ParamStore, config: DistillConfig, seed: u64) -> Result<Self> {
        config.weights.validate()?;
        if !(0.0..=1.0).contains(&config.momentum) {
            return Err(Error::arg("EMA momentum must lie in [0, 1]"));
        }
        if config.max_subsets == Some(0) {
            return Err(Error::arg("max_subsets must be positive"));
        }
        let optimizer = Adam::new(&student, config.adam);
        Ok(DistillState {
            teacher: student.clone(),
            student,
            optimizer,
            config,
            steps: 0,
            subset_rng: Rng::stream(seed, 0x5b5e7),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub subsets: Vec<Availability>,
    pub losses: LossBreakdown,
    pub lr: f64,
}

/// Task loss of one forward pass against the case label.
pub fn task_loss(tape: &mut Tape<'_>, task: Task, logits: Var, label: &Label) -> Result<Var> {
    match (task, label) {
        (Task::Response, Label::Response(y)) => cross_entropy_var(tape, logits, usize::from(*y)),
        (Task::Survival, Label::Survival(s)) => nll_survival_var(tape, logits, s.bin, s.censored),
        _ => Err(Error::arg("label does not match the model task")),
    }
}

fn select_subsets(avail: Availability, state: &mut DistillState) -> Result<Vec<Availability>> {
    let all = powerset_nonempty(avail)?;
    match state.config.max_subsets {
        Some(cap) if cap < all.len() => {
            let mut idx: Vec<usize> = (0..all.len() - 1).collect();
            state.subset_rng.shuffle(&mut idx);
            idx.truncate(cap - 1);
            idx.sort_unstable();
            idx.push(all.len() - 1);
            Ok(idx.into_iter().map(|i| all[i]).collect())
        }
        _ => Ok(all),
    }
}

/// One optimizer step on `case` at learning rate `lr`.
pub fn distill_step(
    model: &Model,
    case: &CaseRecord,
    state: &mut DistillState,
    lr: f64,
) -> Result<StepReport> {
    let avail = case.availability();
    let subsets = select_subsets(avail, state)?;
    let weights = state.config.weights;
    let teacher = if weights.distills() {
        let p = teacher_predict(model, case, state)?;
        Some(TeacherTargets {
            logits: p.logits,
            fused: p.fused,
        })
    } else {
        None
    };

    let (grads, losses) = {
        let mut tape = Tape::with_params(&state.student);
        let tokens = model.tokenize(&mut tape, case, avail)?;
        let mut outs = Vec::with_capacity(subsets.len());
        for &s in &subsets {
            let f = model.forward_tokens(&mut tape, &tokens, s, false)?;
            let loss = task_loss(&mut tape, model.config.task, f.logits, &case.label)?;
            outs.push(SubsetOutput {
                subset: s,
                logits: f.logits,
                fused: f.fused,
                task_loss: loss,
            });
        }
        let (total, losses) = total_loss(&mut tape, &outs, teacher.as_ref(), &weights)?;
        (tape.backward(total)?, losses)
    };

    state.student.zero_grads();
    state.student.accumulate(&grads)?;
    state
        .optimizer
        .step(&mut state.student, lr, state.config.weight_decay)?;
    ema_update(&mut state.teacher, &state.student, state.config.momentum)?;
    state.steps += 1;
    Ok(StepReport {
        subsets,
        losses,
        lr,
    })
}

/// Teacher forward on every available modality.
pub fn teacher_predict(model: &Model, case: &CaseRecord, state: &DistillState) -> Result<Prediction> {
    model.predict(&state.teacher, case)
}
