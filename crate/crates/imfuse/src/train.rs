//! Per-fold training loop.

use imfuse_core::distill::{distill_step, DistillState};
use imfuse_core::model::Model;
use imfuse_core::numerics::cosine_lr;
use imfuse_core::{Availability, CaseRecord, Error as CoreError, Label, Rng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, TaskKind};
use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_end: f64,
    pub total: f64,
    pub task: f64,
    pub feature: f64,
    pub response: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub cases: usize,
    pub steps: u64,
    /// Means over the epoch's steps.
    pub epochs: Vec<EpochLog>,
}

pub struct TrainedFold {
    pub model: Model,
    pub state: DistillState,
    pub survival_cuts: Vec<f64>,
    pub log: TrainLog,
}

impl TrainedFold {
    pub fn checkpoint(&self, cfg: &RunConfig, fold: Option<usize>) -> Checkpoint {
        let (mut student, mut teacher) = (self.state.student.clone(), self.state.teacher.clone());
        student.zero_grads();
        teacher.zero_grads();
        Checkpoint {
            config: cfg.clone(),
            fold,
            survival_cuts: self.survival_cuts.clone(),
            steps: self.state.steps,
            student,
            teacher: Some(teacher),
        }
    }
}

/// `n_bins − 1` boundaries at the quantiles of uncensored times.
pub fn survival_cuts(cases: &[&CaseRecord], n_bins: usize) -> Result<Vec<f64>> {
    let mut times: Vec<f64> = cases
        .iter()
        .filter_map(|c| c.survival())
        .filter(|s| !s.censored)
        .map(|s| s.time)
        .collect();
    if times.is_empty() {
        return Err(HarnessError::Dataset("no uncensored training times to place survival bins".into()));
    }
    times.sort_by(f64::total_cmp);
    Ok((1..n_bins)
        .map(|j| {
            let pos = (times.len() - 1) as f64 * j as f64 / n_bins as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(times.len() - 1);
            times[lo] + (pos - lo as f64) * (times[hi] - times[lo])
        })
        .collect())
}

/// Index of the interval containing `time`; boundary values fall right.
pub fn assign_bin(time: f64, cuts: &[f64]) -> usize {
    cuts.partition_point(|&c| c <= time)
}

/// Restricts cases to `filter`, drops those left empty and stamps survival
/// bins.
pub fn prepare_cases<'a>(
    cases: impl IntoIterator<Item = &'a CaseRecord>,
    filter: Availability,
    cuts: &[f64],
) -> Vec<CaseRecord> {
    cases
        .into_iter()
        .filter(|c| !c.availability().intersect(filter).is_empty())
        .map(|c| {
            let mut c = c.restricted_to(filter);
            if let Label::Survival(s) = &mut c.label {
                s.bin = assign_bin(s.time, cuts);
            }
            c
        })
        .collect()
}

/// Trains on the cases at `train_idx` from a fresh seeded initialization.
pub fn train_fold(cfg: &RunConfig, data: &Dataset, train_idx: &[usize]) -> Result<TrainedFold> {
    cfg.validate()?;
    if data.task != cfg.task {
        return Err(HarnessError::Config("config task does not match the dataset".into()));
    }
    let filter = cfg.modality_filter()?;
    let raw: Vec<&CaseRecord> = train_idx.iter().map(|&i| &data.cases[i]).collect();
    let cuts = match cfg.task {
        TaskKind::Survival => survival_cuts(&raw, cfg.model.n_bins)?,
        TaskKind::Response => Vec::new(),
    };
    let cases = prepare_cases(raw, filter, &cuts);
    let (model, params) = Model::init(cfg.model_config(), cfg.seed)?;
    let mut state = DistillState::new(params, cfg.distill_config(), cfg.seed)?;
    let mut log = TrainLog {
        cases: cases.len(),
        ..TrainLog::default()
    };
    let total_steps = cfg.epochs * cases.len();
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut shuffler = Rng::stream(cfg.seed, 1);
    for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        let mut e = EpochLog {
            epoch,
            ..EpochLog::default()
        };
        for &i in &order {
            let lr = cosine_lr(state.steps as usize, total_steps, cfg.lr)?;
            let case = &cases[i];
            let r = distill_step(&model, case, &mut state, lr).map_err(|err| match err {
                CoreError::NonFinite(what) => HarnessError::Diverged {
                    case_id: case.case_id.clone(),
                    step: state.steps,
                    detail: what.to_string(),
                },
                other => other.into(),
            })?;
            if !r.losses.total.is_finite() {
                return Err(HarnessError::Diverged {
                    case_id: case.case_id.clone(),
                    step: state.steps,
                    detail: "total loss".into(),
                });
            }
            e.lr_end = lr;
            e.total += r.losses.total;
            e.task += r.losses.task;
            e.feature += r.losses.feature;
            e.response += r.losses.response;
        }
        let n = cases.len().max(1) as f64;
        e.total /= n;
        e.task /= n;
        e.feature /= n;
        e.response /= n;
        log.epochs.push(e);
    }
    log.steps = state.steps;
    Ok(TrainedFold {
        model,
        state,
        survival_cuts: cuts,
        log,
    })
}
