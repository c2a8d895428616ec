//! Fold evaluation: full-input and per-subset metrics, per-case
//! predictions, ROC points and Kaplan–Meier tables.

use std::collections::BTreeMap;

use imfuse_core::distill::powerset_nonempty;
use imfuse_core::metrics::{
    classification_report, concordance_index, decile_event_times, kaplan_meier, logrank, roc_auc,
    roc_points, stratify_by_median, time_dependent_auc, RiskGroup, SurvivalSample,
};
use imfuse_core::model::Model;
use imfuse_core::{Availability, CaseRecord, Label, ParamStore};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TaskKind};
use crate::error::Result;
use crate::train::{prepare_cases, TrainLog};

/// Metric name → value; `None` where the metric is undefined on the
/// section (e.g. a single class).
pub type MetricMap = BTreeMap<String, Option<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    /// Modality codes, or `available` for each case's full input.
    pub subset: String,
    pub n_cases: usize,
    pub metrics: MetricMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_id: String,
    pub availability: String,
    /// P(responder) or risk.
    pub score: f64,
    pub logits: Vec<f64>,
    /// Response class, or event indicator for survival.
    pub label: f64,
    pub time: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KmTable {
    pub group: String,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub tag: String,
    pub full: SubsetRow,
    pub subsets: Vec<SubsetRow>,
    pub predictions: Vec<CasePrediction>,
    pub roc: Vec<(f64, f64)>,
    pub km: Vec<KmTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub config: RunConfig,
    pub fold: usize,
    pub train_log: TrainLog,
    pub survival_cuts: Vec<f64>,
    pub train: Section,
    pub test: Section,
}

fn put(m: &mut MetricMap, k: &str, v: Option<f64>) {
    m.insert(k.to_string(), v);
}

/// Metrics for one set of `(score, case)` pairs.
pub fn score_metrics(task: TaskKind, scored: &[(f64, &CaseRecord)]) -> MetricMap {
    let mut m = MetricMap::new();
    match task {
        TaskKind::Response => {
            let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
            let labels: Vec<bool> = scored.iter().map(|s| s.1.response_class() == Some(1)).collect();
            put(&mut m, "auc", roc_auc(&scores, &labels).ok());
            let r = classification_report(&scores, &labels, 0.5).ok();
            put(&mut m, "accuracy", r.map(|r| r.accuracy));
            put(&mut m, "precision_macro", r.map(|r| r.precision));
            put(&mut m, "recall_macro", r.map(|r| r.recall));
            put(&mut m, "f1_macro", r.map(|r| r.f1));
        }
        TaskKind::Survival => {
            let samples: Vec<SurvivalSample> = scored
                .iter()
                .filter_map(|(r, c)| c.survival().map(|s| SurvivalSample::new(*r, s.time, !s.censored)))
                .collect();
            put(&mut m, "c_index", concordance_index(&samples).ok());
            let td = time_dependent_auc(&samples, &decile_event_times(&samples)).ok();
            put(&mut m, "td_auc", td.map(|t| t.mean));
            let lr = split_groups(&samples).and_then(|(lo, hi)| logrank(&hi, &lo).ok());
            put(&mut m, "logrank_chi2", lr.map(|l| l.chi2));
            put(&mut m, "logrank_p", lr.map(|l| l.p_value));
        }
    }
    m
}

type Groups = (Vec<SurvivalSample>, Vec<SurvivalSample>);

fn split_groups(samples: &[SurvivalSample]) -> Option<Groups> {
    let risks: Vec<f64> = samples.iter().map(|s| s.risk).collect();
    let groups = stratify_by_median(&risks).ok()?;
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for (s, g) in samples.iter().zip(groups) {
        match g {
            RiskGroup::Low => lo.push(*s),
            RiskGroup::High => hi.push(*s),
        }
    }
    if lo.is_empty() || hi.is_empty() {
        None
    } else {
        Some((lo, hi))
    }
}

fn km_tables(samples: &[SurvivalSample]) -> Vec<KmTable> {
    let Some((lo, hi)) = split_groups(samples) else {
        return Vec::new();
    };
    [("low", lo), ("high", hi)]
        .into_iter()
        .filter_map(|(name, g)| {
            kaplan_meier(&g).ok().map(|c| KmTable {
                group: name.to_string(),
                times: c.times,
                survival: c.survival,
                at_risk: c.at_risk,
            })
        })
        .collect()
}

/// Scores every case on its available modalities and on every modality
/// subset of `filter` that the case fully covers.
pub fn evaluate_section(
    tag: &str,
    model: &Model,
    params: &ParamStore,
    task: TaskKind,
    cases: &[CaseRecord],
    filter: Availability,
) -> Result<Section> {
    let mut predictions = Vec::with_capacity(cases.len());
    let mut full = Vec::with_capacity(cases.len());
    for c in cases {
        let p = model.predict(params, c)?;
        let score = p.score();
        full.push((score, c));
        let (label, time) = match c.label {
            Label::Response(y) => (f64::from(y), None),
            Label::Survival(s) => (if s.censored { 0.0 } else { 1.0 }, Some(s.time)),
        };
        predictions.push(CasePrediction {
            case_id: c.case_id.clone(),
            availability: c.availability().to_string(),
            score,
            logits: p.logits,
            label,
            time,
        });
    }
    let mut subsets = Vec::new();
    for s in powerset_nonempty(filter)? {
        let mut scored = Vec::new();
        for c in cases.iter().filter(|c| s.is_subset_of(c.availability())) {
            scored.push((model.predict_subset(params, c, s)?.score(), c));
        }
        subsets.push(SubsetRow {
            subset: s.to_string(),
            n_cases: scored.len(),
            metrics: score_metrics(task, &scored),
        });
    }
    let (roc, km) = match task {
        TaskKind::Response => {
            let scores: Vec<f64> = full.iter().map(|s| s.0).collect();
            let labels: Vec<bool> = full.iter().map(|s| s.1.response_class() == Some(1)).collect();
            (roc_points(&scores, &labels).unwrap_or_default(), Vec::new())
        }
        TaskKind::Survival => {
            let samples: Vec<SurvivalSample> = full
                .iter()
                .filter_map(|(r, c)| c.survival().map(|s| SurvivalSample::new(*r, s.time, !s.censored)))
                .collect();
            (Vec::new(), km_tables(&samples))
        }
    };
    Ok(Section {
        tag: tag.to_string(),
        full: SubsetRow {
            subset: "available".to_string(),
            n_cases: full.len(),
            metrics: score_metrics(task, &full),
        },
        subsets,
        predictions,
        roc,
        km,
    })
}

/// Evaluates a trained fold on its training and test cases.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fold(
    cfg: &RunConfig,
    fold: usize,
    model: &Model,
    params: &ParamStore,
    cuts: &[f64],
    train_log: TrainLog,
    train: &[&CaseRecord],
    test: &[&CaseRecord],
) -> Result<FoldReport> {
    let filter = cfg.modality_filter()?;
    let train_cases = prepare_cases(train.iter().copied(), filter, cuts);
    let test_cases = prepare_cases(test.iter().copied(), filter, cuts);
    Ok(FoldReport {
        config: cfg.clone(),
        fold,
        train_log,
        survival_cuts: cuts.to_vec(),
        train: evaluate_section("train", model, params, cfg.task, &train_cases, filter)?,
        test: evaluate_section("test", model, params, cfg.task, &test_cases, filter)?,
    })
}
