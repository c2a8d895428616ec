//! Fold orchestration and on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use imfuse_core::explain::{export_saliency, integrated_gradients, token_saliency};
use imfuse_core::{CaseRecord, Modality};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate_fold, FoldReport, Section};
use crate::split::split_dataset;
use crate::train::{prepare_cases, train_fold, TrainLog};

pub fn fold_members(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}

pub fn check_fold(cfg: &RunConfig, fold: usize) -> Result<()> {
    if fold >= cfg.folds {
        return Err(HarnessError::Usage(format!("fold {fold} outside 0..{}", cfg.folds)));
    }
    Ok(())
}

/// Trains and evaluates one fold.
pub fn run_fold(cfg: &RunConfig, data: &Dataset, fold: usize) -> Result<(FoldReport, Checkpoint)> {
    check_fold(cfg, fold)?;
    let assignment = split_dataset(data, cfg.folds, cfg.seed)?;
    let (train_idx, _) = fold_members(&assignment, fold);
    let trained = train_fold(cfg, data, &train_idx)?;
    let ck = trained.checkpoint(cfg, Some(fold));
    let report = evaluate_checkpoint(&ck, data, trained.log)?;
    Ok((report, ck))
}

/// Re-evaluates a checkpoint on its own fold split.
pub fn evaluate_checkpoint(ck: &Checkpoint, data: &Dataset, log: TrainLog) -> Result<FoldReport> {
    let cfg = &ck.config;
    let fold = ck
        .fold
        .ok_or_else(|| HarnessError::Checkpoint("checkpoint does not record its fold".into()))?;
    check_fold(cfg, fold)?;
    if data.task != cfg.task {
        return Err(HarnessError::Config("checkpoint task does not match the dataset".into()));
    }
    let assignment = split_dataset(data, cfg.folds, cfg.seed)?;
    let (train_idx, test_idx) = fold_members(&assignment, fold);
    let model = ck.model()?;
    let train: Vec<&CaseRecord> = train_idx.iter().map(|&i| &data.cases[i]).collect();
    let test: Vec<&CaseRecord> = test_idx.iter().map(|&i| &data.cases[i]).collect();
    evaluate_fold(cfg, fold, &model, &ck.student, &ck.survival_cuts, log, &train, &test)
}

pub fn run_cv(cfg: &RunConfig, data: &Dataset) -> Result<Vec<FoldReport>> {
    (0..cfg.folds).map(|k| run_fold(cfg, data, k).map(|r| r.0)).collect()
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold{fold}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_train_log(dir: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "lr_end", "total", "task", "feature", "response"])?;
    for e in &log.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.lr_end.to_string(),
            e.total.to_string(),
            e.task.to_string(),
            e.feature.to_string(),
            e.response.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Dataset(e.to_string()))?;
    write_text(&dir.join("train_log.csv"), &String::from_utf8_lossy(&bytes))?;
    write_json(&dir.join("train_log.json"), log)
}

fn section_tables(dir: &Path, s: &Section) -> Result<()> {
    let mut p = String::from("case_id,availability,score,label,time\n");
    for c in &s.predictions {
        let t = c.time.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(p, "{},{},{},{},{}", c.case_id, c.availability, c.score, c.label, t);
    }
    write_text(&dir.join(format!("predictions_{}.csv", s.tag)), &p)?;
    if !s.roc.is_empty() {
        let mut r = String::from("fpr,tpr\n");
        for (f, t) in &s.roc {
            let _ = writeln!(r, "{f},{t}");
        }
        write_text(&dir.join(format!("roc_{}.csv", s.tag)), &r)?;
    }
    if !s.km.is_empty() {
        let mut k = String::from("group,time,survival,at_risk\n");
        for g in &s.km {
            let _ = writeln!(k, "{},0,1,", g.group);
            for ((t, v), n) in g.times.iter().zip(&g.survival).zip(&g.at_risk) {
                let _ = writeln!(k, "{},{t},{v},{n}", g.group);
            }
        }
        write_text(&dir.join(format!("km_{}.csv", s.tag)), &k)?;
    }
    Ok(())
}

/// `report.json` plus prediction, ROC and KM tables for both sections.
pub fn write_fold_report(dir: &Path, report: &FoldReport) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join("report.json"), report)?;
    section_tables(dir, &report.train)?;
    section_tables(dir, &report.test)
}

/// Integrated-gradient attributions and saliency exports for one case.
pub fn explain_case(
    ck: &Checkpoint,
    case: &CaseRecord,
    steps: usize,
    top_k: usize,
    dir: &Path,
) -> Result<()> {
    ensure_dir(dir)?;
    let model = ck.model()?;
    let mut prepared = prepare_cases([case], ck.config.modality_filter()?, &ck.survival_cuts);
    let case = prepared
        .pop()
        .ok_or_else(|| HarnessError::Usage("case has none of the configured modalities".into()))?;
    if !case.clinical.is_empty() {
        let a = integrated_gradients(&model, &ck.student, &case, steps)?;
        let mut csv = String::from("case_id,key,attribution\n");
        for (k, v) in &a.records {
            let _ = writeln!(csv, "{},{k},{v}", a.case_id);
        }
        write_text(&dir.join(format!("attribution_{}.csv", case.case_id)), &csv)?;
        write_json(
            &dir.join(format!("attribution_{}.json", case.case_id)),
            &serde_json::json!({
                "case_id": a.case_id,
                "target": format!("{:?}", a.target),
                "steps": a.steps,
                "baseline": a.baseline,
                "records": a.records,
                "output": a.output,
                "baseline_output": a.baseline_output,
                "completeness_residual": a.residual,
            }),
        )?;
    }
    let pred = model.predict(&ck.student, &case)?;
    let mut out = String::new();
    let mut header = true;
    for m in Modality::ALL {
        if !case.availability().contains(m) {
            continue;
        }
        let Ok(sal) = token_saliency(&pred, &case, m) else {
            continue;
        };
        export_saliency(&sal, top_k.min(sal.scores.len()), &mut out, header)?;
        header = false;
    }
    write_text(&dir.join(format!("saliency_{}.csv", case.case_id)), &out)
}
