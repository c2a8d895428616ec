//! `imfuse <gen|split|train|eval|explain|report>`.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{load, GenConfig, RunConfig};
use crate::dataset::read_dataset;
use crate::error::{HarnessError, Result};
use crate::evaluate::FoldReport;
use crate::pipeline::{
    ensure_dir, evaluate_checkpoint, explain_case, fold_dir, run_fold, write_fold_report,
    write_json, write_train_log,
};
use crate::report::{aggregate, summary_csv};
use crate::split::split_dataset;
use crate::synthetic::generate_synthetic;
use crate::train::TrainLog;

#[derive(Parser, Debug)]
#[command(name = "imfuse", version, about = "Incomplete multimodal fusion with power-set distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set seed=2` or `--set model.d=16`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides the config's `out`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory
    Gen(Common),
    /// Write the fold assignment
    Split(Common),
    /// Train one fold, or every fold when --fold is omitted
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Evaluate trained checkpoints
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Attributions and saliency for one case
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value_t = 6)]
        top_k: usize,
    },
    /// Merge fold reports into an aggregate table
    Report(Common),
}

fn with_out(mut overrides: Vec<String>, out: &Option<PathBuf>) -> Vec<String> {
    if let Some(o) = out {
        overrides.push(format!("out={}", serde_json::Value::String(o.display().to_string())));
    }
    overrides
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let cfg: RunConfig = load(c.config.as_deref(), &with_out(c.set.clone(), &c.out))?;
    cfg.validate()?;
    Ok(cfg)
}

fn folds_of(cfg: &RunConfig, fold: Option<usize>) -> Vec<usize> {
    match fold {
        Some(f) => vec![f],
        None => (0..cfg.folds).collect(),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(c) => {
            let cfg: GenConfig = load(c.config.as_deref(), &with_out(c.set.clone(), &c.out))?;
            let meta = generate_synthetic(&cfg, &cfg.out)?;
            for w in &meta.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Split(c) => {
            let cfg = run_config(&c)?;
            let data = read_dataset(&cfg.dataset)?;
            let folds = split_dataset(&data, cfg.folds, cfg.seed)?;
            ensure_dir(&cfg.out)?;
            let mut text = String::from("case_id,fold\n");
            for (case, f) in data.cases.iter().zip(folds) {
                text += &format!("{},{f}\n", case.case_id);
            }
            let p = cfg.out.join("folds.csv");
            std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))
        }
        Command::Train { common, fold } => {
            let cfg = run_config(&common)?;
            let data = read_dataset(&cfg.dataset)?;
            for k in folds_of(&cfg, fold) {
                let (report, ck) = run_fold(&cfg, &data, k)?;
                let dir = fold_dir(&cfg.out, k);
                ensure_dir(&dir)?;
                write_json(&dir.join("config.json"), &cfg)?;
                ck.save(&dir.join("checkpoint.bin"))?;
                write_train_log(&dir, &report.train_log)?;
            }
            Ok(())
        }
        Command::Eval { common, fold } => {
            let cfg = run_config(&common)?;
            let data = read_dataset(&cfg.dataset)?;
            for k in folds_of(&cfg, fold) {
                let dir = fold_dir(&cfg.out, k);
                let ck = Checkpoint::load(&dir.join("checkpoint.bin"))?;
                let log_path = dir.join("train_log.json");
                let log: TrainLog = match std::fs::read_to_string(&log_path) {
                    Ok(t) => serde_json::from_str(&t)?,
                    Err(_) => TrainLog::default(),
                };
                let report = evaluate_checkpoint(&ck, &data, log)?;
                write_fold_report(&dir, &report)?;
            }
            Ok(())
        }
        Command::Explain {
            common,
            fold,
            case,
            steps,
            top_k,
        } => {
            let cfg = run_config(&common)?;
            let data = read_dataset(&cfg.dataset)?;
            let i = data
                .index_of(&case)
                .ok_or_else(|| HarnessError::Usage(format!("unknown case `{case}`")))?;
            let dir = fold_dir(&cfg.out, fold);
            let ck = Checkpoint::load(&dir.join("checkpoint.bin"))?;
            explain_case(&ck, &data.cases[i], steps, top_k, &dir.join("explain"))
        }
        Command::Report(c) => {
            let cfg = run_config(&c)?;
            let mut reports: Vec<FoldReport> = Vec::new();
            for k in 0..cfg.folds {
                let p = fold_dir(&cfg.out, k).join("report.json");
                let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
                reports.push(serde_json::from_str(&text)?);
            }
            let agg = aggregate(&reports)?;
            write_json(&cfg.out.join("report.json"), &agg)?;
            let p = cfg.out.join("summary.csv");
            std::fs::write(&p, summary_csv(&agg)?).map_err(|e| HarnessError::io(&p, e))
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}
