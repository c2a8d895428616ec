//! Cross-fold aggregation.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::{FoldReport, Section};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub section: String,
    pub subset: String,
    pub metric: String,
    /// One entry per fold, in fold order.
    pub values: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Sample standard deviation over defined values.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: RunConfig,
    pub folds: Vec<usize>,
    pub rows: Vec<AggregateRow>,
}

impl AggregateReport {
    pub fn get(&self, section: &str, subset: &str, metric: &str) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.section == section && r.subset == subset && r.metric == metric)
    }
}

pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = (v.len() > 1).then(|| {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    });
    (Some(mean), std)
}

fn rows_of(s: &Section) -> impl Iterator<Item = &crate::evaluate::SubsetRow> {
    std::iter::once(&s.full).chain(s.subsets.iter())
}

fn pick<'a>(r: &'a FoldReport, tag: &str) -> &'a Section {
    if tag == "test" {
        &r.test
    } else {
        &r.train
    }
}

/// Merges fold reports. Every report must come from the same config apart
/// from its fold.
pub fn aggregate(reports: &[FoldReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Usage("no fold reports to merge".into()))?;
    if reports.iter().any(|r| r.config != first.config) {
        return Err(HarnessError::Config("fold reports come from different configs".into()));
    }
    let mut rows = Vec::new();
    for tag in ["test", "train"] {
        for row in rows_of(pick(first, tag)) {
            for metric in row.metrics.keys() {
                let values: Vec<Option<f64>> = reports
                    .iter()
                    .map(|r| {
                        rows_of(pick(r, tag))
                            .find(|x| x.subset == row.subset)
                            .and_then(|x| x.metrics.get(metric).copied().flatten())
                    })
                    .collect();
                let (mean, std) = mean_std(&values);
                rows.push(AggregateRow {
                    section: tag.to_string(),
                    subset: row.subset.clone(),
                    metric: metric.clone(),
                    values,
                    mean,
                    std,
                });
            }
        }
    }
    Ok(AggregateReport {
        config: first.config.clone(),
        folds: reports.iter().map(|r| r.fold).collect(),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// `section,subset,metric,mean,std,fold0..` table.
pub fn summary_csv(report: &AggregateReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["section", "subset", "metric", "mean", "std"].map(String::from).to_vec();
    header.extend(report.folds.iter().map(|f| format!("fold{f}")));
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.section.clone(), r.subset.clone(), r.metric.clone(), opt(r.mean), opt(r.std)];
        rec.extend(r.values.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Dataset(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
