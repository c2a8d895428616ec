//! Integrated gradients over clinical record values, and attention-based
//! token saliency.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::data::{Availability, CaseRecord, Modality};
use crate::error::{Error, Result};
use crate::model::{risk_var, Model, Prediction, Task};
use crate::numerics::{ParamStore, Tape, Tensor};

pub const MIN_IG_STEPS: usize = 16;

/// Scalar explained by integrated gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IgTarget {
    /// Log-probability of this response class.
    LogProb(usize),
    Risk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub case_id: String,
    pub target: IgTarget,
    pub steps: usize,
    /// Baseline description; always all clinical values at zero.
    pub baseline: &'static str,
    /// `(key, contribution)` in record order.
    pub records: Vec<(String, f64)>,
    pub output: f64,
    pub baseline_output: f64,
    /// `Σ contributions − (output − baseline_output)`
    pub residual: f64,
}

/// Midpoint-rule path integral of `grad` from `baseline` to `input`:
/// `(x − x′)·(1/n)·Σ ∇F(x′ + (s − ½)/n·(x − x′))`.
pub fn ig_path<F>(mut grad: F, input: &[f64], baseline: &[f64], steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if input.len() != baseline.len() {
        return Err(Error::mismatch("ig baseline", &[baseline.len()], &[input.len()]));
    }
    if steps == 0 {
        return Err(Error::arg("integrated gradients needs at least one step"));
    }
    let mut acc = alloc::vec![0.0; input.len()];
    let mut point = alloc::vec![0.0; input.len()];
    for s in 0..steps {
        let a = (s as f64 + 0.5) / steps as f64;
        for ((p, x), b) in point.iter_mut().zip(input).zip(baseline) {
            *p = b + a * (x - b);
        }
        let g = grad(&point)?;
        if g.len() != input.len() {
            return Err(Error::mismatch("ig gradient", &[g.len()], &[input.len()]));
        }
        for (a, g) in acc.iter_mut().zip(g) {
            *a += g;
        }
    }
    Ok(acc
        .iter()
        .zip(input.iter().zip(baseline))
        .map(|(g, (x, b))| (x - b) * g / steps as f64)
        .collect())
}

/// The explained scalar and its gradient with respect to the clinical
/// values, with every available modality in the forward pass.
pub fn ig_target(
    model: &Model,
    params: &ParamStore,
    case: &CaseRecord,
    values: &[f64],
    target: IgTarget,
) -> Result<(f64, Vec<f64>)> {
    if values.len() != case.clinical.len() {
        return Err(Error::mismatch("clinical values", &[values.len()], &[case.clinical.len()]));
    }
    let mut tape = Tape::with_params(params);
    let v = tape.input(Tensor::column(values.to_vec()));
    let tokens = model.tokenize_with_clinical(&mut tape, case, Availability::all(), v)?;
    let out = model.forward_tokens(&mut tape, &tokens, Availability::all(), false)?;
    let y = match target {
        IgTarget::LogProb(c) => {
            let ls = tape.log_softmax(out.logits, 1.0)?;
            tape.slice_cols(ls, c, 1)?
        }
        IgTarget::Risk => risk_var(&mut tape, out.logits)?,
    };
    let value = tape.value(y).data()[0];
    let grads = tape.backward(y)?;
    let g = grads
        .wrt(v)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| alloc::vec![0.0; values.len()]);
    Ok((value, g))
}

/// Attributions of each clinical record value against an all-zero baseline.
/// The target is the log-probability of the predicted class for response
/// models and the risk score for survival models.
pub fn integrated_gradients(
    model: &Model,
    params: &ParamStore,
    case: &CaseRecord,
    steps: usize,
) -> Result<Attribution> {
    if case.clinical.is_empty() {
        return Err(Error::MissingModality(Modality::Clinical));
    }
    if steps < MIN_IG_STEPS {
        return Err(Error::arg(format!("integrated gradients needs at least {MIN_IG_STEPS} steps")));
    }
    let input: Vec<f64> = case.clinical.iter().map(|r| r.1).collect();
    let baseline = alloc::vec![0.0; input.len()];
    let target = match model.config.task {
        Task::Response => {
            let p = model.predict(params, case)?;
            let c = if p.logits[1] > p.logits[0] { 1 } else { 0 };
            IgTarget::LogProb(c)
        }
        Task::Survival => IgTarget::Risk,
    };
    let contrib = ig_path(
        |x| ig_target(model, params, case, x, target).map(|r| r.1),
        &input,
        &baseline,
        steps,
    )?;
    let (output, _) = ig_target(model, params, case, &input, target)?;
    let (baseline_output, _) = ig_target(model, params, case, &baseline, target)?;
    let residual = contrib.iter().sum::<f64>() - (output - baseline_output);
    Ok(Attribution {
        case_id: case.case_id.clone(),
        target,
        steps,
        baseline: "zeros",
        records: case
            .clinical
            .iter()
            .map(|r| r.0.clone())
            .zip(contrib)
            .collect(),
        output,
        baseline_output,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSaliency {
    pub case_id: String,
    pub modality: Modality,
    /// Sum to one.
    pub scores: Vec<f64>,
    /// Patch id, slice index, gene or record key per token.
    pub source_ids: Vec<String>,
}

impl TokenSaliency {
    /// Token indices by descending score, ties by source id.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then_with(|| self.source_ids[a].cmp(&self.source_ids[b]))
        });
        idx
    }

    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        self.ranking()
            .into_iter()
            .take(k)
            .map(|i| (self.source_ids[i].clone(), self.scores[i]))
            .collect()
    }
}

fn source_ids(case: &CaseRecord, m: Modality) -> Vec<String> {
    match m {
        Modality::Clinical => case.clinical.iter().map(|r| r.0.clone()).collect(),
        Modality::Radiology => (0..case.radiology.len()).map(|i| i.to_string()).collect(),
        Modality::Pathology => case.pathology.iter().map(|p| p.id.clone()).collect(),
        Modality::Genomic => case.genomic.iter().map(|g| g.0.clone()).collect(),
    }
}

/// Mean cross-modal attention that other modalities' class tokens pay to
/// each token of `modality`, over layers and heads, renormalized.
pub fn token_saliency(
    prediction: &Prediction,
    case: &CaseRecord,
    modality: Modality,
) -> Result<TokenSaliency> {
    let ids = source_ids(case, modality);
    let n = ids.len();
    let mut scores = alloc::vec![0.0; n];
    let mut maps = 0usize;
    for rec in &prediction.cross {
        let Some(&(_, start, len)) = rec.segments.iter().find(|s| s.0 == modality) else {
            continue;
        };
        if len != n {
            return Err(Error::mismatch("saliency tokens", &[len], &[n]));
        }
        for head in &rec.map.heads {
            let row = head.row_slice(0);
            for (s, w) in scores.iter_mut().zip(&row[start..start + len]) {
                *s += w;
            }
            maps += 1;
        }
    }
    if maps == 0 {
        return Err(Error::Undefined(format!(
            "no cross-modal attention over {modality} tokens"
        )));
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NonFinite("saliency mass"));
    }
    for s in &mut scores {
        *s /= total;
    }
    Ok(TokenSaliency {
        case_id: case.case_id.clone(),
        modality,
        scores,
        source_ids: ids,
    })
}

pub const SALIENCY_HEADER: &str = "case_id,modality,source_id,score,rank";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes the `top_k` highest-scoring tokens as CSV rows (rank from 1),
/// preceded by the header when `header` is set.
pub fn export_saliency<W: Write>(
    saliency: &TokenSaliency,
    top_k: usize,
    writer: &mut W,
    header: bool,
) -> Result<()> {
    if top_k > saliency.scores.len() {
        return Err(Error::arg("top_k exceeds the token count"));
    }
    let io = |_| Error::arg("saliency writer failed");
    if header {
        writeln!(writer, "{SALIENCY_HEADER}").map_err(io)?;
    }
    for (rank, (id, score)) in saliency.top_k(top_k).into_iter().enumerate() {
        writeln!(
            writer,
            "{},{},{},{:e},{}",
            csv_field(&saliency.case_id),
            saliency.modality.name(),
            csv_field(&id),
            score,
            rank + 1
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ig_linear_is_exact() {
        let w = [0.5, -2.0, 3.0];
        let x = [1.0, 2.0, -1.0];
        let a = ig_path(|_| Ok(w.to_vec()), &x, &[0.0; 3], 1).unwrap();
        for i in 0..3 {
            assert!((a[i] - w[i] * x[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn ig_quadratic_midpoint() {
        // F = x², exact IG = x² for baseline 0; midpoint is exact for linear ∇F.
        let a = ig_path(|p| Ok(alloc::vec![2.0 * p[0]]), &[3.0], &[0.0], 7).unwrap();
        assert!((a[0] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn export_ranks_ties_by_id() {
        let s = TokenSaliency {
            case_id: "c1".into(),
            modality: Modality::Pathology,
            scores: alloc::vec![0.25, 0.5, 0.25],
            source_ids: alloc::vec!["p9".into(), "p1".into(), "p2".into()],
        };
        let mut out = String::new();
        export_saliency(&s, 3, &mut out, true).unwrap();
        let ids: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
        assert_eq!(ids, ["p1", "p2", "p9"]);
        assert!(export_saliency(&s, 4, &mut out, false).is_err());
    }
}
