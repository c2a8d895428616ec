//! Synthetic cohorts with planted, analytically tractable evidence.
//!
//! Each modality reduces to two Gaussian scalars: a marginal channel
//! `s = marginal·u + ε` and a nuisance channel `n`. The clinical nuisance
//! channel is `joint·u + z + ε`, the others are `z + ε`, with one shared
//! `z` per case. A large nuisance variance hides the joint term unless the
//! clinical records are combined with another modality. Here `u = 2y − 1`
//! for the clean response class and `signal_scale·η` for survival, with
//! latent risk `η ~ N(0, 1)`. Response labels may be flipped afterwards.
//!
//! Clinical and genomic scalars are written directly as record values.
//! Radiology slices and the planted pathology patch embed them along fixed
//! orthonormal directions. Every slice and patch also carries a structured
//! background (random coefficients on a few further orthonormal directions)
//! and small isotropic noise. The planted patch carries a constant marker
//! direction as well.

use std::collections::BTreeMap;
use std::path::Path;

use imfuse_core::data::{Patch, PATHOLOGY_DIM, RADIOLOGY_DIM};
use imfuse_core::metrics::{concordance_index, SurvivalSample};
use imfuse_core::{Availability, CaseRecord, Label, Modality, Rng, SurvivalLabel};
use serde::{Deserialize, Serialize};

use crate::config::{GenConfig, TaskKind};
use crate::dataset::{write_dataset, Dataset};
use crate::error::{HarnessError, Result};

pub const META_FILE: &str = "synthetic.json";

pub const CLINICAL_MARGINAL_KEY: &str = "marker_a";
pub const CLINICAL_JOINT_KEY: &str = "marker_b";
pub const GENOMIC_MARGINAL_GENE: &str = "GENE_A";
pub const GENOMIC_NUISANCE_GENE: &str = "GENE_B";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub config: GenConfig,
    /// Best achievable pooled AUC given the generative model (response).
    pub bayes_auc: Option<f64>,
    /// C-index of the true latent risk on the generated cases (survival).
    pub oracle_c_index: Option<f64>,
    /// Id of the high-signal pathology patch per case.
    pub planted_patches: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub meta: SyntheticMeta,
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability of each availability pattern. A draw with nothing present
/// is given clinical records.
pub fn availability_distribution(cfg: &GenConfig) -> Vec<(Availability, f64)> {
    let miss = cfg.missing.as_array();
    let mut out: Vec<(Availability, f64)> = Vec::new();
    let mut empty = 0.0;
    for bits in 0u8..16 {
        let a = Availability::from_bits(bits);
        let p: f64 = Modality::ALL
            .iter()
            .map(|m| if a.contains(*m) { 1.0 - miss[m.index()] } else { miss[m.index()] })
            .product();
        if a.is_empty() {
            empty = p;
        } else {
            out.push((a, p));
        }
    }
    for (a, p) in &mut out {
        if *a == Availability::only(Modality::Clinical) {
            *p += empty;
        }
    }
    out
}

/// Extra variance on a channel from the isotropic noise, which is the only
/// noise reaching the signal directions.
fn background_variance(cfg: &GenConfig, m: Modality) -> f64 {
    let b2 = cfg.signal.isotropic * cfg.signal.isotropic;
    match m {
        Modality::Radiology => b2 / cfg.shape.slices as f64,
        Modality::Pathology => b2,
        _ => 0.0,
    }
}

/// Squared Mahalanobis separation of the two response classes when the
/// modalities in `avail` are observed.
pub fn class_separation(cfg: &GenConfig, avail: Availability) -> f64 {
    let s = &cfg.signal;
    let sigma2 = s.channel_noise * s.channel_noise;
    let tau2 = s.nuisance_std * s.nuisance_std;
    let mut marginal = 0.0;
    let mut inv_sum = 0.0;
    for m in avail.iter() {
        let d = sigma2 + background_variance(cfg, m);
        marginal += (2.0 * s.marginal) * (2.0 * s.marginal) / d;
        inv_sum += 1.0 / d;
    }
    if !avail.contains(Modality::Clinical) {
        return marginal;
    }
    // Σ = D + τ²11ᵀ; (Σ⁻¹)_CC by Sherman–Morrison.
    let dc = sigma2;
    let inv_cc = 1.0 / dc - tau2 / (dc * dc) / (1.0 + tau2 * inv_sum);
    marginal + (2.0 * s.joint) * (2.0 * s.joint) * inv_cc
}

/// Pooled AUC of the likelihood-ratio score. Given the pattern `S`, the
/// log-likelihood ratio is `N(±Δ²_S/2, Δ²_S)` under the two clean classes.
/// Label flips keep the same ranking and mix the clean pairs.
pub fn bayes_auc(cfg: &GenConfig) -> f64 {
    let e = cfg.signal.label_noise;
    let clean = clean_bayes_auc(cfg);
    (1.0 - e) * (1.0 - e) * clean + e * e * (1.0 - clean) + e * (1.0 - e)
}

fn clean_bayes_auc(cfg: &GenConfig) -> f64 {
    let dist: Vec<(f64, f64)> = availability_distribution(cfg)
        .into_iter()
        .map(|(a, p)| (class_separation(cfg, a), p))
        .collect();
    let mut auc = 0.0;
    for &(d1, p1) in &dist {
        for &(d2, p2) in &dist {
            let v = d1 + d2;
            let pair = if v > 0.0 { phi(v / 2.0 / v.sqrt()) } else { 0.5 };
            auc += p1 * p2 * pair;
        }
    }
    auc
}

fn orthonormal(rng: &mut Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn background(rng: &mut Rng, dim: usize, s: &crate::config::SignalSpec, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut f: Vec<f64> = (0..dim).map(|_| s.isotropic * rng.normal()).collect();
    for b in basis {
        axpy(&mut f, s.background * rng.normal(), b);
    }
    f
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Builds the cohort in memory.
pub fn generate(cfg: &GenConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let s = &cfg.signal;
    let mut warnings = Vec::new();
    if s.joint == 0.0 && s.marginal == 0.0 {
        warnings.push("signal spec carries no label information".to_string());
    }
    let mut dirs = Rng::stream(cfg.seed, u64::MAX);
    let rank = s.background_rank;
    let rad = orthonormal(&mut dirs, RADIOLOGY_DIM, 2 + rank);
    let path = orthonormal(&mut dirs, PATHOLOGY_DIM, 3 + rank);
    let miss = cfg.missing.as_array();
    let width = cfg.n_cases.to_string().len().max(3);
    let patch_width = cfg.shape.patches.to_string().len();

    let mut cases = Vec::with_capacity(cfg.n_cases);
    let mut planted = BTreeMap::new();
    let mut latent = Vec::with_capacity(cfg.n_cases);
    for i in 0..cfg.n_cases {
        let mut rng = Rng::stream(cfg.seed, i as u64);
        let id = format!("case{i:0width$}");
        let (u, label) = match cfg.task {
            TaskKind::Response => {
                let y = rng.bernoulli(0.5);
                let flip = rng.bernoulli(s.label_noise);
                (if y { 1.0 } else { -1.0 }, Label::Response(u8::from(y != flip)))
            }
            TaskKind::Survival => {
                let eta = rng.normal();
                let sv = &cfg.survival;
                let rate = sv.base_rate * (sv.gamma * eta).exp();
                let t_event = -(1.0 - rng.uniform()).ln() / rate;
                let t_censor = if sv.censor_rate > 0.0 {
                    -(1.0 - rng.uniform()).ln() / sv.censor_rate
                } else {
                    f64::INFINITY
                };
                let end = t_censor.min(sv.follow_up);
                let time = t_event.min(end).max(1e-3);
                let label = Label::Survival(SurvivalLabel {
                    censored: t_event > end,
                    time,
                    bin: 0,
                });
                (sv.signal_scale * eta, label)
            }
        };
        latent.push(u);
        let z = s.nuisance_std * rng.normal();
        let mut present = [false; 4];
        for m in Modality::ALL {
            present[m.index()] = !rng.bernoulli(miss[m.index()]);
        }
        if present.iter().all(|p| !p) {
            present[0] = true;
        }
        let mut channel = |joint: f64| -> (f64, f64) {
            let sm = s.marginal * u + s.channel_noise * rng.normal();
            let nm = joint * u + z + s.channel_noise * rng.normal();
            (sm, nm)
        };
        let chans: Vec<(f64, f64)> = Modality::ALL
            .iter()
            .map(|m| channel(if *m == Modality::Clinical { s.joint } else { 0.0 }))
            .collect();

        let mut case = CaseRecord::new(id.clone(), label);
        if present[0] {
            let (a, b) = chans[0];
            case.clinical = vec![(CLINICAL_MARGINAL_KEY.into(), a), (CLINICAL_JOINT_KEY.into(), b)];
            for k in 0..cfg.shape.clinical_distractors {
                case.clinical.push((format!("record_{k}"), rng.normal()));
            }
        }
        if present[1] {
            let (a, b) = chans[1];
            case.radiology = (0..cfg.shape.slices)
                .map(|_| {
                    let mut f = background(&mut rng, RADIOLOGY_DIM, s, &rad[2..]);
                    axpy(&mut f, a, &rad[0]);
                    axpy(&mut f, b, &rad[1]);
                    f
                })
                .collect();
        }
        if present[2] {
            let (a, b) = chans[2];
            let k = rng.below(cfg.shape.patches);
            case.pathology = (0..cfg.shape.patches)
                .map(|j| {
                    let mut f = background(&mut rng, PATHOLOGY_DIM, s, &path[3..]);
                    if j == k {
                        axpy(&mut f, a, &path[0]);
                        axpy(&mut f, b, &path[1]);
                        axpy(&mut f, s.marker, &path[2]);
                    }
                    Patch {
                        id: format!("p{j:0patch_width$}"),
                        features: f,
                    }
                })
                .collect();
            planted.insert(id.clone(), case.pathology[k].id.clone());
        }
        if present[3] {
            let (a, b) = chans[3];
            case.genomic = vec![(GENOMIC_MARGINAL_GENE.into(), a), (GENOMIC_NUISANCE_GENE.into(), b)];
            for k in 0..cfg.shape.genomic_distractors {
                case.genomic.push((format!("GENE_{k:03}"), rng.normal()));
            }
        }
        cases.push(case);
    }

    let (bayes, oracle) = match cfg.task {
        TaskKind::Response => (Some(bayes_auc(cfg)), None),
        TaskKind::Survival => {
            let samples: Vec<SurvivalSample> = cases
                .iter()
                .zip(&latent)
                .filter_map(|(c, &eta)| {
                    c.survival().map(|s| SurvivalSample::new(eta, s.time, !s.censored))
                })
                .collect();
            let c = concordance_index(&samples).ok();
            if c.is_none() {
                warnings.push("no comparable pairs for the oracle C-index".to_string());
            }
            (None, c)
        }
    };
    Ok(Synthetic {
        dataset: Dataset {
            task: cfg.task,
            cases,
        },
        meta: SyntheticMeta {
            config: cfg.clone(),
            bayes_auc: bayes,
            oracle_c_index: oracle,
            planted_patches: planted,
            warnings,
        },
    })
}

/// Generates the cohort and writes it, plus `synthetic.json`, under `dir`.
pub fn generate_synthetic(cfg: &GenConfig, dir: &Path) -> Result<SyntheticMeta> {
    let syn = generate(cfg)?;
    write_dataset(dir, &syn.dataset)?;
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&syn.meta)?;
    std::fs::write(&meta_path, text + "\n").map_err(|e| HarnessError::io(&meta_path, e))?;
    Ok(syn.meta)
}

pub fn read_meta(dir: &Path) -> Result<SyntheticMeta> {
    let p = dir.join(META_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}
