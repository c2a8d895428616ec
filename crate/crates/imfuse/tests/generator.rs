use imfuse::config::{GenConfig, TaskKind};
use imfuse::dataset::read_dataset;
use imfuse::synthetic::{bayes_auc, generate, generate_synthetic, read_meta};
use imfuse_core::metrics::roc_auc;
use imfuse_core::{Modality, Rng};
use std::path::Path;

fn small(task: TaskKind, seed: u64) -> GenConfig {
    let mut cfg = GenConfig {
        task,
        n_cases: 24,
        seed,
        ..GenConfig::default()
    };
    cfg.shape.patches = 5;
    cfg.shape.slices = 3;
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_files() {
    for task in [TaskKind::Response, TaskKind::Survival] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic(&small(task, 4), a.path()).unwrap();
        generate_synthetic(&small(task, 4), b.path()).unwrap();
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(fa.len() > 4);
        assert_eq!(fa, fb);
        let c = tempfile::tempdir().unwrap();
        generate_synthetic(&small(task, 5), c.path()).unwrap();
        assert_ne!(fa, files(c.path()));
    }
}

#[test]
fn written_dataset_reads_back_equal() {
    for task in [TaskKind::Response, TaskKind::Survival] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(task, 2);
        let meta = generate_synthetic(&cfg, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, generate(&cfg).unwrap().dataset);
        assert_eq!(read_meta(dir.path()).unwrap(), meta);
        for case in &back.cases {
            if let Some(p) = meta.planted_patches.get(&case.case_id) {
                assert!(case.pathology.iter().any(|x| &x.id == p));
            }
        }
    }
}

#[test]
fn no_missingness_means_every_modality() {
    let mut cfg = small(TaskKind::Response, 1);
    cfg.missing.radiology = 0.0;
    cfg.missing.pathology = 0.0;
    cfg.missing.genomic = 0.0;
    let syn = generate(&cfg).unwrap();
    assert!(syn.dataset.cases.iter().all(|c| c.availability().len() == 4));
}

#[test]
fn missingness_rates_are_respected() {
    let mut cfg = small(TaskKind::Response, 3);
    cfg.n_cases = 2000;
    let syn = generate(&cfg).unwrap();
    for m in [Modality::Radiology, Modality::Pathology, Modality::Genomic] {
        let miss = syn.dataset.cases.iter().filter(|c| !c.availability().contains(m)).count();
        let rate = miss as f64 / 2000.0;
        // 0.3 ± 4 standard errors.
        assert!((rate - 0.3).abs() < 0.041, "{m:?} {rate}");
    }
}

#[test]
fn zero_signal_warns_but_generates() {
    let mut cfg = small(TaskKind::Response, 1);
    cfg.signal.joint = 0.0;
    cfg.signal.marginal = 0.0;
    let syn = generate(&cfg).unwrap();
    assert_eq!(syn.dataset.cases.len(), 24);
    assert!(!syn.meta.warnings.is_empty());
    assert!((syn.meta.bayes_auc.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn invalid_rates_rejected() {
    let mut cfg = small(TaskKind::Response, 1);
    cfg.missing.genomic = 1.0;
    assert!(generate(&cfg).is_err());
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for i in 0..n {
        let p = (i..n).max_by(|&x, &y| a[x][i].abs().total_cmp(&a[y][i].abs())).unwrap();
        a.swap(i, p);
        b.swap(i, p);
        for r in 0..n {
            if r != i {
                let f = a[r][i] / a[i][i];
                for c in i..n {
                    a[r][c] -= f * a[i][c];
                }
                b[r] -= f * b[i];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

/// Draws the per-modality channel observations directly and scores them with
/// the exact Gaussian log-likelihood ratio, solved numerically.
fn monte_carlo_auc(cfg: &GenConfig, n: usize, seed: u64) -> f64 {
    let s = &cfg.signal;
    let miss = cfg.missing.as_array();
    let mut rng = Rng::new(seed);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.bernoulli(0.5);
        let u = if y { 1.0 } else { -1.0 };
        let flip = rng.bernoulli(s.label_noise);
        let mut present: Vec<usize> = (0..4).filter(|&m| !rng.bernoulli(miss[m])).collect();
        if present.is_empty() {
            present.push(0);
        }
        let z = s.nuisance_std * rng.normal();
        let extra = |m: usize| match m {
            1 => s.isotropic * s.isotropic / cfg.shape.slices as f64,
            2 => s.isotropic * s.isotropic,
            _ => 0.0,
        };
        // Observations: marginal channels then nuisance channels.
        let k = present.len();
        let mut x = vec![0.0; 2 * k];
        let mut mu = vec![0.0; 2 * k];
        let mut cov = vec![vec![0.0; 2 * k]; 2 * k];
        for (i, &m) in present.iter().enumerate() {
            let var = s.channel_noise * s.channel_noise + extra(m);
            let joint = if m == 0 { s.joint } else { 0.0 };
            x[i] = s.marginal * u + var.sqrt() * rng.normal();
            x[k + i] = joint * u + z + var.sqrt() * rng.normal();
            mu[i] = s.marginal;
            mu[k + i] = joint;
            cov[i][i] = var;
            for j in 0..k {
                cov[k + i][k + j] = s.nuisance_std * s.nuisance_std;
            }
            cov[k + i][k + i] += var;
        }
        let w = solve(cov, mu);
        scores.push(w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>());
        labels.push(y != flip);
    }
    roc_auc(&scores, &labels).unwrap()
}

#[test]
fn recorded_bayes_auc_matches_simulation() {
    let mut strong = GenConfig::default();
    strong.signal.joint = 2.0;
    let mut noisy = GenConfig::default();
    noisy.signal.label_noise = 0.1;
    noisy.signal.isotropic = 0.4;
    noisy.missing.clinical = 0.2;
    for (i, cfg) in [GenConfig::default(), strong, noisy].iter().enumerate() {
        let analytic = bayes_auc(cfg);
        let sim = monte_carlo_auc(cfg, 200_000, i as u64);
        // Standard error of the AUC estimate is below 1e-3 here.
        assert!((analytic - sim).abs() < 4e-3, "config {i}: {analytic} vs {sim}");
        assert!(analytic > 0.5 && analytic < 1.0);
    }
}

#[test]
fn survival_labels_and_oracle() {
    let mut cfg = small(TaskKind::Survival, 7);
    cfg.n_cases = 300;
    let syn = generate(&cfg).unwrap();
    let c = syn.meta.oracle_c_index.unwrap();
    assert!(c > 0.6 && c <= 1.0, "{c}");
    assert!(syn.meta.bayes_auc.is_none());
    for case in &syn.dataset.cases {
        let s = case.survival().unwrap();
        assert!(s.time > 0.0 && s.time <= cfg.survival.follow_up);
    }
    assert!(syn.dataset.cases.iter().any(|c| c.survival().unwrap().censored));
}
