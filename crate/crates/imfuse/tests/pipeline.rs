use imfuse::checkpoint::Checkpoint;
use imfuse::config::{GenConfig, RunConfig, TaskKind};
use imfuse::dataset::Dataset;
use imfuse::evaluate::FoldReport;
use imfuse::pipeline::{evaluate_checkpoint, run_fold};
use imfuse::report::{aggregate, mean_std};
use imfuse::split::kfold_split;
use imfuse::synthetic::generate;
use imfuse::train::{train_fold, TrainLog};
use imfuse::HarnessError;
use imfuse_core::model::Model;
use imfuse_core::Tensor;
use proptest::prelude::*;

fn tiny_run(task: TaskKind) -> RunConfig {
    let mut cfg = RunConfig {
        task,
        epochs: 1,
        ..RunConfig::default()
    };
    let m = &mut cfg.model;
    m.d = 8;
    m.layers = 1;
    m.heads = 2;
    m.d_ff = 8;
    m.landmarks = 4;
    m.n_bins = 4;
    m.radiology_hidden = 8;
    m.pathology_hidden = 8;
    cfg
}

fn tiny_data(task: TaskKind, n: usize) -> Dataset {
    let mut g = GenConfig {
        task,
        n_cases: n,
        seed: 3,
        ..GenConfig::default()
    };
    g.shape.patches = 4;
    g.shape.slices = 2;
    generate(&g).unwrap().dataset
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn folds_partition_and_balance(n in 5usize..200, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let f = kfold_split(n, k, seed, None).unwrap();
        let mut sizes = vec![0usize; k];
        for &x in &f {
            sizes[x] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert_eq!(f, kfold_split(n, k, seed, None).unwrap());
    }
}

#[test]
fn stratified_counts() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 60)).collect();
    for seed in 0..10 {
        let f = kfold_split(100, 5, seed, Some(&labels)).unwrap();
        for k in 0..5 {
            let pos = (0..100).filter(|&i| f[i] == k && labels[i] == 1).count();
            let neg = (0..100).filter(|&i| f[i] == k && labels[i] == 0).count();
            assert!((11..=13).contains(&pos) && (7..=9).contains(&neg), "{pos} {neg}");
        }
    }
    assert!(kfold_split(100, 5, 0, Some(&[vec![0u8; 97], vec![1u8; 3]].concat())).is_err());
    assert!(kfold_split(3, 5, 0, None).is_err());
}

#[test]
fn zero_epochs_keeps_initialization() {
    let mut cfg = tiny_run(TaskKind::Response);
    cfg.epochs = 0;
    let data = tiny_data(TaskKind::Response, 20);
    let t = train_fold(&cfg, &data, &(0..16).collect::<Vec<_>>()).unwrap();
    let (_, init) = Model::init(cfg.model_config(), cfg.seed).unwrap();
    assert_eq!(t.state.student, init);
    assert_eq!(t.log.steps, 0);
}

#[test]
fn repeated_case_loss_decreases_and_is_reproducible() {
    for task in [TaskKind::Response, TaskKind::Survival] {
        let mut cfg = tiny_run(task);
        cfg.epochs = 30;
        let data = tiny_data(task, 20);
        let idx = vec![0usize];
        let a = train_fold(&cfg, &data, &idx).unwrap();
        let b = train_fold(&cfg, &data, &idx).unwrap();
        let first = a.log.epochs[0].total;
        let last = a.log.epochs[29].total;
        assert!(last < first, "{task:?}: {first} -> {last}");
        assert_eq!(last.to_bits(), b.log.epochs[29].total.to_bits());
        assert_eq!(a.state.student, b.state.student);
    }
}

#[test]
fn nonfinite_input_aborts_with_case_id() {
    let cfg = tiny_run(TaskKind::Response);
    let mut data = tiny_data(TaskKind::Response, 20);
    data.cases[2].clinical[0].1 = f64::INFINITY;
    let Err(err) = train_fold(&cfg, &data, &[2]) else {
        panic!("training on a non-finite case succeeded");
    };
    match err {
        HarnessError::Diverged { case_id, .. } => assert_eq!(case_id, data.cases[2].case_id),
        other => panic!("unexpected {other}"),
    }
}

fn single_fold(task: TaskKind) -> (RunConfig, Dataset, FoldReport, Checkpoint) {
    let cfg = tiny_run(task);
    let data = tiny_data(task, 30);
    let (report, ck) = run_fold(&cfg, &data, 1).unwrap();
    (cfg, data, report, ck)
}

#[test]
fn fold_report_sections_and_subset_rows() {
    for task in [TaskKind::Response, TaskKind::Survival] {
        let (_, _, r, _) = single_fold(task);
        assert_eq!((r.train.tag.as_str(), r.test.tag.as_str()), ("train", "test"));
        assert_eq!(r.train.predictions.len() + r.test.predictions.len(), 30);
        let rows: Vec<&str> = r.test.subsets.iter().map(|s| s.subset.as_str()).collect();
        assert_eq!(rows.len(), 15);
        for want in ["C", "R", "P", "G", "CRPG"] {
            assert!(rows.contains(&want), "{want}");
        }
        match task {
            TaskKind::Response => {
                assert!(!r.test.roc.is_empty());
                assert!(r.test.full.metrics["auc"].is_some());
            }
            TaskKind::Survival => {
                assert_eq!(r.survival_cuts.len(), 3);
                assert!(r.test.full.metrics.contains_key("c_index"));
                assert_eq!(r.test.km.len(), 2);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_report() {
    for task in [TaskKind::Response, TaskKind::Survival] {
        let (_, data, report, ck) = single_fold(task);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let again = evaluate_checkpoint(&back, &data, report.train_log.clone()).unwrap();
        for (a, b) in [(&report.test, &again.test), (&report.train, &again.train)] {
            for (x, y) in a.predictions.iter().zip(&b.predictions) {
                assert!((x.score - y.score).abs() <= 1e-12);
            }
            for (x, y) in a.subsets.iter().zip(&b.subsets) {
                for (k, v) in &x.metrics {
                    let w = y.metrics[k];
                    assert!(v.zip(w).map_or(v.is_none() && w.is_none(), |(v, w)| (v - w).abs() <= 1e-12));
                }
            }
        }
        assert_eq!(again, report);
    }
}

#[test]
fn constant_model_scores_one_half() {
    for task in [TaskKind::Response, TaskKind::Survival] {
        let (_, data, _, mut ck) = single_fold(task);
        let ids: Vec<_> = ck
            .student
            .iter()
            .filter(|(_, p)| p.name.starts_with("head."))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let shape = ck.student.value(id).shape().to_vec();
            *ck.student.value_mut(id) = Tensor::zeros(&shape);
        }
        let r = evaluate_checkpoint(&ck, &data, TrainLog::default()).unwrap();
        let key = if task == TaskKind::Response { "auc" } else { "c_index" };
        assert_eq!(r.test.full.metrics[key], Some(0.5));
    }
}

#[test]
fn aggregate_recomputes_from_folds() {
    let cfg = tiny_run(TaskKind::Response);
    let data = tiny_data(TaskKind::Response, 30);
    let reports: Vec<FoldReport> = (0..5).map(|k| run_fold(&cfg, &data, k).unwrap().0).collect();
    let agg = aggregate(&reports).unwrap();
    let row = agg.get("test", "available", "auc").unwrap();
    let vals: Vec<f64> = reports.iter().map(|r| r.test.full.metrics["auc"].unwrap()).collect();
    let mean = vals.iter().sum::<f64>() / 5.0;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((row.mean.unwrap() - mean).abs() < 1e-12);
    assert!((row.std.unwrap() - std).abs() < 1e-12);
    assert_eq!(mean_std(&[None, Some(2.0)]), (Some(2.0), None));
    assert_eq!(agg.folds, vec![0, 1, 2, 3, 4]);
}
