#![allow(dead_code)]

use imfuse_core::data::{Patch, PATHOLOGY_DIM, RADIOLOGY_DIM};
use imfuse_core::model::{Model, ModelConfig, Task};
use imfuse_core::{Availability, CaseRecord, Label, Modality, ParamStore, Rng, SurvivalLabel, Tensor};

pub fn tiny_config(task: Task) -> ModelConfig {
    ModelConfig {
        d: 8,
        layers: 2,
        heads: 2,
        d_ff: 12,
        landmarks: 2,
        pinv_iters: 6,
        task,
        n_bins: 4,
        radiology_hidden: 6,
        pathology_hidden: 6,
        embedding_seed: 3,
    }
}

pub fn tiny_model(task: Task, seed: u64) -> (Model, ParamStore) {
    Model::init(tiny_config(task), seed).unwrap()
}

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn label_for(task: Task, rng: &mut Rng) -> Label {
    match task {
        Task::Response => Label::Response(u8::from(rng.bernoulli(0.5))),
        Task::Survival => Label::Survival(SurvivalLabel {
            censored: rng.bernoulli(0.3),
            time: rng.uniform_range(1.0, 60.0),
            bin: rng.below(4),
        }),
    }
}

/// A case carrying exactly the modalities in `avail`.
pub fn random_case(rng: &mut Rng, avail: Availability, task: Task, id: &str) -> CaseRecord {
    let mut c = CaseRecord::new(id, label_for(task, rng));
    if avail.contains(Modality::Clinical) {
        c.clinical = (0..3).map(|k| (format!("rec{k}"), rng.normal())).collect();
    }
    if avail.contains(Modality::Radiology) {
        c.radiology = (0..3)
            .map(|_| (0..RADIOLOGY_DIM).map(|_| rng.normal()).collect())
            .collect();
    }
    if avail.contains(Modality::Pathology) {
        c.pathology = (0..5)
            .map(|j| Patch {
                id: format!("p{j}"),
                features: (0..PATHOLOGY_DIM).map(|_| rng.normal()).collect(),
            })
            .collect();
    }
    if avail.contains(Modality::Genomic) {
        c.genomic = (0..6).map(|k| (format!("G{k}"), rng.normal())).collect();
    }
    c
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Value and expression embedders start at zero; random weights make record
/// values reach the output.
pub fn randomize_embedders(params: &mut ParamStore, rng: &mut Rng) {
    for p in params.iter_mut().filter(|p| p.name.starts_with("tokenizer.clinical") || p.name.starts_with("tokenizer.genomic")) {
        for x in p.value.data_mut() {
            *x = rng.normal();
        }
    }
}
