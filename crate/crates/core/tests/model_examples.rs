mod common;

use common::{max_abs, random_case, random_tensor, tiny_model};
use imfuse_core::attention::{exact_mha, transformer_block, AttnKind, BlockParams, MhaParams};
use imfuse_core::model::{Model, ModelConfig, Task};
use imfuse_core::numerics::LN_EPS;
use imfuse_core::tokenizer::{
    hash_embedding, tokenize_clinical, tokenize_genomic, HashEmbedding, ValueEmbedder,
};
use imfuse_core::{Availability, Modality, ParamStore, Rng, Tape, Tensor};

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|x| x.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

fn layer_norm(a: &Mat, g: &[f64], b: &[f64]) -> Mat {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mu) / (var + LN_EPS).sqrt() * g[j] + b[j])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Straight-line multi-head attention.
fn dense_mha(q: &Mat, c: &Mat, store: &ParamStore, p: &MhaParams) -> Mat {
    let w = |id| mat(store.value(id));
    let (qp, kp, vp) = (mm(q, &w(p.wq)), mm(c, &w(p.wk)), mm(c, &w(p.wv)));
    let d = qp[0].len();
    let hd = d / p.heads;
    let mut cat = vec![vec![0.0; d]; q.len()];
    for h in 0..p.heads {
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..c.len())
                .map(|j| (0..hd).map(|t| qp[i][h * hd + t] * kp[j][h * hd + t]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for t in 0..hd {
                cat[i][h * hd + t] = (0..c.len()).map(|j| e[j] / z * vp[j][h * hd + t]).sum();
            }
        }
    }
    mm(&cat, &w(p.wo))
}

fn dense_block(x: &Mat, store: &ParamStore, p: &BlockParams) -> Mat {
    let row = |id| store.value(id).data().to_vec();
    let h = layer_norm(x, &row(p.ln1.gain), &row(p.ln1.bias));
    let x = add(x, &dense_mha(&h, &h, store, &p.attn));
    let h = layer_norm(&x, &row(p.ln2.gain), &row(p.ln2.bias));
    let f = add_bias(&mm(&h, &mat(store.value(p.ffn.fc1.w))), &row(p.ffn.fc1.b.unwrap()));
    let f: Mat = f.iter().map(|r| r.iter().map(|v| gelu(*v)).collect()).collect();
    let f = add_bias(&mm(&f, &mat(store.value(p.ffn.fc2.w))), &row(p.ffn.fc2.b.unwrap()));
    add(&x, &f)
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn mha_matches_dense_oracle() {
    for heads in [1, 2] {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(heads as u64);
        let p = MhaParams::init(&mut store, "a", 6, heads, &mut rng).unwrap();
        let q = random_tensor(&mut rng, 2, 6, 1.0);
        let c = random_tensor(&mut rng, 3, 6, 1.0);
        let mut tape = Tape::with_params(&store);
        let (qv, cv) = (tape.constant(q.clone()), tape.constant(c.clone()));
        let (o, _) = exact_mha(&mut tape, qv, cv, &p, false).unwrap();
        let want = flat(&dense_mha(&mat(&q), &mat(&c), &store, &p));
        assert!(max_abs(tape.value(o).data(), &want) < 1e-12);
    }
}

#[test]
fn single_and_identical_keys() {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(3);
    let p = MhaParams::init(&mut store, "a", 4, 2, &mut rng).unwrap();
    let q = random_tensor(&mut rng, 3, 4, 1.0);
    let key = random_tensor(&mut rng, 1, 4, 1.0);
    let same = Tensor::from_rows(&vec![key.data().to_vec(); 5]).unwrap();
    let mut tape = Tape::with_params(&store);
    let qv = tape.constant(q);
    let kv = tape.constant(key.clone());
    let sv = tape.constant(same);
    let (one, map) = exact_mha(&mut tape, qv, kv, &p, true).unwrap();
    assert!(map.unwrap().heads.iter().all(|h| h.data().iter().all(|&w| w == 1.0)));
    let (many, _) = exact_mha(&mut tape, qv, sv, &p, false).unwrap();
    let v = key.matmul(store.value(p.wv)).unwrap().matmul(store.value(p.wo)).unwrap();
    for r in 0..3 {
        assert!(max_abs(tape.value(one).row_slice(r), v.data()) < 1e-12);
        assert!(max_abs(tape.value(many).row_slice(r), v.data()) < 1e-12);
    }
}

#[test]
fn block_matches_dense_reference_and_zero_identity() {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(7);
    let p = BlockParams::init(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
    let x = random_tensor(&mut rng, 4, 8, 1.0);
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x.clone());
    let y = transformer_block(&mut tape, xv, &p, AttnKind::Exact).unwrap();
    let want = flat(&dense_block(&mat(&x), &store, &p));
    assert!(max_abs(tape.value(y).data(), &want) < 1e-12);

    let mut zero = store.clone();
    for prm in zero.iter_mut() {
        if !prm.name.contains(".gain") {
            prm.value = Tensor::zeros(prm.value.shape());
        }
    }
    let mut tape = Tape::with_params(&zero);
    let xv = tape.constant(x.clone());
    let y = transformer_block(&mut tape, xv, &p, AttnKind::Exact).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn default_width_shapes() {
    let (model, params) = Model::init(ModelConfig::default(), 1).unwrap();
    let mut rng = Rng::new(1);
    let case = random_case(&mut rng, Availability::all(), Task::Response, "d");
    let p = model.predict(&params, &case).unwrap();
    assert_eq!(p.fused.len(), 800);
    assert!(p.logits.iter().all(|v| v.is_finite()));

    let records: Vec<(String, f64)> = (0..14).map(|k| (format!("r{k}"), k as f64)).collect();
    let mut store = ParamStore::new();
    let emb = ValueEmbedder::init(&mut store, "v", 200).unwrap();
    let keys = HashEmbedding::new("k", 1);
    let mut tape = Tape::with_params(&store);
    let t = tokenize_clinical(&mut tape, &records, &keys, &emb, 200).unwrap();
    assert_eq!(tape.dims(t.tokens), (14, 200));
    // Zero-initialized value embedder leaves the key embedding.
    assert_eq!(tape.value(t.tokens).row_slice(3), hash_embedding("r3", 1, 200).as_slice());
    let genes: Vec<(String, f64)> = (0..9).map(|k| (format!("G{k}"), 0.0)).collect();
    let g = tokenize_genomic(&mut tape, &genes, &keys, &emb, 200).unwrap();
    assert_eq!(tape.dims(g.tokens), (9, 200));
    assert_eq!(tape.value(g.tokens).row_slice(0), hash_embedding("G0", 1, 200).as_slice());
}

#[test]
fn zero_head_gives_uniform_outputs() {
    for task in [Task::Response, Task::Survival] {
        let (model, mut params) = tiny_model(task, 2);
        for prm in params.iter_mut().filter(|p| p.name.starts_with("head.")) {
            prm.value = Tensor::zeros(prm.value.shape());
        }
        let mut rng = Rng::new(2);
        let case = random_case(&mut rng, Availability::parse("RG").unwrap(), task, "h");
        let p = model.predict(&params, &case).unwrap();
        match task {
            Task::Response => assert_eq!(p.probabilities(), vec![0.5, 0.5]),
            Task::Survival => assert!(p.hazard_curve().hazards.iter().all(|&h| h == 0.5)),
        }
    }
}

#[test]
fn selecting_head_reads_fused_coordinates() {
    let (model, mut params) = tiny_model(Task::Response, 4);
    let d = model.config.d;
    let head = model.head();
    let mut w = Tensor::zeros(&[4 * d, 2]);
    w.set(0, 0, 1.0);
    w.set(2 * d + 1, 1, 1.0);
    *params.value_mut(head.w) = w;
    *params.value_mut(head.b.unwrap()) = Tensor::zeros(&[1, 2]);
    let mut rng = Rng::new(4);
    let case = random_case(&mut rng, Availability::all(), Task::Response, "s");
    let p = model.predict(&params, &case).unwrap();
    assert_eq!(p.logits, vec![p.fused[0], p.fused[2 * d + 1]]);
}

#[test]
fn long_pathology_takes_the_nystrom_path() {
    let mut cfg = ModelConfig {
        d: 16,
        layers: 1,
        heads: 2,
        d_ff: 16,
        radiology_hidden: 8,
        pathology_hidden: 8,
        ..ModelConfig::default()
    };
    let (model, params) = Model::init(cfg.clone(), 3).unwrap();
    cfg.landmarks = 1000;
    let (exact, _) = Model::init(cfg, 3).unwrap();
    let mut rng = Rng::new(3);
    let mut case = random_case(&mut rng, Availability::only(Modality::Pathology), Task::Response, "n");
    let proto = case.pathology[0].clone();
    case.pathology = (0..300)
        .map(|j| imfuse_core::data::Patch {
            id: format!("p{j}"),
            features: proto.features.iter().map(|v| v + 0.3 * rng.normal()).collect(),
        })
        .collect();
    let a = model.predict(&params, &case).unwrap().logits;
    let b = exact.predict(&params, &case).unwrap().logits;
    assert_ne!(a, b);
    assert!(max_abs(&a, &b) < 5e-2, "{}", max_abs(&a, &b));
}
