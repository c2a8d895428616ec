mod common;

use common::random_tensor;
use imfuse_core::attention::{
    exact_mha, iterative_pinv, landmark_segments, nystrom_mha, pinv_iterates, MhaParams,
};
use imfuse_core::{ParamStore, Rng, Tape, Tensor};

fn params(seed: u64, d: usize, heads: usize) -> (ParamStore, MhaParams) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let p = MhaParams::init(&mut store, "a", d, heads, &mut rng).unwrap();
    (store, p)
}

fn both(store: &ParamStore, p: &MhaParams, x: &Tensor, m: usize, iters: usize) -> (Tensor, Tensor) {
    let mut tape = Tape::with_params(store);
    let v = tape.constant(x.clone());
    let (e, _) = exact_mha(&mut tape, v, v, p, false).unwrap();
    let (n, _) = nystrom_mha(&mut tape, v, p, m, iters, false).unwrap();
    (tape.value(e).clone(), tape.value(n).clone())
}

fn mean_abs(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn one_landmark_per_token_matches_exact() {
    for seed in 0..20 {
        let mut rng = Rng::stream(seed, 3);
        let n = 8 + rng.below(57);
        let (store, p) = params(seed, 16, 2);
        let x = random_tensor(&mut rng, n, 16, 1.0);
        let (e, ny) = both(&store, &p, &x, n, 30);
        assert!(e.max_abs_diff(&ny) < 1e-3, "seed {seed} n {n}: {}", e.max_abs_diff(&ny));
    }
}

#[test]
fn n32_m32_within_tolerance() {
    let (store, p) = params(11, 8, 1);
    let mut rng = Rng::new(5);
    let x = random_tensor(&mut rng, 32, 8, 1.0);
    let (e, ny) = both(&store, &p, &x, 32, 30);
    assert!(e.max_abs_diff(&ny) < 1e-3);
}

#[test]
fn more_landmarks_approximate_better() {
    let (mut half, mut eighth) = (0.0, 0.0);
    for seed in 0..20 {
        let (store, p) = params(seed, 16, 2);
        let mut rng = Rng::stream(seed, 4);
        let x = random_tensor(&mut rng, 64, 16, 1.0);
        let (e, a) = both(&store, &p, &x, 32, 30);
        let (_, b) = both(&store, &p, &x, 8, 30);
        half += mean_abs(&e, &a);
        eighth += mean_abs(&e, &b);
    }
    assert!(half <= eighth, "m=n/2 {half} vs m=n/8 {eighth}");
}

#[test]
fn n256_m32_beats_m8() {
    let (mut m32, mut m8) = (0.0, 0.0);
    for seed in 0..20 {
        let (store, p) = params(seed, 8, 1);
        let mut rng = Rng::stream(seed, 5);
        let x = random_tensor(&mut rng, 256, 8, 1.0);
        let (e, a) = both(&store, &p, &x, 32, 6);
        let (_, b) = both(&store, &p, &x, 8, 6);
        m32 += mean_abs(&e, &a);
        m8 += mean_abs(&e, &b);
    }
    assert!(m32 < m8, "{m32} vs {m8}");
}

#[test]
fn identical_tokens_collapse_to_exact() {
    let (store, p) = params(2, 8, 2);
    let mut rng = Rng::new(9);
    let row = random_tensor(&mut rng, 1, 8, 1.0);
    let x = Tensor::from_rows(&vec![row.data().to_vec(); 12]).unwrap();
    let (e, ny) = both(&store, &p, &x, 4, 6);
    assert!(e.max_abs_diff(&ny) < 1e-12);
}

#[test]
fn segments_cover_all_tokens() {
    for n in 1..40 {
        for m in 1..=n {
            let segs = landmark_segments(n, m);
            assert_eq!(segs.len(), m);
            assert_eq!(segs[0].0, 0);
            let mut prev = 0;
            for &(lo, hi) in &segs {
                assert_eq!(lo, prev);
                assert!(hi > lo);
                prev = hi;
            }
            assert_eq!(prev, n);
        }
    }
}

#[test]
fn pinv_converges_on_softmax_kernels() {
    for seed in 0..10 {
        let mut rng = Rng::new(seed);
        let raw = random_tensor(&mut rng, 6, 6, 1.0);
        let a = imfuse_core::numerics::softmax(&raw, 1, 1.0).unwrap();
        let z = iterative_pinv(&a, 30).unwrap();
        let az = a.matmul(&z).unwrap();
        assert!(az.max_abs_diff(&Tensor::eye(6)) < 1e-8, "seed {seed}");
        // Residual ‖I − AZ‖ shrinks along the iterates once convergent.
        let its = pinv_iterates(&a, 12).unwrap();
        let res: Vec<f64> = its
            .iter()
            .map(|z| a.matmul(z).unwrap().max_abs_diff(&Tensor::eye(6)))
            .collect();
        assert!(res[12] < res[0]);
    }
}
