use imfuse_core::attention::landmark_segments;
use imfuse_core::losses::{cross_entropy, kl_temperature};
use imfuse_core::metrics::{concordance_index, roc_auc, SurvivalSample};
use imfuse_core::numerics::{cosine_lr, softmax};
use imfuse_core::{Availability, Tensor};
use proptest::prelude::*;

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0..20.0f64, n)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in logits(12), t in 0.1..10.0f64) {
        let x = Tensor::matrix(3, 4, v).unwrap();
        let s = softmax(&x, 1, t).unwrap();
        for r in 0..3 {
            let row = s.row_slice(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(a in logits(5), b in logits(5), t in 0.5..8.0f64) {
        prop_assert!(kl_temperature(&a, &b, t).unwrap() >= -1e-12);
        prop_assert!(kl_temperature(&a, &a, t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_shift_invariant(a in logits(4), c in -50.0..50.0f64, y in 0usize..4) {
        let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
        let l = cross_entropy(&a, y).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - cross_entropy(&shifted, y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn auc_complements_under_negation(s in prop::collection::vec(-5.0..5.0f64, 2..40), seed in any::<u64>()) {
        let labels: Vec<bool> = (0..s.len()).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        let mut labels = labels;
        labels[1] = false;
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = roc_auc(&s, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + roc_auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = s.iter().map(|v| 3.0 * v + 1.0).collect();
        prop_assert_eq!(a, roc_auc(&shifted, &labels).unwrap());
    }

    #[test]
    fn cindex_bounded_and_monotone_invariant(
        rows in prop::collection::vec((-3.0..3.0f64, 0.1..10.0f64, any::<bool>()), 3..30)
    ) {
        let mut samples: Vec<SurvivalSample> =
            rows.iter().map(|&(r, t, e)| SurvivalSample::new(r, t, e)).collect();
        samples[0].event = true;
        samples[0].time = 0.01;
        let c = concordance_index(&samples).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        let exp: Vec<SurvivalSample> =
            samples.iter().map(|s| SurvivalSample::new(s.risk.exp(), s.time, s.event)).collect();
        prop_assert!((c - concordance_index(&exp).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn segments_partition(n in 1usize..500, m in 1usize..64) {
        let m = m.min(n);
        let segs = landmark_segments(n, m);
        prop_assert_eq!(segs.len(), m);
        prop_assert_eq!(segs[0].0, 0);
        prop_assert_eq!(segs[m - 1].1, n);
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        let base = n / m;
        for &(lo, hi) in &segs[..m - 1] {
            prop_assert_eq!(hi - lo, base);
        }
    }

    #[test]
    fn cosine_schedule_bounded(step in 0usize..1000, total in 1usize..1000, lr in 1e-6..1.0f64) {
        let step = step.min(total);
        let v = cosine_lr(step, total, lr).unwrap();
        prop_assert!(v >= -1e-18 && v <= lr + 1e-18);
        if step > 0 {
            prop_assert!(v <= cosine_lr(step - 1, total, lr).unwrap() + 1e-15);
        }
    }

    #[test]
    fn availability_text_roundtrip(bits in 1u8..16) {
        let a = Availability::from_bits(bits);
        prop_assert_eq!(Availability::parse(&a.to_string()).unwrap(), a);
        prop_assert_eq!(a.len() as u32, bits.count_ones());
        for m in a.iter() {
            prop_assert!(!a.without(m).contains(m));
            prop_assert!(a.without(m).is_subset_of(a));
        }
    }
}
