use proptest::prelude::*;
use sgshift_core::evaluate::{auc, midranks, recall_at_fpr};
use sgshift_core::knockoff::{fdr_bound, knockoff_threshold, pfer_bound};
use sgshift_core::solver::log_grid;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n).prop_filter("both classes", |t| {
                t.iter().any(|v| *v) && !t.iter().all(|v| *v)
            }),
        )
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps((s, t) in scored(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = auc(&s, &t).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let cubed: Vec<f64> = s.iter().map(|v| v.powi(3)).collect();
        prop_assert!((auc(&affine, &t).unwrap() - base).abs() < 1e-12);
        prop_assert!((auc(&cubed, &t).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn auc_flips_with_negation((s, t) in scored()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc(&s, &t).unwrap() + auc(&neg, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_fpr((s, t) in scored(), f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(recall_at_fpr(&s, &t, lo).unwrap() <= recall_at_fpr(&s, &t, hi).unwrap());
    }

    #[test]
    fn midranks_sum_to_triangle(v in prop::collection::vec(-3i32..3, 1..50)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let n = v.len() as f64;
        prop_assert!((midranks(&v).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn threshold_controls_estimated_fdp(w in prop::collection::vec(-4.0f64..4.0, 1..60), q in 0.01f64..1.0, plus: bool) {
        let th = knockoff_threshold(&w, q, plus);
        if th.tau.is_finite() {
            let neg = w.iter().filter(|v| **v <= -th.tau).count() as f64;
            let est = (f64::from(u8::from(plus)) + neg) / th.selected.len().max(1) as f64;
            prop_assert!(est <= q);
            prop_assert!(th.selected.iter().all(|&k| w[k] >= th.tau));
            prop_assert_eq!(th.selected.len(), w.iter().filter(|v| **v >= th.tau).count());
        } else {
            prop_assert!(th.selected.is_empty());
        }
    }

    #[test]
    fn plus_never_selects_more(w in prop::collection::vec(-4.0f64..4.0, 1..60), q in 0.01f64..1.0) {
        prop_assert!(knockoff_threshold(&w, q, true).selected.len() <= knockoff_threshold(&w, q, false).selected.len());
    }

    #[test]
    fn threshold_is_sign_flip_monotone(w in prop::collection::vec(-4.0f64..4.0, 1..60), q in 0.01f64..1.0, k in 0usize..60) {
        // making one statistic positive cannot shrink the selection
        let mut up = w.clone();
        let k = k % w.len();
        up[k] = up[k].abs();
        let before = knockoff_threshold(&w, q, true).selected;
        let after = knockoff_threshold(&up, q, true).selected;
        prop_assert!(before.iter().all(|j| after.contains(j)));
    }

    #[test]
    fn bounds_behave(q in 0.01f64..0.5, pi in 0.2f64..0.95, b in 1usize..200, n in 1usize..100) {
        prop_assert!(fdr_bound(q, pi, b) >= q);
        prop_assert!(fdr_bound(q, pi, b + 1) <= fdr_bound(q, pi, b));
        let alpha = pi / 2.0;
        let p = pfer_bound(n, alpha, pi, b).unwrap();
        prop_assert!(p > 0.0 && p <= n as f64);
        prop_assert!(pfer_bound(n, pi, pi, b).is_err());
    }

    #[test]
    fn grid_is_decreasing(lmax in 1e-3f64..1e3, n in 2usize..200, ratio in 1e-4f64..0.9) {
        let g = log_grid(lmax, n, ratio);
        prop_assert_eq!(g.len(), n);
        prop_assert!((g[0] - lmax).abs() <= 1e-12 * lmax);
        prop_assert!((g[n - 1] / (lmax * ratio) - 1.0).abs() < 1e-10);
        prop_assert!(g.windows(2).all(|p| p[1] < p[0]));
    }
}
