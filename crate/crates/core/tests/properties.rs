use proptest::prelude::*;
use qptune::embedding::{ClipEmbedding, TOKENS, TOKEN_DIM};
use qptune::eval::{score, EvalRecord, Pooling};
use qptune::features::{Scaler, SCALED_CLAMP};
use qptune::rd::{isotonic_non_increasing, RdCurve, RdSample};

/// Strictly increasing qps on 0..=255 with arbitrary (possibly non-monotone)
/// VMAF values.
fn samples() -> impl Strategy<Value = Vec<RdSample>> {
    prop::collection::btree_set(0u16..=255, 2..30).prop_flat_map(|qps| {
        let n = qps.len();
        prop::collection::vec(0.0f64..=100.0, n)
            .prop_map(move |v| qps.iter().zip(v).map(|(&q, y)| RdSample::new(q, y)).collect())
    })
}

fn records() -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>)>> {
    prop::collection::vec(
        (prop::collection::vec(0.0f64..40.0, 8), prop::collection::vec(0.0f64..12.0, 8)),
        1..25,
    )
}

proptest! {
    #[test]
    fn embedding_bytes_round_trip(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..TOKENS * TOKEN_DIM).map(|_| r.gen_range(-1e6f32..1e6)).collect();
        let e = ClipEmbedding::new(values).unwrap();
        prop_assert_eq!(ClipEmbedding::from_bytes(&e.to_bytes()).unwrap(), e);
    }

    #[test]
    fn isotonic_fit_is_monotone_and_keeps_the_sum(v in prop::collection::vec(-100.0f64..100.0, 1..60)) {
        let fit = isotonic_non_increasing(&v);
        prop_assert_eq!(fit.len(), v.len());
        prop_assert!(fit.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let (a, b): (f64, f64) = (v.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()));
    }

    #[test]
    fn fitted_curve_never_increases(s in samples()) {
        let c = RdCurve::fit(&s).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=1020 {
            let v = c.evaluate(k as f64 * 0.25);
            prop_assert!(v <= prev, "rises at qp {}", k as f64 * 0.25);
            prev = v;
        }
    }

    #[test]
    fn inversion_returns_the_largest_matching_qp(s in samples(), u in 0.0f64..=1.0) {
        let c = RdCurve::fit(&s).unwrap();
        let target = c.min_vmaf() + u * (c.max_vmaf() - c.min_vmaf());
        let q = c.invert(target).unwrap();
        prop_assert!(c.evaluate(q) >= target - 1e-6);
        if q + 1e-3 <= c.max_qp() {
            prop_assert!(c.evaluate(q + 1e-3) < target + 1e-6);
        }
    }

    #[test]
    fn scores_ignore_record_order(rows in records(), rot in 0usize..25) {
        let recs: Vec<EvalRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (q, v))| EvalRecord::from_errors(format!("v{i}"), q, v).unwrap())
            .collect();
        let mut shuffled = recs.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        for pooling in [Pooling::Pooled, Pooling::PerTargetMean] {
            let (a, b) = (score(&recs, pooling).unwrap(), score(&shuffled, pooling).unwrap());
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
            prop_assert!(close(a.overall.qp.mean, b.overall.qp.mean));
            prop_assert!(close(a.overall.vmaf.mean, b.overall.vmaf.mean));
            prop_assert!(close(a.overall.vmaf.median, b.overall.vmaf.median));
            prop_assert_eq!(a.overall.coverage_le2, b.overall.coverage_le2);
            for (x, y) in a.bands.iter().zip(&b.bands) {
                prop_assert!(close(x.vmaf.mean, y.vmaf.mean));
                prop_assert_eq!(x.coverage_le4, y.coverage_le4);
            }
            for (x, y) in a.per_target.iter().zip(&b.per_target) {
                prop_assert!(close(x.vmaf_mae, y.vmaf_mae));
                prop_assert_eq!(&x.cdf, &y.cdf);
                prop_assert_eq!(x.vmaf_box, y.vmaf_box);
            }
            let ids = |r: &qptune::eval::EvalReport| {
                let mut v: Vec<String> = r.jnd_outliers.iter().map(|o| o.video_id.clone()).collect();
                v.sort();
                v
            };
            prop_assert_eq!(ids(&a), ids(&b));
        }
    }

    #[test]
    fn scaled_values_stay_in_the_clamp_range(
        train in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..10),
        probe in prop::collection::vec(-1e5f64..1e5, 4),
    ) {
        let s = Scaler::fit(&train).unwrap();
        for v in s.transform(&probe) {
            prop_assert!((SCALED_CLAMP.0..=SCALED_CLAMP.1).contains(&v));
        }
        for row in &train {
            for v in s.transform(row) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let targets = qptune::rd::DEFAULT_VMAF_TARGETS;
    let recs: Vec<EvalRecord> = (0..6)
        .map(|i| {
            let s: Vec<RdSample> = (0..24)
                .map(|k| {
                    let q = (k as f64 * 255.0 / 23.0).round() as u16;
                    RdSample::new(q, 100.0 / (1.0 + ((f64::from(q) - 120.0 - 10.0 * i as f64) / 15.0).exp()))
                })
                .collect();
            let c = RdCurve::fit(&s).unwrap();
            let truth = c.derive_targets(&targets).qps();
            EvalRecord::new(format!("v{i}"), &c, &targets, &truth, &truth).unwrap()
        })
        .collect();
    for pooling in [Pooling::Pooled, Pooling::PerTargetMean] {
        let r = score(&recs, pooling).unwrap();
        assert_eq!(r.overall.qp.mean, 0.0);
        assert!(r.overall.vmaf.mean < 1e-6, "{}", r.overall.vmaf.mean);
        assert_eq!(r.overall.coverage_le2, 1.0);
        assert!(r.bands.iter().all(|b| b.coverage_le4 == 1.0));
        assert!(r.jnd_outliers.is_empty());
    }
}
