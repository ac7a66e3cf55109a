mod common;

use common::{build_corpus, brightness_naive, rel, sc_naive, tc_naive};
use nalgebra::{DMatrix, DVector};
use qptune::features::GroupMask;
use qptune::manifest::Split;
use qptune::media::read_y4m;
use qptune::model::train;
use qptune::nn::TrainConfig;
use qptune::pipeline::{load_samples, FeatureFile};
use qptune::rd::DEFAULT_VMAF_TARGETS;
use qptune::synth::SynthSpec;

fn small(n: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_videos: n,
        seed,
        width: 32,
        height: 32,
        frames: 4,
        ..SynthSpec::default()
    }
}

#[test]
fn single_clip_is_memorized() {
    let corpus = build_corpus(&small(2, 3));
    let mut samples = load_samples(&corpus.manifest, &corpus.features, Some(Split::Train), &DEFAULT_VMAF_TARGETS, true).unwrap();
    samples.truncate(1);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        l2: 0.0,
        dropout: 0.0,
        max_epochs: 400,
        ..TrainConfig::default()
    };
    let model = train(&samples, GroupMask::full(), &cfg, |_| {}).unwrap();
    let best = model.history.iter().map(|l| l.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 1e-3, "best loss {best}");
    let pred = model.predict_samples(&samples).unwrap().remove(0);
    for (p, t) in pred.qp.iter().zip(&samples[0].target_qp) {
        assert!((p - t).abs() < 1.0, "{p} vs {t}");
    }
}

/// Least squares with a small ridge, solved independently of the library.
fn ridge_r2(x: &[Vec<f64>], y: &[f64], n_fit: usize) -> f64 {
    let d = x[0].len();
    // standardize on the fitting rows
    let mut mu = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        mu[j] = x[..n_fit].iter().map(|r| r[j]).sum::<f64>() / n_fit as f64;
        sd[j] = (x[..n_fit].iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n_fit as f64).sqrt();
    }
    let row = |r: &Vec<f64>| -> Vec<f64> {
        std::iter::once(1.0)
            .chain((0..d).map(|j| if sd[j] > 1e-12 { (r[j] - mu[j]) / sd[j] } else { 0.0 }))
            .collect()
    };
    let a = DMatrix::from_fn(n_fit, d + 1, |i, j| row(&x[i])[j]);
    let b = DVector::from_column_slice(&y[..n_fit]);
    let mut gram = a.transpose() * &a;
    for j in 1..=d {
        gram[(j, j)] += 1.0;
    }
    let w = gram.cholesky().unwrap().solve(&(a.transpose() * b));
    let held: Vec<(f64, f64)> = (n_fit..y.len())
        .map(|i| (row(&x[i]).iter().zip(w.iter()).map(|(p, q)| p * q).sum(), y[i]))
        .collect();
    let mean = held.iter().map(|(_, t)| t).sum::<f64>() / held.len() as f64;
    let ss_res: f64 = held.iter().map(|(p, t)| (p - t).powi(2)).sum();
    let ss_tot: f64 = held.iter().map(|(_, t)| (t - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn generated_features_predict_the_curve_midpoint() {
    let corpus = build_corpus(&small(160, 21));
    let (mut x, mut y) = (vec![], vec![]);
    for (e, lat) in corpus.manifest.entries.iter().zip(&corpus.latents) {
        assert_eq!(e.id, lat.id);
        let ff = FeatureFile::read(&qptune::pipeline::feature_path(&corpus.features, &e.id)).unwrap();
        x.push(ff.raw.video_level.iter().chain(&ff.raw.meta).chain(&ff.raw.complexity).copied().collect::<Vec<f64>>());
        y.push(lat.center);
    }
    let r2 = ridge_r2(&x, &y, 120);
    assert!(r2 > 0.5, "held-out R^2 {r2}");
}

#[test]
fn extracted_per_frame_values_match_naive_kernels() {
    let corpus = build_corpus(&small(3, 8));
    for e in &corpus.manifest.entries {
        let bytes = std::fs::read(corpus.manifest.resolve(&e.y4m_path)).unwrap();
        let (_, frames) = read_y4m(&bytes[..]).unwrap();
        let ff = FeatureFile::read(&qptune::pipeline::feature_path(&corpus.features, &e.id)).unwrap();
        assert_eq!(ff.per_frame.len(), frames.len());
        for (i, (fc, f)) in ff.per_frame.iter().zip(&frames).enumerate() {
            assert!(rel(fc.sc, sc_naive(f)) < 1e-12, "{} frame {i} sc", e.id);
            assert!(rel(fc.brightness, brightness_naive(f)) < 1e-12);
            match (fc.tc, i) {
                (None, 0) => {}
                (Some(tc), i) if i > 0 => assert!(rel(tc, tc_naive(f, &frames[i - 1])) < 1e-12),
                other => panic!("tc {other:?}"),
            }
        }
    }
}
