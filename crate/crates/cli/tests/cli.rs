use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qptune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qptune")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = qptune(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden")
}

fn synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
    ok(&["synth", s(dir), "--n-videos", &n.to_string(), "--seed", &seed.to_string()]);
    dir.join("manifest.jsonl")
}

fn summary_vmaf_mae(report_dir: &Path) -> f64 {
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    r["overall"]["vmaf"]["mean"].as_f64().unwrap()
}

#[test]
fn same_seed_gives_identical_corpus() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = std::fs::read(synth(a.path(), 6, 42)).unwrap();
    let mb = std::fs::read(synth(b.path(), 6, 42)).unwrap();
    assert_eq!(ma, mb);
    let y = |d: &Path| std::fs::read(d.join("media/syn00003.y4m")).unwrap();
    assert_eq!(y(a.path()), y(b.path()));
}

#[test]
fn extract_skips_existing_outputs_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 2, 1);
    let feats = dir.path().join("features");
    let run = |force: bool| {
        let mut args = vec!["extract", "--manifest", s(&m), "--out", s(&feats), "--analysis-size", "native", "--jobs", "2"];
        if force {
            args.push("--force");
        }
        ok(&args);
    };
    run(false);
    let files: Vec<PathBuf> = std::fs::read_dir(&feats).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 2);
    let mtimes = || -> Vec<_> { files.iter().map(|p| std::fs::metadata(p).unwrap().modified().unwrap()).collect() };
    let first = mtimes();
    std::thread::sleep(std::time::Duration::from_millis(20));
    run(false);
    assert_eq!(mtimes(), first);
    run(true);
    assert!(mtimes().iter().zip(&first).all(|(a, b)| a > b));
}

#[test]
fn one_bad_entry_fails_the_run_but_not_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 2, 1);
    std::fs::remove_file(dir.path().join("media/syn00001.y4m")).unwrap();
    let feats = dir.path().join("features");
    let out = qptune(&["extract", "--manifest", s(&m), "--out", s(&feats), "--analysis-size", "native"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("syn00001"));
    assert!(feats.join("syn00000.features.json").exists());
    assert!(!feats.join("syn00001.features.json").exists());
}

#[test]
fn bad_invocations_exit_with_2() {
    assert_eq!(qptune(&["train"]).status.code(), Some(2));
    assert_eq!(qptune(&["no-such-command"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = qptune(&["synth", s(dir.path()), "--n-videos", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qptune(&["eval", "--manifest", "m.jsonl", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[trian]\nmax_epochs = 3\n").unwrap();
    assert_eq!(qptune(&["--config", s(&cfg), "synth", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[synth]\nn_videos = 5\nwidth = 16\nheight = 16\nframes = 2\n\n[train]\nmax_epochs = 3\nbatch_size = 4\n").unwrap();
    let count = |d: &Path| std::fs::read_to_string(d.join("manifest.jsonl")).unwrap().lines().count();

    let a = dir.path().join("a");
    ok(&["--config", s(&cfg), "synth", s(&a)]);
    assert_eq!(count(&a), 5);
    let b = dir.path().join("b");
    ok(&["--config", s(&cfg), "synth", s(&b), "--n-videos", "3"]);
    assert_eq!(count(&b), 3);

    let m = a.join("manifest.jsonl");
    let feats = a.join("features");
    ok(&["extract", "--manifest", s(&m), "--out", s(&feats), "--analysis-size", "native"]);
    let epochs = |ckpt: &Path| std::fs::read_to_string(ckpt.with_extension("epochs.csv")).unwrap().lines().count() - 1;
    let c1 = dir.path().join("c1.ckpt");
    ok(&["--config", s(&cfg), "train", "--manifest", s(&m), "--features", s(&feats), "--out", s(&c1)]);
    assert_eq!(epochs(&c1), 3);
    let c2 = dir.path().join("c2.ckpt");
    ok(&["--config", s(&cfg), "train", "--manifest", s(&m), "--features", s(&feats), "--out", s(&c2), "--max-epochs", "2"]);
    assert_eq!(epochs(&c2), 2);
}

#[test]
fn predict_reproduces_golden_outputs() {
    let g = golden();
    let out = ok(&[
        "predict",
        "--checkpoint",
        s(&g.join("model.ckpt")),
        "--manifest",
        s(&g.join("manifest.jsonl")),
        "--features",
        s(&g.join("features")),
    ]);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    let want: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&std::fs::read(g.join("expected.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), want.len());
    for r in rows {
        let id = r["id"].as_str().unwrap();
        for (q, w) in r["qp"].as_array().unwrap().iter().zip(want[id].as_array().unwrap()) {
            let (q, w) = (q.as_f64().unwrap(), w.as_f64().unwrap() * 255.0);
            assert!((q - w).abs() < 1e-6, "{id}: {q} vs {w}");
        }
    }
}

#[test]
fn eval_of_ground_truth_predictions_is_perfect() {
    let g = golden();
    let dir = tempfile::tempdir().unwrap();
    let m = g.join("manifest.jsonl");
    let curves: Vec<serde_json::Value> =
        serde_json::from_slice(&ok(&["fit-curves", "--manifest", s(&m)]).stdout).unwrap();
    let rows: Vec<serde_json::Value> = curves
        .iter()
        .map(|c| {
            let qp: Vec<f64> = c["derived_qps"].as_array().unwrap().iter().map(|t| t["qp"].as_f64().unwrap()).collect();
            serde_json::json!({"id": c["id"], "vmaf_targets": c["vmaf_targets"], "qp": qp})
        })
        .collect();
    let preds = dir.path().join("truth.json");
    std::fs::write(&preds, serde_json::to_vec(&rows).unwrap()).unwrap();
    let report = dir.path().join("report");
    ok(&["eval", "--manifest", s(&m), "--predictions", s(&preds), "--split", "all", "--out", s(&report)]);
    assert!(summary_vmaf_mae(&report) < 1e-6);
    for f in ["summary.csv", "cdf.csv", "boxplot.csv", "records.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

/// Trains twice on the 512-clip synthetic corpus (roughly 20 s).
#[test]
fn embedding_helps_on_the_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 512, 2024);
    let feats = dir.path().join("features");
    ok(&["extract", "--manifest", s(&m), "--out", s(&feats), "--analysis-size", "native"]);
    let out = dir.path().join("ablation");
    ok(&[
        "ablate", "--manifest", s(&m), "--features", s(&feats), "--out", s(&out), "--masks", "full;-C", "--max-epochs", "50",
        "--seed", "11",
    ]);
    let full = summary_vmaf_mae(&out.join("full"));
    let no_clip = summary_vmaf_mae(&out.join("noC"));
    assert!(full <= no_clip, "full {full} vs -C {no_clip}");
    assert!(out.join("ablation.csv").exists());
}
