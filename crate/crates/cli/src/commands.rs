use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qptune::checkpoint;
use qptune::complexity::{self, ComplexityStats};
use qptune::embedding;
use qptune::eval::{self, EvalRecord, EvalReport, Pooling};
use qptune::features::{FeatureGroup, GroupMask};
use qptune::manifest::{Manifest, Split};
use qptune::model::{self, Model, Sample};
use qptune::nn::TrainConfig;
use qptune::pipeline::{self, ExtractOptions};
use qptune::rd::{QualityTargets, RdCurve, RdSample, TargetQp, DEFAULT_VMAF_TARGETS};
use qptune::synth::{self, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::usage;

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// Some entries failed; the rest were written.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::read(path).with_context(|| format!("manifest {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing stdout"),
            }
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(spec: &SynthSpec, out: &Path) -> Result<Outcome> {
    spec.validate().map_err(usage)?;
    eprintln!("synth: config hash {}", config_hash(spec));
    let (m, _) = synth::generate(spec, out).with_context(|| format!("generating corpus in {}", out.display()))?;
    eprintln!(
        "synth: {} videos ({} train, {} test) in {}",
        m.entries.len(),
        m.split(Split::Train).count(),
        m.split(Split::Test).count(),
        out.display()
    );
    Ok(Outcome::Ok)
}

pub fn extract(manifest: &Path, out: &Path, opts: ExtractOptions, jobs: usize, force: bool) -> Result<Outcome> {
    use rayon::prelude::*;

    let m = read_manifest(manifest)?;
    create_dir(out)?;
    eprintln!("extract: config hash {}", config_hash(&opts));
    let todo: Vec<_> = m
        .entries
        .iter()
        .filter(|e| force || !pipeline::feature_path(out, &e.id).exists())
        .collect();
    let skipped = m.entries.len() - todo.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")?;
    let failures: Vec<String> = pool.install(|| {
        todo.par_iter()
            .filter_map(|e| {
                let res = pipeline::extract_entry(&m, e, &opts)
                    .and_then(|ff| ff.write(&pipeline::feature_path(out, &e.id)));
                res.err().map(|err| format!("{}: {err}", e.id))
            })
            .collect()
    });
    for f in &failures {
        eprintln!("extract: error: {f}");
    }
    eprintln!(
        "extract: {} written, {} skipped, {} failed",
        todo.len() - failures.len(),
        skipped,
        failures.len()
    );
    Ok(if failures.is_empty() { Outcome::Ok } else { Outcome::Partial })
}

#[derive(Serialize)]
struct CurveRow<'a> {
    id: &'a str,
    split: Split,
    #[serde(flatten)]
    targets: QualityTargets,
}

pub fn fit_curves(manifest: &Path, targets: &[f64], out: Option<&Path>) -> Result<Outcome> {
    let m = read_manifest(manifest)?;
    let fitted = pipeline::fit_curves(&m, targets)?;
    let rows: Vec<CurveRow> = m
        .entries
        .iter()
        .zip(fitted)
        .map(|(e, (id, t))| {
            debug_assert_eq!(e.id, id);
            CurveRow {
                id: &e.id,
                split: e.split,
                targets: t,
            }
        })
        .collect();
    let unreachable: usize = rows
        .iter()
        .map(|r| r.targets.derived_qps.iter().filter(|t| !t.is_reachable()).count())
        .sum();
    if unreachable > 0 {
        eprintln!("fit-curves: {unreachable} targets outside their curve's range were clamped");
    }
    write_out(out, &serde_json::to_string_pretty(&rows)?)?;
    Ok(Outcome::Ok)
}

fn samples(manifest: &Manifest, features: &Path, split: Option<Split>, targets: &[f64], mask: GroupMask) -> Result<Vec<Sample>> {
    let with_clip = !mask.is_removed(FeatureGroup::Clip);
    pipeline::load_samples(manifest, features, split, targets, with_clip)
        .with_context(|| format!("loading samples (features in {})", features.display()))
}

fn fit(train: &[Sample], mask: GroupMask, cfg: &TrainConfig, tag: &str) -> Result<Model> {
    let m = model::train(train, mask, cfg, |l| {
        eprintln!(
            "{tag}: epoch {:>3} train {:.4} val {:.4} lr {:.2e}",
            l.epoch, l.train_loss, l.val_loss, l.lr
        )
    })?;
    Ok(m)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
}

fn write_epoch_log(model: &Model, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for l in &model.history {
        w.serialize(EpochRow {
            epoch: l.epoch,
            train_loss: l.train_loss,
            val_loss: l.val_loss,
            lr: l.lr,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrainArgs<'a> {
    pub manifest: &'a Path,
    pub features: &'a Path,
    pub out: &'a Path,
    pub epoch_log: Option<&'a Path>,
    pub mask: GroupMask,
}

pub fn train(a: TrainArgs, cfg: &TrainConfig) -> Result<Outcome> {
    cfg.validate().map_err(usage)?;
    let m = read_manifest(a.manifest)?;
    let train = samples(&m, a.features, Some(Split::Train), &DEFAULT_VMAF_TARGETS, a.mask)?;
    eprintln!(
        "train: {} samples, mask {}, config hash {}",
        train.len(),
        a.mask,
        config_hash(&(cfg, a.mask))
    );
    let model = fit(&train, a.mask, cfg, "train")?;
    eprintln!(
        "train: head {} params, embedder {} params",
        model.net.head.param_count(),
        model.net.clip_param_count()
    );
    checkpoint::save(&model, a.out).with_context(|| format!("saving {}", a.out.display()))?;
    let log = a
        .epoch_log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| a.out.with_extension("epochs.csv"));
    write_epoch_log(&model, &log)?;
    eprintln!("train: wrote {} and {}", a.out.display(), log.display());
    Ok(Outcome::Ok)
}

/// One line of a predictions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub vmaf_targets: Vec<f64>,
    pub qp: Vec<f64>,
}

fn load_model(path: &Path) -> Result<Model> {
    checkpoint::load(path).with_context(|| format!("checkpoint {}", path.display()))
}

fn predict_rows(model: &Model, samples: &[Sample]) -> Result<Vec<PredictionRow>> {
    let preds = model.predict_samples(samples)?;
    Ok(samples
        .iter()
        .zip(preds)
        .map(|(s, p)| PredictionRow {
            id: s.id.clone(),
            vmaf_targets: p.vmaf_targets,
            qp: p.qp,
        })
        .collect())
}

pub fn predict(ckpt: &Path, manifest: &Path, features: &Path, split: SplitArg, out: Option<&Path>) -> Result<Outcome> {
    let model = load_model(ckpt)?;
    let m = read_manifest(manifest)?;
    let s = samples(&m, features, split.split(), &model.vmaf_targets, model.mask)?;
    let rows = predict_rows(&model, &s)?;
    write_out(out, &serde_json::to_string_pretty(&rows)?)?;
    Ok(Outcome::Ok)
}

fn records(rows: &[PredictionRow], manifest: &Manifest, split: Option<Split>) -> Result<Vec<EvalRecord>> {
    let mut out = vec![];
    for e in manifest.entries.iter().filter(|e| split.map_or(true, |s| e.split == s)) {
        let Some(row) = rows.iter().find(|r| r.id == e.id) else {
            bail!("no prediction for {}", e.id);
        };
        let curve = e.curve()?;
        let truth = curve.derive_targets(&row.vmaf_targets).qps();
        out.push(EvalRecord::new(&e.id, &curve, &row.vmaf_targets, &row.qp, &truth)?);
    }
    if out.is_empty() {
        bail!("nothing to evaluate");
    }
    Ok(out)
}

fn write_report(dir: &Path, report: &EvalReport, recs: &[EvalRecord]) -> Result<()> {
    create_dir(dir)?;
    let files = [
        ("report.json", serde_json::to_string_pretty(report)?),
        ("summary.csv", report.summary_csv()?),
        ("cdf.csv", report.cdf_csv()?),
        ("boxplot.csv", report.boxplot_csv()?),
        ("records.csv", eval::records_csv(recs)?),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub enum EvalSource<'a> {
    Checkpoint { path: &'a Path, features: &'a Path },
    Predictions(&'a Path),
}

pub fn eval(source: EvalSource, manifest: &Path, split: SplitArg, pooling: Pooling, out: &Path) -> Result<Outcome> {
    let m = read_manifest(manifest)?;
    let rows = match source {
        EvalSource::Checkpoint { path, features } => {
            let model = load_model(path)?;
            let s = samples(&m, features, split.split(), &model.vmaf_targets, model.mask)?;
            predict_rows(&model, &s)?
        }
        EvalSource::Predictions(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
    };
    let recs = records(&rows, &m, split.split())?;
    let report = eval::score(&recs, pooling)?;
    write_report(out, &report, &recs)?;
    write_out(None, report.summary_csv()?.trim_end())?;
    Ok(Outcome::Ok)
}

fn mask_slug(mask: GroupMask) -> String {
    mask.to_string().replace('-', "no").replace(',', "_")
}

pub fn ablate(manifest: &Path, features: &Path, out: &Path, masks: &[GroupMask], cfg: &TrainConfig) -> Result<Outcome> {
    cfg.validate().map_err(usage)?;
    if masks.is_empty() {
        return Err(usage(anyhow::anyhow!("no masks given")));
    }
    let m = read_manifest(manifest)?;
    create_dir(out)?;
    eprintln!("ablate: config hash {}", config_hash(&(cfg, masks)));
    let mut rows = vec![];
    let mut failed = 0;
    for &mask in masks {
        let run = || -> Result<EvalReport> {
            let train = samples(&m, features, Some(Split::Train), &DEFAULT_VMAF_TARGETS, mask)?;
            let test = samples(&m, features, Some(Split::Test), &DEFAULT_VMAF_TARGETS, mask)?;
            let model = fit(&train, mask, cfg, &format!("ablate {mask}"))?;
            let slug = mask_slug(mask);
            checkpoint::save(&model, &out.join(format!("{slug}.ckpt")))?;
            write_epoch_log(&model, &out.join(format!("{slug}.epochs.csv")))?;
            let recs = records(&predict_rows(&model, &test)?, &m, Some(Split::Test))?;
            let report = eval::score(&recs, Pooling::Pooled)?;
            write_report(&out.join(&slug), &report, &recs)?;
            Ok(report)
        };
        match run() {
            Ok(r) => rows.push((mask.to_string(), r)),
            Err(e) => {
                failed += 1;
                eprintln!("ablate: error: mask {mask}: {e:#}");
            }
        }
    }
    let table = eval::ablation_csv(&rows)?;
    fs::write(out.join("ablation.csv"), &table)?;
    write_out(None, table.trim_end())?;
    Ok(if failed == 0 { Outcome::Ok } else { Outcome::Partial })
}

#[derive(Serialize)]
struct ComplexityOut {
    frames: usize,
    analysis_size: Option<(usize, usize)>,
    stats: ComplexityStats,
    vector: Vec<f64>,
}

pub fn complexity(y4m: &Path, opts: ExtractOptions, key_frames: &[usize], out: Option<&Path>) -> Result<Outcome> {
    let per_frame = pipeline::analyze_y4m(y4m, &opts).with_context(|| format!("analysing {}", y4m.display()))?;
    let flags = complexity::iframe_flags(per_frame.len(), key_frames);
    let stats = complexity::aggregate(&per_frame, &flags)?;
    let res = ComplexityOut {
        frames: per_frame.len(),
        analysis_size: opts.analysis_size,
        vector: stats.to_vec(),
        stats,
    };
    write_out(out, &serde_json::to_string_pretty(&res)?)?;
    Ok(Outcome::Ok)
}

pub enum CurveSource<'a> {
    Samples(&'a Path),
    Manifest { path: &'a Path, id: &'a str },
}

#[derive(Serialize)]
struct RdInterpOut {
    knots: Vec<(f64, f64)>,
    evaluated: Vec<(f64, f64)>,
    inverted: Vec<(f64, TargetQp)>,
}

pub fn rd_interp(src: CurveSource, qps: &[f64], vmafs: &[f64], out: Option<&Path>) -> Result<Outcome> {
    let curve = match src {
        CurveSource::Samples(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let s: Vec<RdSample> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            RdCurve::fit(&s)?
        }
        CurveSource::Manifest { path, id } => {
            let m = read_manifest(path)?;
            let Some(e) = m.entries.iter().find(|e| e.id == id) else {
                return Err(usage(anyhow::anyhow!("no entry {id:?} in {}", path.display())));
            };
            e.curve()?
        }
    };
    let targets = curve.derive_targets(vmafs);
    let res = RdInterpOut {
        knots: curve.knots().collect(),
        evaluated: qps.iter().map(|&q| (q, curve.evaluate(q))).collect(),
        inverted: vmafs.iter().copied().zip(targets.derived_qps).collect(),
    };
    write_out(out, &serde_json::to_string_pretty(&res)?)?;
    Ok(Outcome::Ok)
}

pub fn validate_embedding(paths: &[PathBuf]) -> Result<Outcome> {
    let mut bad = 0;
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        match embedding::validate_bytes(&bytes) {
            Ok(()) => println!("{}: ok", p.display()),
            Err(v) => {
                bad += 1;
                println!("{}: {v}", p.display());
            }
        }
    }
    Ok(if bad == 0 { Outcome::Ok } else { Outcome::Partial })
}

