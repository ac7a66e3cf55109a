//! `qptune`: predict encoder QPs that hit VMAF targets.
//!
//! Typical run on a synthetic corpus:
//!
//! ```text
//! qptune synth corpus --n-videos 512 --seed 7
//! qptune extract --manifest corpus/manifest.jsonl --out corpus/features --analysis-size native
//! qptune train --manifest corpus/manifest.jsonl --features corpus/features --out model.ckpt
//! qptune eval --manifest corpus/manifest.jsonl --checkpoint model.ckpt --features corpus/features --out report
//! ```
//!
//! Exit status: 0 success, 1 failure or partial failure, 2 bad invocation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use qptune::eval::Pooling;
use qptune::features::GroupMask;
use qptune::nn::TrainConfig;
use qptune::pipeline::{parse_analysis_size, ExtractOptions};
use qptune::rd::DEFAULT_VMAF_TARGETS;

use commands::{CurveSource, EvalSource, Outcome, SplitArg};
use config::ConfigFile;

/// Marks an error as the caller's fault (exit status 2).
#[derive(Debug)]
pub struct BadInvocation(anyhow::Error);

impl std::fmt::Display for BadInvocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for BadInvocation {}

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    BadInvocation(e.into()).into()
}

#[derive(Parser)]
#[command(name = "qptune", version, about = "Predict encoder QPs for VMAF targets")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct TrainFlags {
    /// Feature groups to drop, e.g. `-C` or `-F,-A`.
    #[arg(long, default_value = "full", allow_hyphen_values = true)]
    mask: String,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus with planted structure.
    ///
    /// Example: qptune synth corpus --n-videos 64 --seed 1
    Synth {
        out: PathBuf,
        #[arg(long)]
        n_videos: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract per-video raw features. Existing outputs are kept unless --force.
    ///
    /// Example: qptune extract --manifest m.jsonl --out features --jobs 4
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// `native` or `WxH` (default 480x270).
        #[arg(long)]
        analysis_size: Option<String>,
    },
    /// Derive ground-truth QPs from each entry's RD samples.
    ///
    /// Example: qptune fit-curves --manifest m.jsonl --out targets.json
    FitCurves {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the manifest's train split; writes a checkpoint and an epoch log CSV.
    ///
    /// Example: qptune train --manifest m.jsonl --features f --out model.ckpt --max-epochs 50
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint path with an `.epochs.csv` extension.
        #[arg(long)]
        epoch_log: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Predict eight QPs per video as JSON.
    ///
    /// Example: qptune predict --checkpoint model.ckpt --manifest m.jsonl --features f --split test
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against the RD curves; writes report.json and CSV tables.
    ///
    /// Example: qptune eval --manifest m.jsonl --predictions preds.json --out report
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, conflicts_with = "predictions", requires = "features")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// A file written by `predict`.
        #[arg(long, required_unless_present = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Average per-target means instead of pooling videos x targets.
        #[arg(long)]
        per_target_mean: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain once per feature mask and compare on the test split.
    ///
    /// Example: qptune ablate --manifest m.jsonl --features f --out ablation --masks 'full;-C'
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Masks separated by `;` or repeated flags (default: full and each group removed).
        #[arg(long, value_delimiter = ';', allow_hyphen_values = true)]
        masks: Vec<String>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the 42 complexity statistics of a Y4M file.
    ///
    /// Example: qptune complexity clip.y4m --analysis-size native
    Complexity {
        y4m: PathBuf,
        #[arg(long)]
        analysis_size: Option<String>,
        /// Extra I-frame indices; frame 0 always counts.
        #[arg(long, value_delimiter = ',')]
        key_frames: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an RD curve, evaluate it at QPs and invert it at VMAF levels.
    ///
    /// Example: qptune rd-interp --samples rd.json --qp 100,150 --vmaf 95,88
    RdInterp {
        /// JSON array of {"qp", "vmaf"} objects.
        #[arg(long, conflicts_with_all = ["manifest", "id"])]
        samples: Option<PathBuf>,
        #[arg(long, requires = "id")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        id: Option<String>,
        #[arg(long, value_delimiter = ',')]
        qp: Vec<f64>,
        /// Defaults to the eight standard targets.
        #[arg(long, value_delimiter = ',')]
        vmaf: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check embedding sidecar files against the format contract.
    ValidateEmbedding {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn extract_options(flag: Option<&str>, file: Option<&str>) -> Result<ExtractOptions> {
    match flag.or(file) {
        Some(s) => Ok(ExtractOptions {
            analysis_size: parse_analysis_size(s).map_err(usage)?,
        }),
        None => Ok(ExtractOptions::default()),
    }
}

fn parse_mask(s: &str) -> Result<GroupMask> {
    s.parse().map_err(usage)
}

fn run(cli: Cli) -> Result<Outcome> {
    let file = ConfigFile::load(cli.config.as_deref()).map_err(usage)?;
    match cli.cmd {
        Cmd::Synth { out, n_videos, seed } => {
            let mut spec = file.synth;
            if let Some(n) = n_videos {
                spec.n_videos = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            commands::synth(&spec, &out)
        }
        Cmd::Extract {
            manifest,
            out,
            force,
            jobs,
            analysis_size,
        } => {
            let opts = extract_options(analysis_size.as_deref(), file.extract.analysis_size.as_deref())?;
            let jobs = jobs.or(file.extract.jobs).unwrap_or(0);
            commands::extract(&manifest, &out, opts, jobs, force)
        }
        Cmd::FitCurves { manifest, targets, out } => {
            let targets = targets.unwrap_or_else(|| DEFAULT_VMAF_TARGETS.to_vec());
            commands::fit_curves(&manifest, &targets, out.as_deref())
        }
        Cmd::Train {
            manifest,
            features,
            out,
            epoch_log,
            train,
        } => {
            let mask = parse_mask(&train.mask)?;
            let cfg = train.apply(file.train);
            commands::train(
                commands::TrainArgs {
                    manifest: &manifest,
                    features: &features,
                    out: &out,
                    epoch_log: epoch_log.as_deref(),
                    mask,
                },
                &cfg,
            )
        }
        Cmd::Predict {
            checkpoint,
            manifest,
            features,
            split,
            out,
        } => commands::predict(&checkpoint, &manifest, &features, split, out.as_deref()),
        Cmd::Eval {
            manifest,
            checkpoint,
            features,
            predictions,
            split,
            per_target_mean,
            out,
        } => {
            let source = match (&checkpoint, &features, &predictions) {
                (Some(path), Some(features), _) => EvalSource::Checkpoint { path, features },
                (None, _, Some(p)) => EvalSource::Predictions(p),
                _ => return Err(usage(anyhow::anyhow!("give --checkpoint with --features, or --predictions"))),
            };
            let pooling = if per_target_mean { Pooling::PerTargetMean } else { Pooling::Pooled };
            commands::eval(source, &manifest, split, pooling, &out)
        }
        Cmd::Ablate {
            manifest,
            features,
            out,
            masks,
            learning_rate,
            max_epochs,
            batch_size,
            seed,
        } => {
            let masks = if masks.is_empty() {
                ["full", "-F", "-V", "-M", "-A", "-C"].iter().map(|s| parse_mask(s)).collect::<Result<Vec<_>>>()?
            } else {
                masks.iter().map(|s| parse_mask(s)).collect::<Result<Vec<_>>>()?
            };
            let flags = TrainFlags {
                mask: String::new(),
                learning_rate,
                max_epochs,
                batch_size,
                seed,
            };
            let cfg = flags.apply(file.train);
            commands::ablate(&manifest, &features, &out, &masks, &cfg)
        }
        Cmd::Complexity {
            y4m,
            analysis_size,
            key_frames,
            out,
        } => {
            let opts = extract_options(analysis_size.as_deref(), file.extract.analysis_size.as_deref())?;
            commands::complexity(&y4m, opts, &key_frames, out.as_deref())
        }
        Cmd::RdInterp {
            samples,
            manifest,
            id,
            qp,
            vmaf,
            out,
        } => {
            let src = match (&samples, &manifest, &id) {
                (Some(p), _, _) => CurveSource::Samples(p),
                (None, Some(path), Some(id)) => CurveSource::Manifest { path, id },
                _ => return Err(usage(anyhow::anyhow!("give --samples, or --manifest with --id"))),
            };
            let vmaf = vmaf.unwrap_or_else(|| DEFAULT_VMAF_TARGETS.to_vec());
            commands::rd_interp(src, &qp, &vmaf, out.as_deref())
        }
        Cmd::ValidateEmbedding { paths } => commands::validate_embedding(&paths),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<BadInvocation>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
