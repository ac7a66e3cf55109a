//! Evaluation protocol: QP and VMAF errors, coverage at 2 and 4 VMAF points,
//! overlapping quality bands, CDF tables, boxplot quartiles and JND
//! outliers.
//!
//! The achieved VMAF of a predicted QP is read off the clip's ground-truth
//! RD curve; no encoder runs.

use serde::{Deserialize, Serialize};

use crate::rd::RdCurve;
use crate::stats;
use crate::{Error, Result};

/// Target index ranges of the quality bands, for the 8 default targets
/// (99, 97, 95, 91, 88, 85, 83, 80). Bands overlap on purpose.
pub const BANDS: [(&str, std::ops::Range<usize>); 3] = [("High", 0..4), ("Med", 2..6), ("Low", 4..8)];
pub const JND: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEval {
    pub vmaf_target: f64,
    pub qp_pred: f64,
    pub qp_true: f64,
    pub qp_err: f64,
    pub vmaf_achieved: f64,
    pub vmaf_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub video_id: String,
    pub targets: Vec<TargetEval>,
}

impl EvalRecord {
    pub fn new(
        video_id: impl Into<String>,
        curve: &RdCurve,
        vmaf_targets: &[f64],
        qp_pred: &[f64],
        qp_true: &[f64],
    ) -> Result<Self> {
        if qp_pred.len() != vmaf_targets.len() || qp_true.len() != vmaf_targets.len() {
            return Err(Error::invalid(format!(
                "{} targets, {} predictions, {} ground-truth QPs",
                vmaf_targets.len(),
                qp_pred.len(),
                qp_true.len()
            )));
        }
        let targets = vmaf_targets
            .iter()
            .zip(qp_pred.iter().zip(qp_true))
            .map(|(&v, (&p, &t))| {
                let achieved = curve.evaluate(p);
                TargetEval {
                    vmaf_target: v,
                    qp_pred: p,
                    qp_true: t,
                    qp_err: (p - t).abs(),
                    vmaf_achieved: achieved,
                    vmaf_err: (achieved - v).abs(),
                }
            })
            .collect();
        let r = Self {
            video_id: video_id.into(),
            targets,
        };
        r.check()?;
        Ok(r)
    }

    /// A record from precomputed absolute errors (tests, external data).
    pub fn from_errors(video_id: impl Into<String>, qp_err: &[f64], vmaf_err: &[f64]) -> Result<Self> {
        if qp_err.len() != vmaf_err.len() {
            return Err(Error::invalid("qp and vmaf error lists differ in length"));
        }
        let r = Self {
            video_id: video_id.into(),
            targets: qp_err
                .iter()
                .zip(vmaf_err)
                .map(|(&q, &v)| TargetEval {
                    vmaf_target: f64::NAN,
                    qp_pred: f64::NAN,
                    qp_true: f64::NAN,
                    qp_err: q,
                    vmaf_achieved: f64::NAN,
                    vmaf_err: v,
                })
                .collect(),
        };
        if r.targets.iter().any(|t| !(t.qp_err.is_finite() && t.vmaf_err.is_finite())) {
            return Err(Error::NonFinite(format!("errors of {}", r.video_id)));
        }
        Ok(r)
    }

    fn check(&self) -> Result<()> {
        let finite = self.targets.iter().all(|t| {
            [t.vmaf_target, t.qp_pred, t.qp_true, t.qp_err, t.vmaf_achieved, t.vmaf_err]
                .iter()
                .all(|v| v.is_finite())
        });
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("record {}", self.video_id)))
        }
    }
}

/// How band and overall means are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over every (video, in-band target) error.
    #[default]
    Pooled,
    /// Mean of the per-target means.
    PerTargetMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub name: String,
    pub target_indices: Vec<usize>,
    pub qp: ErrorStats,
    pub vmaf: ErrorStats,
    pub coverage_le2: f64,
    pub coverage_le4: f64,
}

/// min, q1, median, q3, max.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let s = stats::sorted(values);
        Self {
            min: s[0],
            q1: stats::percentile_sorted(&s, 0.25),
            median: stats::percentile_sorted(&s, 0.5),
            q3: stats::percentile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub index: usize,
    pub vmaf_target: f64,
    pub qp_mae: f64,
    pub vmaf_mae: f64,
    pub coverage_le2: f64,
    pub coverage_le4: f64,
    pub qp_box: Quartiles,
    pub vmaf_box: Quartiles,
    pub cdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub video_id: String,
    /// (target index, |dVMAF|) at or above the JND.
    pub targets: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_videos: usize,
    pub pooling: Pooling,
    pub overall: BandReport,
    pub bands: Vec<BandReport>,
    pub per_target: Vec<TargetReport>,
    pub jnd_outliers: Vec<Outlier>,
}

fn error_stats(values: &[f64]) -> ErrorStats {
    let s = stats::sorted(values);
    ErrorStats {
        mean: stats::mean(values),
        median: stats::percentile_sorted(&s, 0.5),
        std: stats::std_dev(values),
    }
}

fn fraction_within(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|&&v| v <= threshold).count() as f64 / values.len() as f64
}

fn column(records: &[EvalRecord], i: usize, vmaf: bool) -> Vec<f64> {
    records
        .iter()
        .map(|r| if vmaf { r.targets[i].vmaf_err } else { r.targets[i].qp_err })
        .collect()
}

fn band(records: &[EvalRecord], name: &str, idx: std::ops::Range<usize>, pooling: Pooling) -> BandReport {
    let gather = |vmaf: bool| -> Vec<f64> {
        records
            .iter()
            .flat_map(|r| r.targets[idx.clone()].iter().map(move |t| if vmaf { t.vmaf_err } else { t.qp_err }))
            .collect()
    };
    let (qp, vm) = (gather(false), gather(true));
    let mut report = BandReport {
        name: name.to_string(),
        target_indices: idx.clone().collect(),
        qp: error_stats(&qp),
        vmaf: error_stats(&vm),
        coverage_le2: fraction_within(&vm, 2.0),
        coverage_le4: fraction_within(&vm, 4.0),
    };
    if pooling == Pooling::PerTargetMean {
        let per = |f: &dyn Fn(&[f64]) -> f64, vmaf: bool| -> f64 {
            let means: Vec<f64> = idx.clone().map(|i| f(&column(records, i, vmaf))).collect();
            stats::mean(&means)
        };
        report.qp.mean = per(&stats::mean, false);
        report.vmaf.mean = per(&stats::mean, true);
        report.coverage_le2 = per(&|v| fraction_within(v, 2.0), true);
        report.coverage_le4 = per(&|v| fraction_within(v, 4.0), true);
    }
    report
}

/// Default CDF thresholds: every 0.25 VMAF from 0 up to the first step at
/// or above the largest error, so the table ends at 1.0.
pub fn default_thresholds(records: &[EvalRecord]) -> Vec<f64> {
    let max = records
        .iter()
        .flat_map(|r| r.targets.iter().map(|t| t.vmaf_err))
        .fold(0.0, f64::max);
    let steps = (max / 0.25).ceil() as usize;
    (0..=steps.max(1)).map(|k| k as f64 * 0.25).collect()
}

/// Fraction of videos with |dVMAF| <= threshold at one target.
pub fn cdf_table(records: &[EvalRecord], target_index: usize, thresholds: &[f64]) -> Vec<(f64, f64)> {
    if records.is_empty() {
        return thresholds.iter().map(|&t| (t, 0.0)).collect();
    }
    let errs = column(records, target_index, true);
    thresholds.iter().map(|&t| (t, fraction_within(&errs, t))).collect()
}

/// Videos with any |dVMAF| >= `jnd`, with the offending targets.
pub fn jnd_outliers(records: &[EvalRecord], jnd: f64) -> Vec<Outlier> {
    records
        .iter()
        .filter_map(|r| {
            let targets: Vec<(usize, f64)> = r
                .targets
                .iter()
                .enumerate()
                .filter(|(_, t)| t.vmaf_err >= jnd)
                .map(|(i, t)| (i, t.vmaf_err))
                .collect();
            (!targets.is_empty()).then(|| Outlier {
                video_id: r.video_id.clone(),
                targets,
            })
        })
        .collect()
}

pub fn score(records: &[EvalRecord], pooling: Pooling) -> Result<EvalReport> {
    let first = records.first().ok_or_else(|| Error::invalid("no records to score"))?;
    let n_targets = first.targets.len();
    if n_targets == 0 {
        return Err(Error::invalid("records carry no targets"));
    }
    if let Some(r) = records.iter().find(|r| r.targets.len() != n_targets) {
        return Err(Error::invalid(format!(
            "{} has {} targets, expected {n_targets}",
            r.video_id,
            r.targets.len()
        )));
    }
    let thresholds = default_thresholds(records);
    let per_target = (0..n_targets)
        .map(|i| {
            let (qp, vm) = (column(records, i, false), column(records, i, true));
            TargetReport {
                index: i,
                vmaf_target: first.targets[i].vmaf_target,
                qp_mae: stats::mean(&qp),
                vmaf_mae: stats::mean(&vm),
                coverage_le2: fraction_within(&vm, 2.0),
                coverage_le4: fraction_within(&vm, 4.0),
                qp_box: Quartiles::of(&qp),
                vmaf_box: Quartiles::of(&vm),
                cdf: cdf_table(records, i, &thresholds),
            }
        })
        .collect();
    let bands = if n_targets == crate::rd::DEFAULT_VMAF_TARGETS.len() {
        BANDS.iter().map(|(n, r)| band(records, n, r.clone(), pooling)).collect()
    } else {
        vec![]
    };
    Ok(EvalReport {
        n_videos: records.len(),
        pooling,
        overall: band(records, "All", 0..n_targets, pooling),
        bands,
        per_target,
        jnd_outliers: jnd_outliers(records, JND),
    })
}

impl EvalReport {
    /// scope, metric, value rows.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["scope", "qp_mae", "qp_median", "qp_std", "vmaf_mae", "vmaf_median", "vmaf_std", "coverage_le2", "coverage_le4"])
            .map_err(csv_err)?;
        for b in std::iter::once(&self.overall).chain(&self.bands) {
            w.write_record(band_row(&b.name, b)).map_err(csv_err)?;
        }
        finish(w)
    }

    /// target, vmaf_target, threshold, fraction rows.
    pub fn cdf_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["target_index", "vmaf_target", "threshold", "fraction"]).map_err(csv_err)?;
        for t in &self.per_target {
            for (thr, frac) in &t.cdf {
                w.write_record([t.index.to_string(), t.vmaf_target.to_string(), thr.to_string(), frac.to_string()])
                    .map_err(csv_err)?;
            }
        }
        finish(w)
    }

    /// One row per target and quantity with the five box statistics.
    pub fn boxplot_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["target_index", "vmaf_target", "quantity", "min", "q1", "median", "q3", "max"])
            .map_err(csv_err)?;
        for t in &self.per_target {
            for (name, q) in [("qp_err", &t.qp_box), ("vmaf_err", &t.vmaf_box)] {
                w.write_record([
                    t.index.to_string(),
                    t.vmaf_target.to_string(),
                    name.to_string(),
                    q.min.to_string(),
                    q.q1.to_string(),
                    q.median.to_string(),
                    q.q3.to_string(),
                    q.max.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish(w)
    }
}

fn band_row(label: &str, b: &BandReport) -> Vec<String> {
    let mut row = vec![label.to_string()];
    row.extend(
        [b.qp.mean, b.qp.median, b.qp.std, b.vmaf.mean, b.vmaf.median, b.vmaf.std, b.coverage_le2, b.coverage_le4]
            .iter()
            .map(f64::to_string),
    );
    row
}

/// Ablation table: one row per mask with overall and per-band MAE and
/// coverage.
pub fn ablation_csv(rows: &[(String, EvalReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["mask", "scope", "qp_mae", "vmaf_mae", "coverage_le2", "coverage_le4"])
        .map_err(csv_err)?;
    for (mask, report) in rows {
        for b in std::iter::once(&report.overall).chain(&report.bands) {
            w.write_record([
                mask.clone(),
                b.name.clone(),
                b.qp.mean.to_string(),
                b.vmaf.mean.to_string(),
                b.coverage_le2.to_string(),
                b.coverage_le4.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Per-record, per-target CSV.
pub fn records_csv(records: &[EvalRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["video_id", "target_index", "vmaf_target", "qp_pred", "qp_true", "qp_err", "vmaf_achieved", "vmaf_err"])
        .map_err(csv_err)?;
    for r in records {
        for (i, t) in r.targets.iter().enumerate() {
            w.write_record([
                r.video_id.clone(),
                i.to_string(),
                t.vmaf_target.to_string(),
                t.qp_pred.to_string(),
                t.qp_true.to_string(),
                t.qp_err.to_string(),
                t.vmaf_achieved.to_string(),
                t.vmaf_err.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::internal(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::internal(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::internal(e.to_string()))
}
