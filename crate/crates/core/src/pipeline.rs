//! Glue between the manifest, on-disk inputs and the model: per-video
//! feature extraction, RD target derivation and sample loading.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::complexity::{self, ComplexityStats, FrameComplexity};
use crate::embedding::ClipEmbedding;
use crate::features::{parse_bitstream_json, RawFeatures};
use crate::manifest::{Entry, Manifest, Split};
use crate::media::{lanczos5_resize, Frame, Y4mReader, ANALYSIS_SIZE};
use crate::model::Sample;
use crate::rd::QualityTargets;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Frames are resampled to this size before analysis; `None` analyses
    /// them at native resolution.
    pub analysis_size: Option<(usize, usize)>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            analysis_size: Some(ANALYSIS_SIZE),
        }
    }
}

/// Parse `native` or `WxH`.
pub fn parse_analysis_size(s: &str) -> Result<Option<(usize, usize)>> {
    if s.eq_ignore_ascii_case("native") {
        return Ok(None);
    }
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::invalid(format!("analysis size {s:?} is not WxH or native")))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok(Some((w, h))),
        _ => Err(Error::invalid(format!("analysis size {s:?} is not WxH or native"))),
    }
}

/// Per-video output of extraction, persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub id: String,
    pub options: ExtractOptions,
    pub raw: RawFeatures,
    pub complexity: ComplexityStats,
    pub per_frame: Vec<FrameComplexity>,
}

impl FeatureFile {
    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let ff: FeatureFile = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ff.raw.validate()?;
        Ok(ff)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.features.json"))
}

/// Stream a Y4M file through the analysis: resample each frame, then SC,
/// TC against the previous analysed frame, and brightness.
pub fn analyze_y4m(path: &Path, opts: &ExtractOptions) -> Result<Vec<FrameComplexity>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = Y4mReader::new(BufReader::new(f))?;
    let mut out = vec![];
    let mut prev: Option<Frame> = None;
    for frame in reader {
        let frame = frame?;
        let frame = match opts.analysis_size {
            Some((w, h)) if (w, h) != (frame.width, frame.height) => lanczos5_resize(&frame, w, h)?,
            _ => frame,
        };
        let tc = match &prev {
            Some(p) => Some(complexity::frame_tc(&frame, p)?),
            None => None,
        };
        out.push(FrameComplexity {
            sc: complexity::frame_sc(&frame),
            tc,
            brightness: complexity::frame_brightness(&frame),
        });
        prev = Some(frame);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{}: no frames", path.display())));
    }
    Ok(out)
}

/// Build the raw feature groups of one manifest entry.
pub fn extract_entry(manifest: &Manifest, e: &Entry, opts: &ExtractOptions) -> Result<FeatureFile> {
    let bs_path = manifest.resolve(&e.bitstream_json_path);
    let text = std::fs::read(&bs_path).map_err(|err| Error::io(&bs_path, err))?;
    let doc: serde_json::Value =
        serde_json::from_slice(&text).map_err(|err| Error::Format(format!("{}: {err}", bs_path.display())))?;
    let (bs, meta) = parse_bitstream_json(&doc).map_err(|err| match err {
        Error::Schema { path, msg } => Error::Schema {
            path: format!("{}: {path}", bs_path.display()),
            msg,
        },
        err => err,
    })?;

    let per_frame = analyze_y4m(&manifest.resolve(&e.y4m_path), opts)?;
    let flags = complexity::iframe_flags(per_frame.len(), &bs.key_frames);
    let cs = complexity::aggregate(&per_frame, &flags)?;
    let raw = RawFeatures::new(&bs, &meta, &cs);
    raw.validate()?;
    Ok(FeatureFile {
        id: e.id.clone(),
        options: *opts,
        raw,
        complexity: cs,
        per_frame,
    })
}

/// Ground-truth QPs of every entry.
pub fn fit_curves(manifest: &Manifest, vmaf_targets: &[f64]) -> Result<Vec<(String, QualityTargets)>> {
    manifest
        .entries
        .iter()
        .map(|e| Ok((e.id.clone(), e.curve()?.derive_targets(vmaf_targets))))
        .collect()
}

pub fn load_embedding(manifest: &Manifest, e: &Entry) -> Result<Option<ClipEmbedding>> {
    e.clip_embed_path
        .as_ref()
        .map(|p| ClipEmbedding::read(&manifest.resolve(p)))
        .transpose()
}

/// Load one split as training samples. Embeddings are read only when
/// `with_clip` is set.
pub fn load_samples(
    manifest: &Manifest,
    features_dir: &Path,
    split: Option<Split>,
    vmaf_targets: &[f64],
    with_clip: bool,
) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .map(|e| {
            let ff = FeatureFile::read(&feature_path(features_dir, &e.id))?;
            let curve = e.curve()?;
            let clip = if with_clip { load_embedding(manifest, e)? } else { None };
            Ok(Sample {
                id: e.id.clone(),
                raw: ff.raw,
                clip,
                target_qp: curve.derive_targets(vmaf_targets).qps(),
                curve,
            })
        })
        .collect()
}
