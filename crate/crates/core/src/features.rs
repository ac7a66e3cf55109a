//! Feature ingestion, normalization and the 754-value model input.
//!
//! # Layout version 1
//!
//! | group | offset | len | contents                                           |
//! |-------|--------|-----|----------------------------------------------------|
//! | F     | 0      | 640 | 8 frames x 80 per-frame bitstream fractions         |
//! | V     | 640    | 50  | clip-level bitstream fractions                      |
//! | M     | 690    | 6   | duration, bit depth, avg q-index, width, height, fps |
//! | A     | 696    | 42  | complexity statistics (see [`ComplexityStats`])     |
//! | C     | 738    | 16  | semantic embedding produced by the attention net    |
//!
//! Per-frame block (80): block sizes (22), transform types (16), transform
//! sizes (19), skip / intra-block-copy / palette fractions (3), reference
//! frames (8), loop-filter tools (10), motion-vector bit share (1), key-frame
//! flag (1). Frames missing from the bitstream report are zero.
//!
//! Clip-level block (50): block sizes (22), transform types (16), skip /
//! intra-block-copy / palette (3), reference frames (8), motion-vector bit
//! share (1).
//!
//! The A section is metric-major: SC, TC, brightness; each with I-frame then
//! non-I-frame statistics in the order mean, std, min, max, p25, p50, p75.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::complexity::{ComplexityStats, NUM_STATS};
use crate::{Error, Result};

pub const LAYOUT_VERSION: u32 = 1;
pub const FEATURE_DIM: usize = 754;
pub const BITSTREAM_SCHEMA_VERSION: u64 = 1;

pub const FRAMES: usize = 8;
pub const PER_FRAME_DIM: usize = 80;
pub const FRAME_DIM: usize = FRAMES * PER_FRAME_DIM;
pub const VIDEO_DIM: usize = 50;
pub const META_DIM: usize = 6;
pub const COMPLEXITY_DIM: usize = NUM_STATS;
pub const CLIP_DIM: usize = 16;
/// Dimensions passed through the min-max scaler (M then A).
pub const SCALED_DIM: usize = META_DIM + COMPLEXITY_DIM;

pub const BLOCK_SIZES: [&str; 22] = [
    "4x4", "4x8", "8x4", "8x8", "8x16", "16x8", "16x16", "16x32", "32x16", "32x32", "32x64",
    "64x32", "64x64", "64x128", "128x64", "128x128", "4x16", "16x4", "8x32", "32x8", "16x64",
    "64x16",
];
pub const TX_TYPES: [&str; 16] = [
    "DCT_DCT", "ADST_DCT", "DCT_ADST", "ADST_ADST", "FLIPADST_DCT", "DCT_FLIPADST",
    "FLIPADST_FLIPADST", "ADST_FLIPADST", "FLIPADST_ADST", "IDTX", "V_DCT", "H_DCT", "V_ADST",
    "H_ADST", "V_FLIPADST", "H_FLIPADST",
];
pub const TX_SIZES: [&str; 19] = [
    "4x4", "8x8", "16x16", "32x32", "64x64", "4x8", "8x4", "8x16", "16x8", "16x32", "32x16",
    "32x64", "64x32", "4x16", "16x4", "8x32", "32x8", "16x64", "64x16",
];
pub const REF_FRAMES: [&str; 8] = [
    "INTRA", "LAST", "LAST2", "LAST3", "GOLDEN", "BWDREF", "ALTREF2", "ALTREF",
];
pub const LOOP_FILTER: [&str; 10] = [
    "none",
    "deblock_y",
    "deblock_uv",
    "cdef",
    "cdef_strong",
    "lr_wiener",
    "lr_sgrproj",
    "lr_switchable",
    "lr_none",
    "superres",
];

/// The five input groups, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    Frame,
    Video,
    Meta,
    Complexity,
    Clip,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Frame,
        FeatureGroup::Video,
        FeatureGroup::Meta,
        FeatureGroup::Complexity,
        FeatureGroup::Clip,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        let (start, len) = match self {
            FeatureGroup::Frame => (0, FRAME_DIM),
            FeatureGroup::Video => (FRAME_DIM, VIDEO_DIM),
            FeatureGroup::Meta => (FRAME_DIM + VIDEO_DIM, META_DIM),
            FeatureGroup::Complexity => (FRAME_DIM + VIDEO_DIM + META_DIM, COMPLEXITY_DIM),
            FeatureGroup::Clip => (FEATURE_DIM - CLIP_DIM, CLIP_DIM),
        };
        start..start + len
    }

    pub fn letter(self) -> char {
        match self {
            FeatureGroup::Frame => 'F',
            FeatureGroup::Video => 'V',
            FeatureGroup::Meta => 'M',
            FeatureGroup::Complexity => 'A',
            FeatureGroup::Clip => 'C',
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Which groups are removed (zeroed) for an ablation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupMask {
    removed: [bool; 5],
}

impl GroupMask {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn all_removed() -> Self {
        Self { removed: [true; 5] }
    }

    pub fn without(mut self, g: FeatureGroup) -> Self {
        self.removed[g.index()] = true;
        self
    }

    pub fn is_removed(&self, g: FeatureGroup) -> bool {
        self.removed[g.index()]
    }
}

impl fmt::Display for GroupMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let removed: Vec<String> = FeatureGroup::ALL
            .iter()
            .filter(|g| self.is_removed(**g))
            .map(|g| format!("-{}", g.letter()))
            .collect();
        if removed.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&removed.join(","))
        }
    }
}

/// Parses `full`, or a comma list of removed groups such as `-C` or `-F,-A`.
impl FromStr for GroupMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") || s.is_empty() {
            return Ok(Self::full());
        }
        let mut mask = Self::full();
        for tok in s.split(',') {
            let tok = tok.trim();
            let letter = tok
                .strip_prefix('-')
                .ok_or_else(|| Error::invalid(format!("mask entry {tok:?} must look like -C")))?;
            let g = match letter.to_ascii_uppercase().as_str() {
                "F" => FeatureGroup::Frame,
                "V" => FeatureGroup::Video,
                "M" => FeatureGroup::Meta,
                "A" => FeatureGroup::Complexity,
                "C" => FeatureGroup::Clip,
                _ => return Err(Error::invalid(format!("unknown feature group {tok:?}"))),
            };
            mask = mask.without(g);
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub block_sizes: Vec<f64>,
    pub tx_types: Vec<f64>,
    pub tx_sizes: Vec<f64>,
    pub skip: f64,
    pub intrabc: f64,
    pub palette: f64,
    pub ref_frames: Vec<f64>,
    pub loop_filter: Vec<f64>,
    pub mv_share: f64,
    pub is_key: bool,
    /// false when the frame reported no blocks
    pub valid: bool,
}

impl FrameStats {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(PER_FRAME_DIM);
        v.extend(&self.block_sizes);
        v.extend(&self.tx_types);
        v.extend(&self.tx_sizes);
        v.extend([self.skip, self.intrabc, self.palette]);
        v.extend(&self.ref_frames);
        v.extend(&self.loop_filter);
        v.push(self.mv_share);
        v.push(if self.is_key { 1.0 } else { 0.0 });
        debug_assert_eq!(v.len(), PER_FRAME_DIM);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoStats {
    pub block_sizes: Vec<f64>,
    pub tx_types: Vec<f64>,
    pub skip: f64,
    pub intrabc: f64,
    pub palette: f64,
    pub ref_frames: Vec<f64>,
    pub mv_share: f64,
    pub valid: bool,
}

impl VideoStats {
    fn empty() -> Self {
        Self {
            block_sizes: vec![0.0; BLOCK_SIZES.len()],
            tx_types: vec![0.0; TX_TYPES.len()],
            skip: 0.0,
            intrabc: 0.0,
            palette: 0.0,
            ref_frames: vec![0.0; REF_FRAMES.len()],
            mv_share: 0.0,
            valid: false,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(VIDEO_DIM);
        v.extend(&self.block_sizes);
        v.extend(&self.tx_types);
        v.extend([self.skip, self.intrabc, self.palette]);
        v.extend(&self.ref_frames);
        v.push(self.mv_share);
        debug_assert_eq!(v.len(), VIDEO_DIM);
        v
    }
}

/// Bitstream distributions for the first frames and the whole clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitstreamStats {
    /// At most [`FRAMES`] entries.
    pub frames: Vec<FrameStats>,
    pub video: VideoStats,
    /// Indices of every key frame listed in the report.
    pub key_frames: Vec<usize>,
}

impl BitstreamStats {
    pub fn frame_section(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.frames.iter().take(FRAMES).flat_map(|f| f.to_vec()).collect();
        v.resize(FRAME_DIM, 0.0);
        v
    }
}

/// Video-level bitstream metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub duration_s: f64,
    pub bit_depth_norm: f64,
    pub avg_coded_q_index: f64,
    pub width: f64,
    pub height: f64,
    pub fps: f64,
}

impl StreamMeta {
    /// Raw (pre-scaling) M section. The q-index is divided by 255 here
    /// because its range is fixed.
    pub fn to_raw(&self) -> [f64; META_DIM] {
        [
            self.duration_s,
            self.bit_depth_norm,
            self.avg_coded_q_index / 255.0,
            self.width,
            self.height,
            self.fps,
        ]
    }
}

// Walks a serde_json tree keeping the JSON path for error messages.
struct Node<'a> {
    path: String,
    value: &'a Value,
}

impl<'a> Node<'a> {
    fn root(value: &'a Value) -> Self {
        Self {
            path: "$".into(),
            value,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.clone(),
            msg: msg.into(),
        }
    }

    fn field(&self, key: &str) -> Result<Node<'a>> {
        self.opt_field(key)?
            .ok_or_else(|| self.err(format!("missing field {key:?}")))
    }

    fn opt_field(&self, key: &str) -> Result<Option<Node<'a>>> {
        let obj = self.value.as_object().ok_or_else(|| self.err("expected object"))?;
        Ok(obj.get(key).filter(|v| !v.is_null()).map(|value| Node {
            path: format!("{}.{}", self.path, key),
            value,
        }))
    }

    fn number(&self) -> Result<f64> {
        let v = self.value.as_f64().ok_or_else(|| self.err("expected number"))?;
        if !v.is_finite() {
            return Err(self.err("non-finite number"));
        }
        Ok(v)
    }

    fn count(&self) -> Result<u64> {
        if let Some(v) = self.value.as_u64() {
            return Ok(v);
        }
        match self.value.as_i64() {
            Some(v) if v < 0 => Err(Error::invalid(format!("negative count {v} at {}", self.path))),
            _ => Err(self.err("expected integer count")),
        }
    }

    fn elements(&self) -> Result<Vec<Node<'a>>> {
        let arr = self.value.as_array().ok_or_else(|| self.err("expected array"))?;
        Ok(arr
            .iter()
            .enumerate()
            .map(|(i, value)| Node {
                path: format!("{}[{}]", self.path, i),
                value,
            })
            .collect())
    }

    /// Category counts as fractions of their own total.
    fn histogram(&self, categories: &[&str]) -> Result<(Vec<f64>, u64)> {
        let obj = self.value.as_object().ok_or_else(|| self.err("expected object"))?;
        let mut counts = BTreeMap::new();
        for (k, v) in obj {
            let idx = categories
                .iter()
                .position(|c| c == k)
                .ok_or_else(|| self.err(format!("unknown category {k:?}")))?;
            let n = Node {
                path: format!("{}.{}", self.path, k),
                value: v,
            }
            .count()?;
            counts.insert(idx, n);
        }
        let total: u64 = counts.values().sum();
        let mut hist = vec![0.0; categories.len()];
        if total > 0 {
            for (i, n) in counts {
                hist[i] = n as f64 / total as f64;
            }
        }
        Ok((hist, total))
    }
}

fn fraction(num: u64, den: u64, what: &str, path: &str) -> Result<f64> {
    if num > den {
        return Err(Error::invalid(format!(
            "{what} count {num} exceeds total {den} at {path}"
        )));
    }
    Ok(if den == 0 { 0.0 } else { num as f64 / den as f64 })
}

struct Common {
    block_sizes: Vec<f64>,
    tx_types: Vec<f64>,
    skip: f64,
    intrabc: f64,
    palette: f64,
    ref_frames: Vec<f64>,
    mv_share: f64,
    valid: bool,
}

fn parse_common(node: &Node) -> Result<Common> {
    let (block_sizes, blocks) = node.field("block_sizes")?.histogram(&BLOCK_SIZES)?;
    let (tx_types, _) = node.field("tx_types")?.histogram(&TX_TYPES)?;
    let (ref_frames, _) = node.field("ref_frames")?.histogram(&REF_FRAMES)?;
    let per_block = |key: &str| -> Result<f64> {
        let n = node.field(key)?;
        fraction(n.count()?, blocks, key, &n.path)
    };
    let mv_bits = node.field("mv_bits")?;
    let total_bits = node.field("total_bits")?.count()?;
    Ok(Common {
        block_sizes,
        tx_types,
        skip: per_block("skip")?,
        intrabc: per_block("intrabc")?,
        palette: per_block("palette")?,
        ref_frames,
        mv_share: fraction(mv_bits.count()?, total_bits, "mv_bits", &mv_bits.path)?,
        valid: blocks > 0,
    })
}

/// Parse the bitstream report produced by the external inspect adapter.
pub fn parse_bitstream_json(doc: &Value) -> Result<(BitstreamStats, StreamMeta)> {
    let root = Node::root(doc);
    if let Some(v) = root.opt_field("schema_version")? {
        let found = v.count()?;
        if found != BITSTREAM_SCHEMA_VERSION {
            return Err(v.err(format!(
                "unsupported schema version {found}, expected {BITSTREAM_SCHEMA_VERSION}"
            )));
        }
    }

    let m = root.field("meta")?;
    let bit_depth = m.field("bit_depth")?;
    let bit_depth_norm = match bit_depth.count()? {
        8 => 0.0,
        10 => 1.0,
        other => return Err(bit_depth.err(format!("bit depth {other} is not 8 or 10"))),
    };
    let q = m.field("avg_coded_q_index")?;
    let avg_coded_q_index = q.number()?;
    if !(0.0..=255.0).contains(&avg_coded_q_index) {
        return Err(Error::invalid(format!(
            "avg_coded_q_index {avg_coded_q_index} outside [0, 255] at {}",
            q.path
        )));
    }
    let meta = StreamMeta {
        duration_s: m.field("duration_s")?.number()?,
        bit_depth_norm,
        avg_coded_q_index,
        width: m.field("width")?.number()?,
        height: m.field("height")?.number()?,
        fps: m.field("fps")?.number()?,
    };

    let mut frames = Vec::new();
    let mut key_frames = Vec::new();
    for (i, f) in root.field("frames")?.elements()?.into_iter().enumerate() {
        let ft = f.field("frame_type")?;
        let is_key = match ft.value.as_str() {
            Some("KEY") => true,
            Some("INTER") => false,
            _ => return Err(ft.err("frame_type must be \"KEY\" or \"INTER\"")),
        };
        if is_key {
            key_frames.push(i);
        }
        if i >= FRAMES {
            continue;
        }
        let c = parse_common(&f)?;
        let (tx_sizes, _) = f.field("tx_sizes")?.histogram(&TX_SIZES)?;
        let (loop_filter, _) = f.field("loop_filter")?.histogram(&LOOP_FILTER)?;
        frames.push(FrameStats {
            block_sizes: c.block_sizes,
            tx_types: c.tx_types,
            tx_sizes,
            skip: c.skip,
            intrabc: c.intrabc,
            palette: c.palette,
            ref_frames: c.ref_frames,
            loop_filter,
            mv_share: c.mv_share,
            is_key,
            valid: c.valid,
        });
    }

    let video = match root.opt_field("video")? {
        Some(v) => {
            let c = parse_common(&v)?;
            VideoStats {
                block_sizes: c.block_sizes,
                tx_types: c.tx_types,
                skip: c.skip,
                intrabc: c.intrabc,
                palette: c.palette,
                ref_frames: c.ref_frames,
                mv_share: c.mv_share,
                valid: c.valid,
            }
        }
        None => VideoStats::empty(),
    };

    Ok((
        BitstreamStats {
            frames,
            video,
            key_frames,
        },
        meta,
    ))
}

/// Pre-scaling feature groups of one clip (everything except the learned
/// embedding), as persisted by feature extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    pub layout_version: u32,
    pub frame_level: Vec<f64>,
    pub video_level: Vec<f64>,
    pub meta: Vec<f64>,
    pub complexity: Vec<f64>,
}

impl RawFeatures {
    pub fn new(bs: &BitstreamStats, meta: &StreamMeta, cs: &ComplexityStats) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            frame_level: bs.frame_section(),
            video_level: bs.video.to_vec(),
            meta: meta.to_raw().to_vec(),
            complexity: cs.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::Version {
                what: "feature layout",
                found: self.layout_version,
                expected: LAYOUT_VERSION,
            });
        }
        let dims = [
            (self.frame_level.len(), FRAME_DIM),
            (self.video_level.len(), VIDEO_DIM),
            (self.meta.len(), META_DIM),
            (self.complexity.len(), COMPLEXITY_DIM),
        ];
        if dims.iter().any(|(a, b)| a != b) {
            return Err(Error::internal(format!("raw feature dims {dims:?}")));
        }
        if self.scaled_inputs().iter().chain(&self.frame_level).chain(&self.video_level).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw features".into()));
        }
        Ok(())
    }

    /// The M and A values that go through the scaler.
    pub fn scaled_inputs(&self) -> Vec<f64> {
        self.meta.iter().chain(&self.complexity).copied().collect()
    }
}

/// Per-dimension min-max scaler fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub const SCALED_CLAMP: (f64, f64) = (-0.5, 1.5);

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::invalid("empty training set"))?;
        let dim = first.len();
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::invalid(format!("row of {} values, expected {dim}", r.len())));
            }
            for ((v, lo), hi) in r.iter().zip(&mut min).zip(&mut max) {
                *lo = lo.min(*v);
                *hi = hi.max(*v);
            }
        }
        Ok(Self { min, max })
    }

    /// Scaler for the M and A sections. Bit depth and q-index already lie
    /// in [0, 1] and are passed through unchanged.
    pub fn fit_features(train: &[RawFeatures]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = train.iter().map(RawFeatures::scaled_inputs).collect();
        let mut s = Self::fit(&rows)?;
        for fixed in [1, 2] {
            s.min[fixed] = 0.0;
            s.max[fixed] = 1.0;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Min-max scale one row, clamped to [-0.5, 1.5]. Degenerate dimensions
    /// map to 0.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(SCALED_CLAMP.0, SCALED_CLAMP.1)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// The model input for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub layout_version: u32,
    pub values: Vec<f64>,
    pub mask: GroupMask,
}

impl FeatureVector {
    pub fn section(&self, g: FeatureGroup) -> &[f64] {
        &self.values[g.range()]
    }
}

/// Concatenate the groups in layout order, scaling M and A and zeroing the
/// masked groups.
pub fn assemble(
    raw: &RawFeatures,
    clip_embed: &[f64],
    scaler: &Scaler,
    mask: GroupMask,
) -> Result<FeatureVector> {
    raw.validate()?;
    if clip_embed.len() != CLIP_DIM {
        return Err(Error::internal(format!(
            "embedding has {} values, expected {CLIP_DIM}",
            clip_embed.len()
        )));
    }
    if scaler.dim() != SCALED_DIM {
        return Err(Error::internal(format!(
            "scaler has {} dims, expected {SCALED_DIM}",
            scaler.dim()
        )));
    }
    let scaled = scaler.transform(&raw.scaled_inputs());
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend(&raw.frame_level);
    values.extend(&raw.video_level);
    values.extend(&scaled);
    values.extend(clip_embed);
    debug_assert_eq!(values.len(), FEATURE_DIM);
    for g in FeatureGroup::ALL {
        if mask.is_removed(g) {
            values[g.range()].fill(0.0);
        }
    }
    Ok(FeatureVector {
        layout_version: LAYOUT_VERSION,
        values,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn frame_json(blocks: Value, skip: u64) -> Value {
        json!({
            "frame_type": "KEY",
            "block_sizes": blocks,
            "tx_types": {"DCT_DCT": 3, "IDTX": 1},
            "tx_sizes": {"8x8": 2},
            "skip": skip, "intrabc": 0, "palette": 0,
            "ref_frames": {"INTRA": 5},
            "loop_filter": {"cdef": 1, "none": 1},
            "mv_bits": 10, "total_bits": 40
        })
    }

    fn doc(frames: Vec<Value>) -> Value {
        json!({
            "meta": {"duration_s": 5.0, "bit_depth": 10, "avg_coded_q_index": 127.5,
                     "width": 1920, "height": 1080, "fps": 25},
            "frames": frames
        })
    }

    #[test]
    fn layout_offsets() {
        assert_eq!(FeatureGroup::Frame.range(), 0..640);
        assert_eq!(FeatureGroup::Video.range(), 640..690);
        assert_eq!(FeatureGroup::Meta.range(), 690..696);
        assert_eq!(FeatureGroup::Complexity.range(), 696..738);
        assert_eq!(FeatureGroup::Clip.range(), 738..754);
        assert_eq!(
            BLOCK_SIZES.len() + TX_TYPES.len() + TX_SIZES.len() + 3 + REF_FRAMES.len() + LOOP_FILTER.len() + 2,
            PER_FRAME_DIM
        );
    }

    #[test]
    fn single_block_size() {
        let d = doc(vec![frame_json(json!({"64x64": 100}), 0)]);
        let (bs, meta) = parse_bitstream_json(&d).unwrap();
        let f = &bs.frames[0];
        let i = BLOCK_SIZES.iter().position(|&s| s == "64x64").unwrap();
        assert_eq!(f.block_sizes[i], 1.0);
        assert_eq!(f.block_sizes.iter().sum::<f64>(), 1.0);
        assert_eq!(f.tx_types[0], 0.75);
        assert_eq!(f.mv_share, 0.25);
        assert_eq!(meta.bit_depth_norm, 1.0);
        assert_eq!(meta.to_raw()[2], 0.5);
        assert!(!bs.video.valid);
        assert_eq!(bs.key_frames, vec![0]);
    }

    #[test]
    fn all_skip() {
        let mut fr = frame_json(json!({"8x8": 10}), 10);
        let video = json!({
            "block_sizes": {"8x8": 20}, "tx_types": {}, "skip": 20, "intrabc": 0, "palette": 0,
            "ref_frames": {}, "mv_bits": 0, "total_bits": 0
        });
        fr["frame_type"] = json!("INTER");
        let mut d = doc(vec![fr.clone(), fr]);
        d["video"] = video;
        let (bs, _) = parse_bitstream_json(&d).unwrap();
        assert!(bs.frames.iter().all(|f| f.skip == 1.0));
        assert_eq!(bs.video.skip, 1.0);
        assert!(bs.key_frames.is_empty());
    }

    #[test]
    fn schema_errors_name_the_path() {
        let mut d = doc(vec![frame_json(json!({"64x64": 1}), 0)]);
        d["frames"][0]["block_sizes"]["65x65"] = json!(1);
        match parse_bitstream_json(&d).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "$.frames[0].block_sizes"),
            e => panic!("{e}"),
        }
        let mut d = doc(vec![frame_json(json!({"64x64": 1}), 0)]);
        d["frames"][0].as_object_mut().unwrap().remove("tx_sizes");
        match parse_bitstream_json(&d).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "$.frames[0]"),
            e => panic!("{e}"),
        }
        let mut d = doc(vec![frame_json(json!({"64x64": 1}), 0)]);
        d["frames"][0]["skip"] = json!(-3);
        assert!(matches!(parse_bitstream_json(&d), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scaler_basics() {
        let s = Scaler::fit(&[vec![2.0, 5.0], vec![4.0, 5.0], vec![6.0, 5.0]]).unwrap();
        assert_eq!(s.min, vec![2.0, 5.0]);
        assert_eq!(s.max, vec![6.0, 5.0]);
        assert_eq!(s.transform(&[4.0, 123.0]), vec![0.5, 0.0]);
        assert_eq!(s.transform(&[100.0, 0.0]), vec![1.5, 0.0]);
        assert!(Scaler::fit(&[]).is_err());
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("full".parse::<GroupMask>().unwrap(), GroupMask::full());
        let m: GroupMask = "-C,-a".parse().unwrap();
        assert!(m.is_removed(FeatureGroup::Clip) && m.is_removed(FeatureGroup::Complexity));
        assert_eq!(m.to_string(), "-A,-C");
        assert!("C".parse::<GroupMask>().is_err());
        assert!("-Q".parse::<GroupMask>().is_err());
    }
}
