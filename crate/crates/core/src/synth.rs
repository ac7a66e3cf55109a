//! Synthetic corpus with planted structure.
//!
//! Each video draws four hidden latents. `z0` sets texture strength, `z1`
//! motion, `z2` brightness and curve steepness, and `z3` is visible only
//! through the frame embeddings. The RD curve is logistic,
//! `vmaf(qp) = 100 / (1 + exp((qp - c) / s))`, with
//!
//! ```text
//! c = 150 + 16 z0 - 11 z1 + 10 z3 + 5 z0 z1     (clamped to center_range)
//! s = 12 + 2.5 tanh(z2)
//! ```
//!
//! The generator writes a tiny Y4M clip, a bitstream report, an embedding
//! sidecar and a manifest line per video. Everything is a pure function of
//! the seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::embedding::{ClipEmbedding, TOKENS, TOKEN_DIM};
use crate::features::{BLOCK_SIZES, LOOP_FILTER, REF_FRAMES, TX_SIZES, TX_TYPES};
use crate::manifest::{Entry, Manifest, Split};
use crate::media::{write_y4m, Frame};
use crate::rd::RdSample;
use crate::{Error, Result};

pub const RD_QPS: usize = 24;
const LATENTS: usize = 4;
const BASIS_RANK: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub test_fraction: f64,
    /// Clamp range of the logistic midpoint `c`.
    pub center_range: (f64, f64),
    /// Clamp range of the logistic scale `s`.
    pub scale_range: (f64, f64),
    /// Std of the pixel noise, in 8-bit code values.
    pub pixel_noise: f64,
    /// Std of the jitter on bitstream histogram shapes.
    pub feature_noise: f64,
    /// Std of the noise added to each embedding value.
    pub embed_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 512,
            seed: 0,
            width: 64,
            height: 64,
            frames: 10,
            test_fraction: 0.2,
            center_range: (100.0, 205.0),
            scale_range: (8.0, 20.0),
            pixel_noise: 1.5,
            feature_noise: 0.05,
            embed_noise: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos < 2 {
            return Err(Error::invalid("a synthetic corpus needs at least 2 videos"));
        }
        if self.width < 8 || self.height < 8 || self.frames < 2 {
            return Err(Error::invalid("synthetic clips need at least 8x8 pixels and 2 frames"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction must lie in [0, 1)"));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a > 0.0 && a <= b;
        if !ordered(self.center_range) || !ordered(self.scale_range) {
            return Err(Error::invalid("center_range and scale_range must be positive, ordered pairs"));
        }
        for v in [self.pixel_noise, self.feature_noise, self.embed_noise] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid("noise levels must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Hidden parameters of one generated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub id: String,
    pub z: [f64; LATENTS],
    pub center: f64,
    pub scale: f64,
}

pub fn logistic_vmaf(qp: f64, center: f64, scale: f64) -> f64 {
    100.0 / (1.0 + ((qp - center) / scale).exp())
}

/// The QPs at which the RD curve is sampled.
pub fn rd_qps() -> Vec<u16> {
    (0..RD_QPS)
        .map(|k| ((k * 255) as f64 / (RD_QPS - 1) as f64).round() as u16)
        .collect()
}

fn curve_params(z: &[f64; LATENTS], spec: &SynthSpec) -> (f64, f64) {
    let c = 150.0 + 16.0 * z[0] - 11.0 * z[1] + 10.0 * z[3] + 5.0 * z[0] * z[1];
    let s = 12.0 + 2.5 * z[2].tanh();
    (
        c.clamp(spec.center_range.0, spec.center_range.1),
        s.clamp(spec.scale_range.0, spec.scale_range.1),
    )
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn frames_for(z: &[f64; LATENTS], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Frame>> {
    let amp = 12.0 * (0.45 * z[0]).exp();
    let speed = 0.8 * (0.5 * z[1]).exp();
    let base = 128.0 + 35.0 * (z[2] / 1.5).tanh();
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let (vx, vy) = (speed * dir.cos(), speed * dir.sin());
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.1..0.6) * if rng.gen() { 1.0 } else { -1.0 },
                rng.gen_range(0.1..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let noise = Normal::new(0.0, spec.pixel_noise.max(1e-12)).map_err(|e| Error::internal(e.to_string()))?;
    (0..spec.frames)
        .map(|t| {
            let (ox, oy) = (vx * t as f64, vy * t as f64);
            let mut luma = Vec::with_capacity(spec.width * spec.height);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let (px, py) = (x as f64 - ox, y as f64 - oy);
                    let p: f64 = waves.iter().map(|(fx, fy, ph)| (fx * px + fy * py + ph).sin()).sum::<f64>() / 3.0;
                    let v = base + amp * p + noise.sample(rng);
                    luma.push(v.round().clamp(0.0, 255.0) as u16);
                }
            }
            Frame::new(spec.width, spec.height, 8, luma)
        })
        .collect()
}

/// Integer histogram over `names` following a bump centred at `mu`.
fn bump_histogram(names: &[&str], mu: f64, width: f64, total: f64) -> Map<String, Value> {
    let w: Vec<f64> = (0..names.len())
        .map(|k| (-((k as f64 - mu).powi(2)) / (2.0 * width * width)).exp() + 1e-3)
        .collect();
    let sum: f64 = w.iter().sum();
    names
        .iter()
        .zip(&w)
        .filter_map(|(n, wk)| {
            let c = (total * wk / sum).round() as u64;
            (c > 0).then(|| (n.to_string(), json!(c)))
        })
        .collect()
}

fn frame_report(z: &[f64; LATENTS], key: bool, jitter: &mut dyn FnMut() -> f64) -> Value {
    let blocks_hist = bump_histogram(&BLOCK_SIZES, 8.0 - 3.0 * z[0].tanh() + jitter(), 2.0, 400.0);
    let blocks: u64 = blocks_hist.values().filter_map(Value::as_u64).sum();
    let tx_types = bump_histogram(&TX_TYPES, (1.5 + 1.5 * z[0].tanh() + jitter()).max(0.0), 1.5, 300.0);
    let tx_sizes = bump_histogram(&TX_SIZES, 6.0 - 2.0 * z[0].tanh() + jitter(), 2.0, 300.0);
    let share = |x: f64| (blocks as f64 * sigmoid(x)).round() as u64;
    let (skip, intra) = if key {
        (share(-3.0 + jitter()), blocks)
    } else {
        (share(-1.2 * z[1] + 0.3 + jitter()), share(z[1] - 1.5 + jitter()))
    };
    let mut refs = Map::new();
    refs.insert(REF_FRAMES[0].into(), json!(intra));
    if !key {
        let rest = blocks - intra.min(blocks);
        let golden = (rest as f64 * sigmoid(-z[2] - 1.0)).round() as u64;
        refs.insert(REF_FRAMES[1].into(), json!(rest - golden));
        refs.insert(REF_FRAMES[4].into(), json!(golden));
    }
    let cdef = (100.0 * sigmoid(z[0] + jitter())).round() as u64;
    let mut lf = Map::new();
    lf.insert(LOOP_FILTER[0].into(), json!(100 - cdef));
    lf.insert(LOOP_FILTER[3].into(), json!(cdef));
    lf.insert(LOOP_FILTER[1].into(), json!(50));
    let total_bits = 10_000u64;
    let mv_bits = if key {
        0
    } else {
        (total_bits as f64 * sigmoid(z[1] - 0.5 + jitter())).round() as u64
    };
    json!({
        "frame_type": if key { "KEY" } else { "INTER" },
        "block_sizes": blocks_hist,
        "tx_types": tx_types,
        "tx_sizes": tx_sizes,
        "skip": skip,
        "intrabc": 0,
        "palette": share(z[2] - 3.0 + jitter()),
        "ref_frames": refs,
        "loop_filter": lf,
        "mv_bits": mv_bits,
        "total_bits": total_bits,
    })
}

fn sum_maps(frames: &[Value], key: &str) -> Map<String, Value> {
    let mut acc: std::collections::BTreeMap<String, u64> = Default::default();
    for f in frames {
        if let Some(m) = f[key].as_object() {
            for (k, v) in m {
                *acc.entry(k.clone()).or_default() += v.as_u64().unwrap_or(0);
            }
        }
    }
    acc.into_iter().map(|(k, v)| (k, json!(v))).collect()
}

fn sum_counts(frames: &[Value], key: &str) -> u64 {
    frames.iter().filter_map(|f| f[key].as_u64()).sum()
}

fn bitstream_report(z: &[f64; LATENTS], spec: &SynthSpec, fps: f64, rng: &mut ChaCha8Rng) -> Value {
    let noise = spec.feature_noise;
    let mut jitter = || noise * rng.sample::<f64, _>(StandardNormal);
    let frames: Vec<Value> = (0..spec.frames).map(|t| frame_report(z, t == 0, &mut jitter)).collect();
    let video = json!({
        "block_sizes": sum_maps(&frames, "block_sizes"),
        "tx_types": sum_maps(&frames, "tx_types"),
        "skip": sum_counts(&frames, "skip"),
        "intrabc": sum_counts(&frames, "intrabc"),
        "palette": sum_counts(&frames, "palette"),
        "ref_frames": sum_maps(&frames, "ref_frames"),
        "mv_bits": sum_counts(&frames, "mv_bits"),
        "total_bits": sum_counts(&frames, "total_bits"),
    });
    let q: f64 = 120.0 + 8.0 * rng.sample::<f64, _>(StandardNormal);
    json!({
        "schema_version": 1,
        "meta": {
            "duration_s": spec.frames as f64 / fps,
            "bit_depth": 8,
            "avg_coded_q_index": q.clamp(0.0, 255.0),
            "width": spec.width,
            "height": spec.height,
            "fps": fps,
        },
        "frames": frames,
        "video": video,
    })
}

fn embedding_for(z: &[f64; LATENTS], basis: &[f64], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<ClipEmbedding> {
    let coef = [z[0], z[1], z[2], z[3], 0.5 * z[3] * z[3].abs(), 1.0];
    let mut values = Vec::with_capacity(TOKENS * TOKEN_DIM);
    for t in 0..TOKENS {
        let drift = 0.1 * (t as f64).sin();
        for d in 0..TOKEN_DIM {
            let row = &basis[d * BASIS_RANK..(d + 1) * BASIS_RANK];
            let clean: f64 = row.iter().zip(&coef).map(|(b, c)| b * c).sum::<f64>() + drift * row[5];
            let v = clean + spec.embed_noise * rng.sample::<f64, _>(StandardNormal);
            values.push(v as f32);
        }
    }
    ClipEmbedding::new(values)
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(n);
    r
}

/// Generate the corpus under `out_dir` and return its manifest. Writes
/// `manifest.jsonl`, `latents.jsonl` and `media/<id>.{y4m,bitstream.json,lvpe}`.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<(Manifest, Vec<Latents>)> {
    spec.validate()?;
    let media = out_dir.join("media");
    std::fs::create_dir_all(&media).map_err(|e| Error::io(&media, e))?;

    let mut basis_rng = stream(spec.seed, 0);
    let basis: Vec<f64> = (0..TOKEN_DIM * BASIS_RANK)
        .map(|_| basis_rng.sample::<f64, _>(StandardNormal) / (BASIS_RANK as f64).sqrt())
        .collect();

    let mut order: Vec<usize> = (0..spec.n_videos).collect();
    order.shuffle(&mut stream(spec.seed, 1));
    let n_test = ((spec.n_videos as f64) * spec.test_fraction).round() as usize;
    let mut split = vec![Split::Train; spec.n_videos];
    for &i in &order[..n_test.min(spec.n_videos - 1)] {
        split[i] = Split::Test;
    }

    let qps = rd_qps();
    let mut entries = Vec::with_capacity(spec.n_videos);
    let mut latents = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let mut rng = stream(spec.seed, 16 + i as u64);
        let id = format!("syn{i:05}");
        let z: [f64; LATENTS] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal).clamp(-2.5, 2.5));
        let (center, scale) = curve_params(&z, spec);
        let fps_num = *[24u32, 25, 30].choose(&mut rng).unwrap_or(&30);

        let frames = frames_for(&z, spec, &mut rng)?;
        let y4m = media.join(format!("{id}.y4m"));
        let mut buf = Vec::new();
        write_y4m(&mut buf, &frames, fps_num, 1).map_err(|e| Error::io(&y4m, e))?;
        std::fs::write(&y4m, buf).map_err(|e| Error::io(&y4m, e))?;

        let report = bitstream_report(&z, spec, f64::from(fps_num), &mut rng);
        let bs = media.join(format!("{id}.bitstream.json"));
        std::fs::write(&bs, serde_json::to_vec(&report)?).map_err(|e| Error::io(&bs, e))?;

        let emb = embedding_for(&z, &basis, spec, &mut rng)?;
        emb.write(&media.join(format!("{id}.lvpe")))?;

        let rd_samples = qps
            .iter()
            .map(|&q| RdSample::new(q, logistic_vmaf(f64::from(q), center, scale)))
            .collect();
        entries.push(Entry {
            id: id.clone(),
            y4m_path: format!("media/{id}.y4m").into(),
            bitstream_json_path: format!("media/{id}.bitstream.json").into(),
            clip_embed_path: Some(format!("media/{id}.lvpe").into()),
            rd_samples,
            split: split[i],
        });
        latents.push(Latents { id, z, center, scale });
    }

    let manifest = Manifest {
        entries,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    let path = out_dir.join("manifest.jsonl");
    std::fs::write(&path, manifest.to_jsonl()?).map_err(|e| Error::io(&path, e))?;
    let mut lat = String::new();
    for l in &latents {
        lat.push_str(&serde_json::to_string(l)?);
        lat.push('\n');
    }
    let path = out_dir.join("latents.jsonl");
    std::fs::write(&path, lat).map_err(|e| Error::io(&path, e))?;
    Ok((manifest, latents))
}
