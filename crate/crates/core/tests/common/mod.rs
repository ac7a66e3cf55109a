//! Independent reference implementations shared by the integration tests.
//! Nothing here calls the library code it is used to check.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use qptune::manifest::Manifest;
use qptune::media::Frame;
use qptune::pipeline::{extract_entry, feature_path, ExtractOptions};
use qptune::synth::{generate, Latents, SynthSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- PCHIP

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn end_slope(h1: f64, h2: f64, d1: f64, d2: f64) -> f64 {
    let d = ((2.0 * h1 + h2) * d1 - h1 * d2) / (h1 + h2);
    if sign(d) != sign(d1) {
        0.0
    } else if sign(d1) != sign(d2) && d.abs() > (3.0 * d1).abs() {
        3.0 * d1
    } else {
        d
    }
}

/// Textbook monotone cubic Hermite interpolant (Fritsch-Carlson slopes with
/// the weighted harmonic mean and the three-point end formula).
pub struct RefPchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl RefPchip {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![del[0]; 2];
        } else {
            for k in 1..n - 1 {
                if sign(del[k - 1]) * sign(del[k]) > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Self {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        }
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        let mut k = 0;
        while k + 2 < n && t >= self.x[k + 1] {
            k += 1;
        }
        k
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.interval(t);
        let h = self.x[k + 1] - self.x[k];
        let del = (self.y[k + 1] - self.y[k]) / h;
        let s = t - self.x[k];
        let c = (3.0 * del - 2.0 * self.d[k] - self.d[k + 1]) / h;
        let b = (self.d[k] - 2.0 * del + self.d[k + 1]) / (h * h);
        self.y[k] + s * (self.d[k] + s * (c + s * b))
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t < self.x[0] || t > self.x[n - 1] {
            return 0.0;
        }
        let k = self.interval(t);
        let h = self.x[k + 1] - self.x[k];
        let del = (self.y[k + 1] - self.y[k]) / h;
        let s = t - self.x[k];
        let c = (3.0 * del - 2.0 * self.d[k] - self.d[k + 1]) / h;
        let b = (self.d[k] - 2.0 * del + self.d[k + 1]) / (h * h);
        self.d[k] + s * (2.0 * c + 3.0 * s * b)
    }
}

/// 24 knots on the 0..255 grid with non-increasing VMAF; about one curve
/// in four carries a flat run.
pub fn random_curve(rng: &mut ChaCha8Rng) -> (Vec<u16>, Vec<f64>) {
    let qps: Vec<u16> = (0..24).map(|k| ((k as f64) * 255.0 / 23.0).round() as u16).collect();
    let mut v = rng.gen_range(90.0..100.0);
    let flat_at = if rng.gen_bool(0.25) { Some(rng.gen_range(1..23)) } else { None };
    let mut ys = vec![];
    for k in 0..24 {
        ys.push(v);
        if Some(k) != flat_at {
            v -= rng.gen_range(0.05..6.0);
        }
    }
    (qps, ys)
}

// ------------------------------------------------------------ complexity

/// SC straight from the 2-D DCT-II definition, one coefficient at a time.
pub fn sc_naive(f: &Frame) -> f64 {
    const N: usize = 32;
    let pi = std::f64::consts::PI;
    let alpha = |k: usize| if k == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
    let bw = f.width.div_ceil(N);
    let bh = f.height.div_ceil(N);
    let mut total = 0.0;
    for by in 0..bh {
        for bx in 0..bw {
            let px = |i: usize, j: usize| {
                let y = (by * N + i).min(f.height - 1);
                let x = (bx * N + j).min(f.width - 1);
                f64::from(f.at(x, y))
            };
            for u in 0..N {
                for v in 0..N {
                    if u == 0 && v == 0 {
                        continue;
                    }
                    let mut s = 0.0;
                    for i in 0..N {
                        for j in 0..N {
                            s += px(i, j)
                                * ((2 * i + 1) as f64 * u as f64 * pi / (2 * N) as f64).cos()
                                * ((2 * j + 1) as f64 * v as f64 * pi / (2 * N) as f64).cos();
                        }
                    }
                    total += (alpha(u) * alpha(v) * s).abs();
                }
            }
        }
    }
    total / (bw * bh * N * N) as f64
}

pub fn tc_naive(cur: &Frame, prev: &Frame) -> f64 {
    let mut s = 0.0;
    for y in 0..cur.height {
        for x in 0..cur.width {
            s += (f64::from(cur.at(x, y)) - f64::from(prev.at(x, y))).abs();
        }
    }
    s / (cur.width * cur.height) as f64
}

pub fn brightness_naive(f: &Frame) -> f64 {
    let mut s = 0.0;
    for y in 0..f.height {
        for x in 0..f.width {
            s += f64::from(f.at(x, y));
        }
    }
    s / (f.width * f.height) as f64
}

/// mean, population std, min, max, p25, p50, p75 by sorting; zeros when empty.
pub fn seven_stats(values: &[f64]) -> [f64; 7] {
    if values.is_empty() {
        return [0.0; 7];
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let pct = |p: f64| {
        let h = (s.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    [mean, var.sqrt(), s[0], s[s.len() - 1], pct(0.25), pct(0.5), pct(0.75)]
}

pub fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    Frame::new(w, h, 8, (0..w * h).map(|_| rng.gen_range(0..=255u16)).collect()).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

// ------------------------------------------------------ finite differences

pub const FD_STEP: f64 = 1e-5;

/// ||a - b|| / max(||a||, ||b||); gradients that vanish identically carry
/// only rounding noise and count as matching.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let da: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let db: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if da.max(db) < 1e-9 {
        0.0
    } else {
        num / da.max(db)
    }
}

/// Central differences of `f` at `x`, over the listed coordinates.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut x = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

// ------------------------------------------------------ checkpoint reader

/// Tensors and scaler pulled out of checkpoint bytes without the library.
pub struct RawCheckpoint {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl RawCheckpoint {
    pub fn parse(bytes: &[u8]) -> Self {
        assert_eq!(&bytes[..4], b"LVPN");
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        assert_eq!(word(4), 1, "format version");
        let hlen = word(8);
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        let mut at = 12 + hlen;
        let mut tensors = vec![];
        for t in header["tensors"].as_array().unwrap() {
            let len = t["len"].as_u64().unwrap() as usize;
            let vals = (0..len)
                .map(|i| f64::from(f32::from_le_bytes(bytes[at + 4 * i..at + 4 * i + 4].try_into().unwrap())))
                .collect();
            at += 4 * len;
            tensors.push((t["name"].as_str().unwrap().to_string(), vals));
        }
        assert_eq!(at + 4, bytes.len(), "blob length");
        Self { header, tensors }
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.tensors.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("{name}")).1
    }

    fn scaler(&self) -> (Vec<f64>, Vec<f64>) {
        let v = |k: &str| -> Vec<f64> {
            self.header["scaler"][k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
        };
        (v("min"), v("max"))
    }
}

fn dense(x: &[f64], w: &[f64], b: Option<&[f64]>, outputs: usize) -> Vec<f64> {
    let inputs = x.len();
    assert_eq!(w.len(), inputs * outputs);
    (0..outputs)
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..inputs {
                s += x[i] * w[i * outputs + o];
            }
            s
        })
        .collect()
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Eval-mode forward pass for one clip, one scalar at a time.
/// `base` holds the raw groups in layout order F, V, M, A (738 values);
/// `tokens` the 8 x 512 embedding, row-major.
pub fn scalar_forward(ck: &RawCheckpoint, base: &[f64], tokens: &[f64], use_clip: bool) -> Vec<f64> {
    const D: usize = 512;
    const T: usize = 8;
    // embedder
    let embed: Vec<f64> = if use_clip {
        let rows: Vec<&[f64]> = tokens.chunks(D).collect();
        let q: Vec<Vec<f64>> = rows.iter().map(|r| dense(r, ck.get("clip.query.weight"), Some(ck.get("clip.query.bias")), D)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| dense(r, ck.get("clip.key.weight"), Some(ck.get("clip.key.bias")), D)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| dense(r, ck.get("clip.value.weight"), Some(ck.get("clip.value.bias")), D)).collect();
        let mut pooled = vec![0.0; D];
        for i in 0..T {
            let scores: Vec<f64> = (0..T)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (D as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..T {
                for c in 0..D {
                    pooled[c] += e[j] / z * v[j][c] / T as f64;
                }
            }
        }
        dense(&pooled, ck.get("clip.proj.weight"), Some(ck.get("clip.proj.bias")), 16)
    } else {
        vec![0.0; 16]
    };

    // 754-wide input: F and V pass through, M and A min-max scaled and clamped
    let (lo, hi) = ck.scaler();
    let mut x: Vec<f64> = base[..690].to_vec();
    for (i, &v) in base[690..738].iter().enumerate() {
        x.push(if hi[i] > lo[i] { ((v - lo[i]) / (hi[i] - lo[i])).clamp(-0.5, 1.5) } else { 0.0 });
    }
    x.extend(&embed);
    assert_eq!(x.len(), 754);

    let bn = |z: &[f64], n: usize| -> Vec<f64> {
        let g = ck.get(&format!("head.bn{n}.gamma"));
        let b = ck.get(&format!("head.bn{n}.beta"));
        let m = ck.get(&format!("head.bn{n}.running_mean"));
        let v = ck.get(&format!("head.bn{n}.running_var"));
        (0..z.len()).map(|j| g[j] * (z[j] - m[j]) / (v[j] + 1e-5).sqrt() + b[j]).collect()
    };
    let layer = |x: &[f64], n: usize, out: usize| {
        dense(x, ck.get(&format!("head.dense{n}.weight")), Some(ck.get(&format!("head.dense{n}.bias"))), out)
    };

    let h1: Vec<f64> = bn(&layer(&x, 1, 256), 1).into_iter().map(erf_gelu).collect();
    let z2 = bn(&layer(&h1, 2, 128), 2);
    let h2: Vec<f64> = (0..128).map(|j| erf_gelu(z2[j] + 0.5 * (h1[2 * j] + h1[2 * j + 1]))).collect();
    let z3 = bn(&layer(&h2, 3, 64), 3);
    let skip = dense(&h2, ck.get("head.skip3.weight"), None, 64);
    let h3: Vec<f64> = (0..64).map(|j| erf_gelu(z3[j] + skip[j])).collect();
    layer(&h3, 4, 8).into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

// ---------------------------------------------------------------- corpus

pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub manifest: Manifest,
    pub latents: Vec<Latents>,
    pub features: PathBuf,
}

/// Generate a synthetic corpus and extract its features at native size.
pub fn build_corpus(spec: &SynthSpec) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, latents) = generate(spec, dir.path()).unwrap();
    let features = dir.path().join("features");
    std::fs::create_dir_all(&features).unwrap();
    let opts = ExtractOptions { analysis_size: None };
    for e in &manifest.entries {
        extract_entry(&manifest, e, &opts)
            .unwrap()
            .write(&feature_path(&features, &e.id))
            .unwrap();
    }
    Corpus {
        dir,
        manifest,
        latents,
        features,
    }
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
