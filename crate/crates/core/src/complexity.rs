//! Per-frame spatial/temporal complexity and brightness, and the 42
//! summary statistics computed over I-frames and non-I-frames.
//!
//! Spatial complexity is the mean per-pixel L1 energy of the AC coefficients
//! of an orthonormal 32x32 DCT-II, with edge blocks padded by replication.
//! Temporal complexity is the mean absolute luma difference to the previous
//! frame.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::media::Frame;
use crate::stats;
use crate::{Error, Result};

pub const BLOCK: usize = 32;
pub const STATS_PER_METRIC: usize = 7;
/// 3 metrics x 2 partitions x 7 statistics.
pub const NUM_STATS: usize = 42;

fn dct_basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let n = BLOCK as f64;
        let mut c = [[0.0; BLOCK]; BLOCK];
        for (k, row) in c.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, v) in row.iter_mut().enumerate() {
                *v = scale
                    * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
            }
        }
        c
    })
}

/// AC energy of one block: sum of |coef| over all coefficients but DC.
fn block_energy(plane: &[f64], width: usize, height: usize, bx: usize, by: usize) -> f64 {
    let c = dct_basis();
    let mut block = [[0.0f64; BLOCK]; BLOCK];
    for (i, row) in block.iter_mut().enumerate() {
        let y = (by * BLOCK + i).min(height - 1);
        for (j, v) in row.iter_mut().enumerate() {
            let x = (bx * BLOCK + j).min(width - 1);
            *v = plane[y * width + x];
        }
    }
    // rows: tmp[i][v] = sum_j block[i][j] c[v][j]
    let mut tmp = [[0.0f64; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for v in 0..BLOCK {
            tmp[i][v] = (0..BLOCK).map(|j| block[i][j] * c[v][j]).sum();
        }
    }
    let mut energy = 0.0;
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            if u == 0 && v == 0 {
                continue;
            }
            let coef: f64 = (0..BLOCK).map(|i| c[u][i] * tmp[i][v]).sum();
            energy += coef.abs();
        }
    }
    energy
}

/// Spatial complexity of a frame.
pub fn frame_sc(frame: &Frame) -> f64 {
    let plane: Vec<f64> = frame.luma.iter().map(|&v| f64::from(v)).collect();
    plane_sc(&plane, frame.width, frame.height)
}

/// Spatial complexity of a real-valued row-major plane.
pub fn plane_sc(plane: &[f64], width: usize, height: usize) -> f64 {
    assert_eq!(plane.len(), width * height, "plane size");
    let bw = width.div_ceil(BLOCK);
    let bh = height.div_ceil(BLOCK);
    let mut total = 0.0;
    for by in 0..bh {
        for bx in 0..bw {
            total += block_energy(plane, width, height, bx, by);
        }
    }
    total / ((bw * bh * BLOCK * BLOCK) as f64)
}

/// Temporal complexity: mean absolute difference against `prev`.
pub fn frame_tc(frame: &Frame, prev: &Frame) -> Result<f64> {
    if (frame.width, frame.height, frame.bit_depth) != (prev.width, prev.height, prev.bit_depth) {
        return Err(Error::invalid(format!(
            "frame {}x{}@{} vs previous {}x{}@{}",
            frame.width, frame.height, frame.bit_depth, prev.width, prev.height, prev.bit_depth
        )));
    }
    let sad: u64 = frame
        .luma
        .iter()
        .zip(&prev.luma)
        .map(|(&a, &b)| u64::from(a.abs_diff(b)))
        .sum();
    Ok(sad as f64 / frame.luma.len() as f64)
}

pub fn frame_brightness(frame: &Frame) -> f64 {
    let sum: u64 = frame.luma.iter().map(|&v| u64::from(v)).sum();
    sum as f64 / frame.luma.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameComplexity {
    pub sc: f64,
    /// `None` for the first frame of a clip.
    pub tc: Option<f64>,
    pub brightness: f64,
}

/// Analyse a frame sequence. TC pairs each frame with its predecessor.
pub fn analyze_frames(frames: &[Frame]) -> Result<Vec<FrameComplexity>> {
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let tc = if i == 0 {
            None
        } else {
            Some(frame_tc(f, &frames[i - 1])?)
        };
        out.push(FrameComplexity {
            sc: frame_sc(f),
            tc,
            brightness: frame_brightness(f),
        });
    }
    Ok(out)
}

/// mean, std, min, max, p25, p50, p75 of one metric in one partition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    /// false when the partition held no values (all fields are zero then)
    pub valid: bool,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let s = stats::sorted(values);
        Self {
            mean: stats::mean(values),
            std: stats::std_dev(values),
            min: s[0],
            max: s[s.len() - 1],
            p25: stats::percentile_sorted(&s, 0.25),
            p50: stats::percentile_sorted(&s, 0.50),
            p75: stats::percentile_sorted(&s, 0.75),
            valid: true,
        }
    }

    pub fn to_array(&self) -> [f64; STATS_PER_METRIC] {
        [self.mean, self.std, self.min, self.max, self.p25, self.p50, self.p75]
    }
}

/// Summaries for {SC, TC, brightness} x {I-frames, non-I-frames}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityStats {
    pub sc_intra: Summary,
    pub sc_inter: Summary,
    pub tc_intra: Summary,
    pub tc_inter: Summary,
    pub brightness_intra: Summary,
    pub brightness_inter: Summary,
}

impl ComplexityStats {
    /// Fixed 42-value layout: metric-major (SC, TC, brightness), then
    /// partition (I, non-I), then the seven statistics.
    pub fn to_vec(&self) -> Vec<f64> {
        [
            &self.sc_intra,
            &self.sc_inter,
            &self.tc_intra,
            &self.tc_inter,
            &self.brightness_intra,
            &self.brightness_inter,
        ]
        .iter()
        .flat_map(|s| s.to_array())
        .collect()
    }
}

/// Default I-frame flags: the first frame only, plus any extra key frames.
pub fn iframe_flags(n_frames: usize, extra_key_frames: &[usize]) -> Vec<bool> {
    let mut flags = vec![false; n_frames];
    if let Some(f) = flags.first_mut() {
        *f = true;
    }
    for &i in extra_key_frames {
        if i < n_frames {
            flags[i] = true;
        }
    }
    flags
}

pub fn aggregate(per_frame: &[FrameComplexity], iframe: &[bool]) -> Result<ComplexityStats> {
    if per_frame.is_empty() {
        return Err(Error::invalid("no frames to aggregate"));
    }
    if per_frame.len() != iframe.len() {
        return Err(Error::invalid(format!(
            "{} frames but {} I-frame flags",
            per_frame.len(),
            iframe.len()
        )));
    }
    if !iframe.iter().any(|&f| f) {
        return Err(Error::invalid("no I-frame in clip"));
    }
    let pick = |intra: bool, get: &dyn Fn(&FrameComplexity) -> Option<f64>| -> Summary {
        let vals: Vec<f64> = per_frame
            .iter()
            .zip(iframe)
            .filter(|(_, &f)| f == intra)
            .filter_map(|(c, _)| get(c))
            .collect();
        Summary::of(&vals)
    };
    Ok(ComplexityStats {
        sc_intra: pick(true, &|c| Some(c.sc)),
        sc_inter: pick(false, &|c| Some(c.sc)),
        tc_intra: pick(true, &|c| c.tc),
        tc_inter: pick(false, &|c| c.tc),
        brightness_intra: pick(true, &|c| Some(c.brightness)),
        brightness_inter: pick(false, &|c| Some(c.brightness)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_has_no_texture() {
        for v in [0u16, 17, 255] {
            let f = Frame::filled(70, 45, 8, v).unwrap();
            assert!(frame_sc(&f).abs() < 1e-9);
        }
    }

    #[test]
    fn single_basis_image_has_unit_energy() {
        let c = dct_basis();
        for (u, v) in [(0, 1), (3, 5), (31, 31)] {
            let plane: Vec<f64> = (0..BLOCK * BLOCK)
                .map(|p| c[u][p / BLOCK] * c[v][p % BLOCK])
                .collect();
            let sc = plane_sc(&plane, BLOCK, BLOCK);
            assert!((sc - 1.0 / 1024.0).abs() < 1e-15, "{sc}");
        }
    }

    #[test]
    fn tc_basics() {
        let a = Frame::filled(8, 8, 8, 10).unwrap();
        let b = Frame::filled(8, 8, 8, 11).unwrap();
        assert_eq!(frame_tc(&a, &a).unwrap(), 0.0);
        assert_eq!(frame_tc(&b, &a).unwrap(), 1.0);
        let c = Frame::filled(8, 4, 8, 11).unwrap();
        assert!(frame_tc(&c, &a).is_err());
    }

    #[test]
    fn brightness_basics() {
        assert_eq!(frame_brightness(&Frame::filled(4, 4, 8, 128).unwrap()), 128.0);
        let mut luma = vec![0u16; 16];
        luma[8..].fill(255);
        assert_eq!(frame_brightness(&Frame::new(4, 4, 8, luma).unwrap()), 127.5);
    }

    #[test]
    fn single_frame_clip() {
        let pf = [FrameComplexity {
            sc: 3.0,
            tc: None,
            brightness: 90.0,
        }];
        let s = aggregate(&pf, &[true]).unwrap();
        assert_eq!(s.sc_intra.to_array(), [3.0, 0.0, 3.0, 3.0, 3.0, 3.0, 3.0]);
        assert_eq!(s.brightness_intra.mean, 90.0);
        assert!(!s.tc_intra.valid);
        assert!(!s.sc_inter.valid);
        assert_eq!(s.sc_inter.to_array(), [0.0; 7]);
        assert_eq!(s.to_vec().len(), NUM_STATS);
    }

    #[test]
    fn tc_quartiles() {
        let mut pf = vec![FrameComplexity {
            sc: 0.0,
            tc: None,
            brightness: 0.0,
        }];
        for t in [0.0, 1.0, 3.0, 5.0] {
            pf.push(FrameComplexity {
                sc: 0.0,
                tc: Some(t),
                brightness: 0.0,
            });
        }
        let s = aggregate(&pf, &iframe_flags(5, &[])).unwrap();
        assert_eq!(s.tc_inter.p50, 2.0);
        assert_eq!(s.tc_inter.mean, 2.25);
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate(&[], &[]).is_err());
        let pf = [FrameComplexity {
            sc: 1.0,
            tc: None,
            brightness: 1.0,
        }];
        assert!(aggregate(&pf, &[false]).is_err());
        assert!(aggregate(&pf, &[true, false]).is_err());
    }

    #[test]
    fn flags_include_extra_keys() {
        assert_eq!(iframe_flags(4, &[2, 9]), vec![true, false, true, false]);
    }
}
