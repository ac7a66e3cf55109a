//! Rate-distortion curves: monotone cubic fits of measured (QP, VMAF) pairs.
//!
//! A curve is the ground-truth oracle for a clip. It is used three ways:
//! inverting it to find the QP that hits each VMAF target, evaluating the
//! VMAF achieved by a predicted QP, and differentiating it so the VMAF-error
//! term of the training loss can be backpropagated.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default VMAF goals, highest quality first.
pub const DEFAULT_VMAF_TARGETS: [f64; 8] = [99.0, 97.0, 95.0, 91.0, 88.0, 85.0, 83.0, 80.0];

pub const MAX_QP: f64 = 255.0;

const BISECT_TOL: f64 = 1e-6;
const BISECT_MAX_ITERS: usize = 200;
const BISECT_WIDTH: f64 = 1e-10;

/// One measured encode: AV1 quantiser index and the VMAF it produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdSample {
    pub qp: u16,
    pub vmaf: f64,
}

impl RdSample {
    pub fn new(qp: u16, vmaf: f64) -> Self {
        Self { qp, vmaf }
    }

    fn validate(&self) -> Result<()> {
        if self.qp > 255 {
            return Err(Error::invalid(format!("qp {} outside 0..=255", self.qp)));
        }
        if !self.vmaf.is_finite() || !(0.0..=100.0).contains(&self.vmaf) {
            return Err(Error::invalid(format!(
                "vmaf {} at qp {} outside [0, 100]",
                self.vmaf, self.qp
            )));
        }
        Ok(())
    }
}

/// Piecewise-cubic Hermite interpolant of VMAF over QP, non-increasing in QP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    samples: Vec<RdSample>,
    knots_qp: Vec<f64>,
    // knot values after monotone repair
    knots_vmaf: Vec<f64>,
    slopes: Vec<f64>,
}

impl RdCurve {
    /// Fit a shape-preserving PCHIP curve.
    ///
    /// Samples must have strictly increasing QP. Local increases in VMAF are
    /// removed first with a pool-adjacent-violators pass so the fit is
    /// non-increasing everywhere.
    pub fn fit(samples: &[RdSample]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 RD samples, got {}",
                samples.len()
            )));
        }
        for s in samples {
            s.validate()?;
        }
        for w in samples.windows(2) {
            if w[1].qp == w[0].qp {
                return Err(Error::invalid(format!("duplicate qp {}", w[0].qp)));
            }
            if w[1].qp < w[0].qp {
                return Err(Error::invalid(format!(
                    "qp not increasing: {} after {}",
                    w[1].qp, w[0].qp
                )));
            }
        }

        let knots_qp: Vec<f64> = samples.iter().map(|s| f64::from(s.qp)).collect();
        let raw: Vec<f64> = samples.iter().map(|s| s.vmaf).collect();
        let knots_vmaf = isotonic_non_increasing(&raw);
        let slopes = pchip_slopes(&knots_qp, &knots_vmaf);

        Ok(Self {
            samples: samples.to_vec(),
            knots_qp,
            knots_vmaf,
            slopes,
        })
    }

    pub fn samples(&self) -> &[RdSample] {
        &self.samples
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots_qp.iter().copied().zip(self.knots_vmaf.iter().copied())
    }

    pub fn knot_slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn min_qp(&self) -> f64 {
        self.knots_qp[0]
    }

    pub fn max_qp(&self) -> f64 {
        self.knots_qp[self.knots_qp.len() - 1]
    }

    /// VMAF at the lowest QP (the best quality the curve reaches).
    pub fn max_vmaf(&self) -> f64 {
        self.knots_vmaf[0]
    }

    pub fn min_vmaf(&self) -> f64 {
        self.knots_vmaf[self.knots_vmaf.len() - 1]
    }

    fn interval(&self, qp: f64) -> usize {
        let n = self.knots_qp.len();
        self.knots_qp
            .partition_point(|&x| x <= qp)
            .saturating_sub(1)
            .min(n - 2)
    }

    /// Interpolated VMAF. Outside the measured QP range the nearest knot
    /// value is returned.
    pub fn evaluate(&self, qp: f64) -> f64 {
        if qp <= self.min_qp() {
            return self.knots_vmaf[0];
        }
        if qp >= self.max_qp() {
            return self.min_vmaf();
        }
        let k = self.interval(qp);
        let (x0, x1) = (self.knots_qp[k], self.knots_qp[k + 1]);
        let h = x1 - x0;
        let t = (qp - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        // y0 + h01 (y1 - y0) rather than h00 y0 + h01 y1: flat runs stay
        // exactly flat instead of wobbling by an ulp
        let (y0, y1) = (self.knots_vmaf[k], self.knots_vmaf[k + 1]);
        y0 + h01 * (y1 - y0) + h * (h10 * self.slopes[k] + h11 * self.slopes[k + 1])
    }

    /// dVMAF/dQP of the fitted cubic. Zero outside the domain, where
    /// evaluation is clamped.
    pub fn evaluate_derivative(&self, qp: f64) -> f64 {
        if qp < self.min_qp() || qp > self.max_qp() {
            return 0.0;
        }
        if let Ok(i) = self.knots_qp.binary_search_by(|x| x.total_cmp(&qp)) {
            return self.slopes[i];
        }
        let k = self.interval(qp);
        let (x0, x1) = (self.knots_qp[k], self.knots_qp[k + 1]);
        let h = x1 - x0;
        let t = (qp - x0) / h;
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.knots_vmaf[k] + d01 * self.knots_vmaf[k + 1]) / h
            + d10 * self.slopes[k]
            + d11 * self.slopes[k + 1]
    }

    /// Largest QP whose interpolated VMAF equals `vmaf`, or `None` when the
    /// target lies outside the curve's VMAF range.
    pub fn invert(&self, vmaf: f64) -> Option<f64> {
        if !(self.min_vmaf()..=self.max_vmaf()).contains(&vmaf) {
            return None;
        }
        let (mut lo, mut hi) = (self.min_qp(), self.max_qp());
        if self.evaluate(hi) >= vmaf {
            return Some(hi);
        }
        // invariant: evaluate(lo) >= vmaf > evaluate(hi)
        for _ in 0..BISECT_MAX_ITERS {
            if hi - lo <= BISECT_WIDTH {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.evaluate(mid) >= vmaf {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        debug_assert!((self.evaluate(lo) - vmaf).abs() <= BISECT_TOL);
        Some(lo)
    }

    pub fn derive_targets(&self, vmaf_targets: &[f64]) -> QualityTargets {
        let derived = vmaf_targets
            .iter()
            .map(|&v| match self.invert(v) {
                Some(qp) => TargetQp::Reached(qp),
                None if v > self.max_vmaf() => TargetQp::Unreachable(self.min_qp()),
                None => TargetQp::Unreachable(self.max_qp()),
            })
            .collect();
        QualityTargets {
            vmaf_targets: vmaf_targets.to_vec(),
            derived_qps: derived,
        }
    }
}

/// QP derived for one VMAF goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "qp", rename_all = "snake_case")]
pub enum TargetQp {
    Reached(f64),
    /// Goal outside the curve's range; holds the boundary knot QP.
    Unreachable(f64),
}

impl TargetQp {
    pub fn qp(self) -> f64 {
        match self {
            TargetQp::Reached(q) | TargetQp::Unreachable(q) => q,
        }
    }

    pub fn is_reachable(self) -> bool {
        matches!(self, TargetQp::Reached(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTargets {
    pub vmaf_targets: Vec<f64>,
    pub derived_qps: Vec<TargetQp>,
}

impl QualityTargets {
    pub fn qps(&self) -> Vec<f64> {
        self.derived_qps.iter().map(|t| t.qp()).collect()
    }
}

/// Pool-adjacent-violators fit of a non-increasing sequence (unit weights).
pub fn isotonic_non_increasing(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m1, c1) = blocks[blocks.len() - 1];
            let (m0, c0) = blocks[blocks.len() - 2];
            if m1 <= m0 {
                break;
            }
            blocks.pop();
            let c = c0 + c1;
            let last = blocks.last_mut().unwrap();
            *last = ((m0 * c0 as f64 + m1 * c1 as f64) / c as f64, c);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat(m).take(c))
        .collect()
}

/// Knot derivatives of the monotone piecewise cubic (Fritsch–Carlson
/// family, weighted harmonic mean in the interior, shape-preserving
/// three-point rule at the ends).
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = y
        .windows(2)
        .zip(&h)
        .map(|(w, &hk)| (w[1] - w[0]) / hk)
        .collect();

    if n == 2 {
        return vec![delta[0], delta[0]];
    }

    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (s0, s1) = (delta[k - 1], delta[k]);
        if s0 == 0.0 || s1 == 0.0 || s0.signum() != s1.signum() {
            continue;
        }
        let w1 = 2.0 * h[k] + h[k - 1];
        let w2 = h[k] + 2.0 * h[k - 1];
        d[k] = (w1 + w2) / (w1 / s0 + w2 / s1);
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if sign(d) != sign(s0) {
        0.0
    } else if sign(s0) != sign(s1) && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

// three-valued sign: zero maps to zero
fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}
