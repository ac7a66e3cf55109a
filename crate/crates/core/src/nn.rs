//! A small hand-differentiated network toolkit.
//!
//! Everything runs in f64 and is deterministic: layers cache what their
//! backward pass needs, gradients accumulate into [`Param::grad`], and all
//! reductions run in a fixed order. Matrix products go through
//! `matrixmultiply`, which is single-threaded and order-stable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rd::{RdCurve, MAX_QP};
use crate::{Error, Result};

/// Row-major matrix; rows are batch entries (or tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::internal(format!(
                "tensor data {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn same_shape(&self, other: &Tensor2, what: &str) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::internal(format!(
                "{what}: shape {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor2 { data, ..*self })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

/// `c = beta * c + op(a) * op(b)` where `op` optionally transposes.
pub fn gemm(a: &Tensor2, trans_a: bool, b: &Tensor2, trans_b: bool, beta: f64, c: &mut Tensor2) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    let (rsa, csa) = if trans_a { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols) } else { (b.cols, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the strides above describe `a`, `b` and `c` exactly; all three
    // buffers are live for the call and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor2, trans_a: bool, b: &Tensor2, trans_b: bool) -> Tensor2 {
    let m = if trans_a { a.cols } else { a.rows };
    let n = if trans_b { b.rows } else { b.cols };
    let mut c = Tensor2::zeros(m, n);
    gemm(a, trans_a, b, trans_b, 0.0, &mut c);
    c
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Fan-in uniform initialization, bound 1/sqrt(fan_in).
fn fan_in_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Fully connected layer, `y = x W + b` with `W` stored in x out.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor2>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let weight = Param::new(fan_in_uniform(rng, inputs * outputs, inputs));
        let bias = bias.then(|| Param::new(fan_in_uniform(rng, outputs, inputs)));
        Self {
            inputs,
            outputs,
            weight,
            bias,
            cache: None,
        }
    }

    pub fn zeroed(inputs: usize, outputs: usize, bias: bool) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::new(vec![0.0; inputs * outputs]),
            bias: bias.then(|| Param::new(vec![0.0; outputs])),
            cache: None,
        }
    }

    fn weight_tensor(&self) -> Tensor2 {
        Tensor2 {
            rows: self.inputs,
            cols: self.outputs,
            data: self.weight.value.clone(),
        }
    }

    pub fn forward(&mut self, x: &Tensor2) -> Result<Tensor2> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Forward pass without caching.
    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols != self.inputs {
            return Err(Error::internal(format!(
                "dense expects {} inputs, got {}",
                self.inputs, x.cols
            )));
        }
        let mut y = matmul(x, false, &self.weight_tensor(), false);
        if let Some(b) = &self.bias {
            for r in 0..y.rows {
                for (v, bv) in y.row_mut(r).iter_mut().zip(&b.value) {
                    *v += bv;
                }
            }
        }
        y.check_finite("dense output")?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor2) -> Result<Tensor2> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::internal("dense backward before forward"))?;
        let mut dw = Tensor2 {
            rows: self.inputs,
            cols: self.outputs,
            data: std::mem::take(&mut self.weight.grad),
        };
        gemm(x, true, dy, false, 1.0, &mut dw);
        self.weight.grad = dw.data;
        if let Some(b) = &mut self.bias {
            for r in 0..dy.rows {
                for (g, d) in b.grad.iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        Ok(matmul(dy, false, &self.weight_tensor(), true))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

struct BnCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// Batch normalization over the batch axis with running statistics.
pub struct BatchNorm {
    pub features: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

impl std::fmt::Debug for BatchNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchNorm").field("features", &self.features).finish()
    }
}

impl Clone for BatchNorm {
    fn clone(&self) -> Self {
        Self {
            features: self.features,
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            momentum: self.momentum,
            eps: self.eps,
            cache: None,
        }
    }
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: Param::new(vec![1.0; features]),
            beta: Param::new(vec![0.0; features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; a single-row batch falls back to the running statistics.
    pub fn forward(&mut self, x: &Tensor2, train: bool) -> Result<Tensor2> {
        if x.cols != self.features {
            return Err(Error::internal(format!(
                "batchnorm expects {} features, got {}",
                self.features, x.cols
            )));
        }
        let n = x.rows;
        let batch_stats = train && n >= 2;
        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; self.features];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; self.features];
            for r in 0..n {
                for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..self.features {
                self.running_mean[j] =
                    (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                self.running_var[j] =
                    (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor2::zeros(n, self.features);
        let mut y = Tensor2::zeros(n, self.features);
        for r in 0..n {
            for j in 0..self.features {
                let h = (x.data[r * x.cols + j] - mean[j]) * inv_std[j];
                xhat.data[r * self.features + j] = h;
                y.data[r * self.features + j] = self.gamma.value[j] * h + self.beta.value[j];
            }
        }
        y.check_finite("batchnorm output")?;
        if train {
            self.cache = Some(BnCache {
                xhat,
                inv_std,
                batch_stats,
            });
        }
        Ok(y)
    }

    /// Eval-mode normalization with the running statistics.
    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols != self.features {
            return Err(Error::internal(format!(
                "batchnorm expects {} features, got {}",
                self.features, x.cols
            )));
        }
        let mut y = Tensor2::zeros(x.rows, x.cols);
        for j in 0..self.features {
            let inv_std = 1.0 / (self.running_var[j] + self.eps).sqrt();
            for r in 0..x.rows {
                let h = (x.data[r * x.cols + j] - self.running_mean[j]) * inv_std;
                y.data[r * x.cols + j] = self.gamma.value[j] * h + self.beta.value[j];
            }
        }
        y.check_finite("batchnorm output")?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor2) -> Result<Tensor2> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::internal("batchnorm backward before forward"))?;
        let (n, f) = (dy.rows, self.features);
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for r in 0..n {
            for j in 0..f {
                let d = dy.data[r * f + j];
                sum_dy[j] += d;
                sum_dy_xhat[j] += d * c.xhat.data[r * f + j];
            }
        }
        for j in 0..f {
            self.beta.grad[j] += sum_dy[j];
            self.gamma.grad[j] += sum_dy_xhat[j];
        }
        let mut dx = Tensor2::zeros(n, f);
        let nf = n as f64;
        for r in 0..n {
            for j in 0..f {
                let d = dy.data[r * f + j];
                let k = self.gamma.value[j] * c.inv_std[j];
                dx.data[r * f + j] = if c.batch_stats {
                    k * (d - sum_dy[j] / nf - c.xhat.data[r * f + j] * sum_dy_xhat[j] / nf)
                } else {
                    k * d
                };
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GELU layer caching its input.
#[derive(Debug, Clone, Default)]
pub struct Gelu {
    cache: Option<Tensor2>,
}

impl Gelu {
    pub fn forward(&mut self, x: &Tensor2) -> Tensor2 {
        self.cache = Some(x.clone());
        x.map(gelu)
    }

    pub fn backward(&mut self, dy: &Tensor2) -> Result<Tensor2> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::internal("gelu backward before forward"))?;
        x.same_shape(dy, "gelu backward")?;
        let data = x.data.iter().zip(&dy.data).map(|(&x, &d)| d * gelu_grad(x)).collect();
        Ok(Tensor2 { data, ..*dy })
    }
}

/// Sigmoid layer caching its output.
#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    cache: Option<Tensor2>,
}

impl Sigmoid {
    pub fn forward(&mut self, x: &Tensor2) -> Tensor2 {
        let y = x.map(sigmoid);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor2) -> Result<Tensor2> {
        let y = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::internal("sigmoid backward before forward"))?;
        y.same_shape(dy, "sigmoid backward")?;
        let data = y.data.iter().zip(&dy.data).map(|(&y, &d)| d * y * (1.0 - y)).collect();
        Ok(Tensor2 { data, ..*dy })
    }
}

/// Inverted dropout. Identity in eval mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor2, train: bool, rng: &mut ChaCha8Rng) -> Tensor2 {
        if !train || self.rate <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.data.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let y = Tensor2 {
            data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
            ..*x
        };
        self.mask = Some(mask);
        y
    }

    /// Reuse the last mask (used by gradient checks).
    pub fn forward_fixed(&self, x: &Tensor2) -> Tensor2 {
        match &self.mask {
            Some(mask) => Tensor2 {
                data: x.data.iter().zip(mask).map(|(v, m)| v * m).collect(),
                ..*x
            },
            None => x.clone(),
        }
    }

    pub fn backward(&self, dy: &Tensor2) -> Tensor2 {
        self.forward_fixed(dy)
    }
}

/// Elementwise sum of a block output and its skip branch.
pub fn residual_add(x: &Tensor2, skip: &Tensor2) -> Result<Tensor2> {
    x.add(skip)
}

/// Single-head scaled dot-product self-attention over a fixed number of
/// tokens, mean-pooled and projected to a small embedding.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub tokens: usize,
    pub dim: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub proj: Dense,
    cache: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    // batch*tokens x tokens softmax weights
    attn: Tensor2,
}

impl SelfAttention {
    pub fn new(tokens: usize, dim: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            tokens,
            dim,
            query: Dense::new(dim, dim, true, rng),
            key: Dense::new(dim, dim, true, rng),
            value: Dense::new(dim, dim, true, rng),
            proj: Dense::new(dim, out, true, rng),
            cache: None,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.proj.outputs
    }

    fn check_input(&self, x: &Tensor2) -> Result<usize> {
        if x.cols != self.dim || x.rows % self.tokens != 0 {
            return Err(Error::internal(format!(
                "attention expects rows of {} tokens x {} dims, got {}x{}",
                self.tokens, self.dim, x.rows, x.cols
            )));
        }
        Ok(x.rows / self.tokens)
    }

    // softmax(Q K^T / sqrt(d)) per sample, stacked into (batch*tokens) x tokens
    fn attention_weights(&self, q: &Tensor2, k: &Tensor2, batch: usize) -> Tensor2 {
        let t = self.tokens;
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut attn = Tensor2::zeros(batch * t, t);
        for b in 0..batch {
            for i in 0..t {
                let qi = q.row(b * t + i);
                let row = attn.row_mut(b * t + i);
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = k.row(b * t + j);
                    *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                row.iter_mut().for_each(|s| *s /= sum);
            }
        }
        attn
    }

    // mean over tokens of attn @ V
    fn pool(&self, attn: &Tensor2, v: &Tensor2, batch: usize) -> Tensor2 {
        let t = self.tokens;
        let mut pooled = Tensor2::zeros(batch, self.dim);
        for b in 0..batch {
            // pooled = (1/t) sum_i sum_j a_ij v_j = sum_j (colmean_j) v_j
            let mut w = vec![0.0; t];
            for i in 0..t {
                for (wj, a) in w.iter_mut().zip(attn.row(b * t + i)) {
                    *wj += a;
                }
            }
            let out = pooled.row_mut(b);
            for (j, wj) in w.iter().enumerate() {
                let wj = wj / t as f64;
                for (o, vv) in out.iter_mut().zip(v.row(b * t + j)) {
                    *o += wj * vv;
                }
            }
        }
        pooled
    }

    /// Input rows are grouped per sample: `tokens` consecutive rows each.
    pub fn forward(&mut self, x: &Tensor2) -> Result<Tensor2> {
        let batch = self.check_input(x)?;
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let attn = self.attention_weights(&q, &k, batch);
        let pooled = self.pool(&attn, &v, batch);
        let out = self.proj.forward(&pooled)?;
        self.cache = Some(AttnCache { q, k, v, attn });
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        let batch = self.check_input(x)?;
        let q = self.query.infer(x)?;
        let k = self.key.infer(x)?;
        let v = self.value.infer(x)?;
        let attn = self.attention_weights(&q, &k, batch);
        self.proj.infer(&self.pool(&attn, &v, batch))
    }

    /// Softmax weights for the given input (inspection helper).
    pub fn weights_for(&self, x: &Tensor2) -> Result<Tensor2> {
        let batch = self.check_input(x)?;
        let q = self.query.infer(x)?;
        let k = self.key.infer(x)?;
        Ok(self.attention_weights(&q, &k, batch))
    }

    pub fn backward(&mut self, dout: &Tensor2) -> Result<Tensor2> {
        let c = self
            .cache
            .take()
            .ok_or_else(|| Error::internal("attention backward before forward"))?;
        let t = self.tokens;
        let batch = dout.rows;
        let scale = 1.0 / (self.dim as f64).sqrt();
        let dpooled = self.proj.backward(dout)?;

        let mut dq = Tensor2::zeros(batch * t, self.dim);
        let mut dk = Tensor2::zeros(batch * t, self.dim);
        let mut dv = Tensor2::zeros(batch * t, self.dim);
        for b in 0..batch {
            // each token output O_i receives dpooled / t
            let dp: Vec<f64> = dpooled.row(b).iter().map(|g| g / t as f64).collect();
            // dV_j = sum_i a_ij dO_i = (sum_i a_ij) dp
            for j in 0..t {
                let colsum: f64 = (0..t).map(|i| c.attn.data[(b * t + i) * t + j]).sum();
                for (d, g) in dv.row_mut(b * t + j).iter_mut().zip(&dp) {
                    *d = colsum * g;
                }
            }
            // dA_ij = dO_i . V_j = dp . V_j (same for every i)
            let da: Vec<f64> = (0..t)
                .map(|j| dp.iter().zip(c.v.row(b * t + j)).map(|(a, v)| a * v).sum())
                .collect();
            for i in 0..t {
                let a = c.attn.row(b * t + i);
                let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                // dS_ij = a_ij (dA_ij - sum_l a_il dA_il), then the 1/sqrt(d) scale
                let ds: Vec<f64> = a
                    .iter()
                    .zip(&da)
                    .map(|(aij, daj)| aij * (daj - dot) * scale)
                    .collect();
                for (j, dsij) in ds.iter().enumerate() {
                    let kj = c.k.row(b * t + j);
                    for (d, kv) in dq.row_mut(b * t + i).iter_mut().zip(kj) {
                        *d += dsij * kv;
                    }
                    let qi = c.q.row(b * t + i);
                    for (d, qv) in dk.row_mut(b * t + j).iter_mut().zip(qi) {
                        *d += dsij * qv;
                    }
                }
            }
        }
        let dx_q = self.query.backward(&dq)?;
        let dx_k = self.key.backward(&dk)?;
        let dx_v = self.value.backward(&dv)?;
        dx_q.add(&dx_k)?.add(&dx_v)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.query.params_mut();
        v.extend(self.key.params_mut());
        v.extend(self.value.params_mut());
        v.extend(self.proj.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.query.params();
        v.extend(self.key.params());
        v.extend(self.value.params());
        v.extend(self.proj.params());
        v
    }
}

/// Optimizer, loss and scheduler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub alpha_loss_weight: f64,
    pub tolerance_vmaf: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub scheduler: SchedulerConfig,
    pub max_epochs: usize,
    /// Share of the training split held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            l2: 1e-5,
            batch_size: 32,
            alpha_loss_weight: 1.0,
            tolerance_vmaf: 2.0,
            dropout: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            scheduler: SchedulerConfig::default(),
            max_epochs: 200,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("scheduler.factor", self.scheduler.factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("l2", self.l2),
            ("alpha_loss_weight", self.alpha_loss_weight),
            ("tolerance_vmaf", self.tolerance_vmaf),
            ("scheduler.min_lr", self.scheduler.min_lr),
            ("scheduler.min_delta", self.scheduler.min_delta),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Tolerance-aware composite loss: L1 on normalized QP plus a hinged L1 on
/// the VMAF the predicted QP would achieve.
///
/// `pred` and `target` are batch x targets in [0, 1] (QP / 255); `curves`
/// has one RD curve per row. Returns the loss and its gradient w.r.t.
/// `pred`.
pub fn tolerant_composite_loss(
    pred: &Tensor2,
    target: &Tensor2,
    curves: &[&RdCurve],
    cfg: &TrainConfig,
) -> Result<(f64, Tensor2)> {
    pred.same_shape(target, "loss")?;
    if curves.len() != pred.rows {
        return Err(Error::internal(format!(
            "{} curves for a batch of {}",
            curves.len(),
            pred.rows
        )));
    }
    let n = pred.data.len() as f64;
    let mut grad = Tensor2::zeros(pred.rows, pred.cols);
    let (mut la, mut lb) = (0.0, 0.0);
    for r in 0..pred.rows {
        let curve = curves[r];
        for c in 0..pred.cols {
            let i = r * pred.cols + c;
            let (p, t) = (pred.data[i], target.data[i]);
            let diff = p - t;
            la += diff.abs();
            let mut g = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };

            let dv = curve.evaluate(p * MAX_QP) - curve.evaluate(t * MAX_QP);
            let excess = dv.abs() - cfg.tolerance_vmaf;
            if excess > 0.0 {
                lb += excess;
                g += cfg.alpha_loss_weight * dv.signum() * curve.evaluate_derivative(p * MAX_QP) * MAX_QP;
            }
            grad.data[i] = g / n;
        }
    }
    let loss = la / n + cfg.alpha_loss_weight * lb / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}

/// Adam moments for an ordered list of parameters.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. L2 is folded into the gradient before the moments.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64, cfg: &TrainConfig) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] + cfg.l2 * p.value[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.value[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            min_delta: 1e-4,
            min_lr: 1e-6,
        }
    }
}

/// Reduce-on-plateau learning-rate control driven by validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub cfg: SchedulerConfig,
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    /// Set when a reduction was due but the rate was already at `min_lr`.
    pub exhausted: bool,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: SchedulerConfig) -> Self {
        Self {
            cfg,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            exhausted: false,
        }
    }

    /// Record one epoch's validation loss and return the learning rate for
    /// the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.cfg.min_delta {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                if self.lr <= self.cfg.min_lr {
                    self.exhausted = true;
                }
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
