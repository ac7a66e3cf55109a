//! The attention embedder and the feed-forward QP head, joint training and
//! prediction.
//!
//! Head layout (754 -> 256 -> 128 -> 64 -> 8):
//!
//! ```text
//! h1 = drop(gelu(bn1(x W1 + b1)))
//! h2 = drop(gelu(bn2(h1 W2 + b2) + pool(h1)))    pool: mean of adjacent pairs
//! h3 = drop(gelu(bn3(h2 W3 + b3) + h2 P3))       P3: 128x64, no bias
//! y  = sigmoid(h3 W4 + b4)
//! ```
//!
//! The embedder maps the 8x512 frame tokens to the 16 values of the C group.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{ClipEmbedding, TOKENS, TOKEN_DIM};
use crate::features::{self, FeatureGroup, GroupMask, RawFeatures, Scaler, CLIP_DIM, FEATURE_DIM};
use crate::nn::{
    residual_add, tolerant_composite_loss, Adam, BatchNorm, Dense, Dropout, Gelu, Param,
    PlateauScheduler, SelfAttention, Sigmoid, Tensor2, TrainConfig,
};
use crate::rd::{RdCurve, DEFAULT_VMAF_TARGETS, MAX_QP};
use crate::{Error, Result};

pub const HEAD_WIDTHS: [usize; 5] = [FEATURE_DIM, 256, 128, 64, 8];
pub const OUTPUTS: usize = 8;

/// Halve the width by averaging adjacent pairs.
fn pair_pool(x: &Tensor2) -> Tensor2 {
    let mut y = Tensor2::zeros(x.rows, x.cols / 2);
    for r in 0..x.rows {
        let src = x.row(r);
        for (j, v) in y.row_mut(r).iter_mut().enumerate() {
            *v = 0.5 * (src[2 * j] + src[2 * j + 1]);
        }
    }
    y
}

fn pair_pool_backward(dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(dy.rows, dy.cols * 2);
    for r in 0..dy.rows {
        let g = dy.row(r).to_vec();
        let out = dx.row_mut(r);
        for (j, d) in g.iter().enumerate() {
            out[2 * j] = 0.5 * d;
            out[2 * j + 1] = 0.5 * d;
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct Head {
    pub d1: Dense,
    pub bn1: BatchNorm,
    pub d2: Dense,
    pub bn2: BatchNorm,
    pub d3: Dense,
    pub bn3: BatchNorm,
    pub skip3: Dense,
    pub d4: Dense,
    g: [Gelu; 3],
    drop: [Dropout; 3],
    out: Sigmoid,
}

impl Head {
    pub fn new(dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = HEAD_WIDTHS;
        Self {
            d1: Dense::new(w[0], w[1], true, rng),
            bn1: BatchNorm::new(w[1]),
            d2: Dense::new(w[1], w[2], true, rng),
            bn2: BatchNorm::new(w[2]),
            d3: Dense::new(w[2], w[3], true, rng),
            bn3: BatchNorm::new(w[3]),
            skip3: Dense::new(w[2], w[3], false, rng),
            d4: Dense::new(w[3], w[4], true, rng),
            g: Default::default(),
            drop: std::array::from_fn(|_| Dropout::new(dropout)),
            out: Sigmoid::default(),
        }
    }

    /// All weights and biases zero; batch-norm at its identity init.
    pub fn zeroed(dropout: f64) -> Self {
        let w = HEAD_WIDTHS;
        Self {
            d1: Dense::zeroed(w[0], w[1], true),
            bn1: BatchNorm::new(w[1]),
            d2: Dense::zeroed(w[1], w[2], true),
            bn2: BatchNorm::new(w[2]),
            d3: Dense::zeroed(w[2], w[3], true),
            bn3: BatchNorm::new(w[3]),
            skip3: Dense::zeroed(w[2], w[3], false),
            d4: Dense::zeroed(w[3], w[4], true),
            g: Default::default(),
            drop: std::array::from_fn(|_| Dropout::new(dropout)),
            out: Sigmoid::default(),
        }
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.drop = std::array::from_fn(|_| Dropout::new(rate));
    }

    pub fn forward(&mut self, x: &Tensor2, train: bool, rng: &mut ChaCha8Rng) -> Result<Tensor2> {
        let z1 = self.bn1.forward(&self.d1.forward(x)?, train)?;
        let h1 = self.drop[0].forward(&self.g[0].forward(&z1), train, rng);

        let z2 = self.bn2.forward(&self.d2.forward(&h1)?, train)?;
        let z2 = residual_add(&z2, &pair_pool(&h1))?;
        let h2 = self.drop[1].forward(&self.g[1].forward(&z2), train, rng);

        let z3 = self.bn3.forward(&self.d3.forward(&h2)?, train)?;
        let z3 = residual_add(&z3, &self.skip3.forward(&h2)?)?;
        let h3 = self.drop[2].forward(&self.g[2].forward(&z3), train, rng);

        Ok(self.out.forward(&self.d4.forward(&h3)?))
    }

    /// Eval-mode forward without touching caches or running statistics.
    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        let h1 = self.bn1.infer(&self.d1.infer(x)?)?.map(crate::nn::gelu);
        let z2 = residual_add(&self.bn2.infer(&self.d2.infer(&h1)?)?, &pair_pool(&h1))?;
        let h2 = z2.map(crate::nn::gelu);
        let z3 = residual_add(&self.bn3.infer(&self.d3.infer(&h2)?)?, &self.skip3.infer(&h2)?)?;
        let h3 = z3.map(crate::nn::gelu);
        Ok(self.d4.infer(&h3)?.map(crate::nn::sigmoid))
    }

    pub fn backward(&mut self, dy: &Tensor2) -> Result<Tensor2> {
        let dh3 = self.d4.backward(&self.out.backward(dy)?)?;
        let dz3 = self.g[2].backward(&self.drop[2].backward(&dh3))?;
        let dh2 = self
            .d3
            .backward(&self.bn3.backward(&dz3)?)?
            .add(&self.skip3.backward(&dz3)?)?;

        let dz2 = self.g[1].backward(&self.drop[1].backward(&dh2))?;
        let dh1 = self.d2.backward(&self.bn2.backward(&dz2)?)?.add(&pair_pool_backward(&dz2))?;

        let dz1 = self.g[0].backward(&self.drop[0].backward(&dh1))?;
        self.d1.backward(&self.bn1.backward(&dz1)?)
    }

    /// Trainable tensors in checkpoint order.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.d1.params();
        v.extend(self.bn1.params());
        v.extend(self.d2.params());
        v.extend(self.bn2.params());
        v.extend(self.d3.params());
        v.extend(self.bn3.params());
        v.extend(self.skip3.params());
        v.extend(self.d4.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.d1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.d2.params_mut());
        v.extend(self.bn2.params_mut());
        v.extend(self.d3.params_mut());
        v.extend(self.bn3.params_mut());
        v.extend(self.skip3.params_mut());
        v.extend(self.d4.params_mut());
        v
    }

    pub fn batchnorms(&self) -> [&BatchNorm; 3] {
        [&self.bn1, &self.bn2, &self.bn3]
    }

    pub fn batchnorms_mut(&mut self) -> [&mut BatchNorm; 3] {
        [&mut self.bn1, &mut self.bn2, &mut self.bn3]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// (inputs, outputs) of the four main dense layers.
    pub fn layer_shapes(&self) -> [(usize, usize); 4] {
        [&self.d1, &self.d2, &self.d3, &self.d4].map(|d| (d.inputs, d.outputs))
    }
}

pub fn clipnet_new(rng: &mut ChaCha8Rng) -> SelfAttention {
    SelfAttention::new(TOKENS, TOKEN_DIM, CLIP_DIM, rng)
}

/// Embedder plus head.
#[derive(Debug, Clone)]
pub struct Network {
    pub clip: SelfAttention,
    pub head: Head,
}

/// One forward batch: scaled 754-wide rows (C slot ignored) and the frame
/// tokens, `TOKENS` rows per sample.
pub struct Batch {
    pub base: Tensor2,
    pub tokens: Tensor2,
}

impl Network {
    pub fn new(seed: u64, dropout: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = clipnet_new(&mut rng);
        let head = Head::new(dropout, &mut rng);
        Self { clip, head }
    }

    fn head_input(&self, base: &Tensor2, embed: Option<&Tensor2>) -> Result<Tensor2> {
        if base.cols != FEATURE_DIM {
            return Err(Error::internal(format!("head input width {}", base.cols)));
        }
        let mut x = base.clone();
        let c = FeatureGroup::Clip.range();
        for r in 0..x.rows {
            let dst = &mut x.row_mut(r)[c.clone()];
            match embed {
                Some(e) => dst.copy_from_slice(e.row(r)),
                None => dst.fill(0.0),
            }
        }
        Ok(x)
    }

    pub fn forward(&mut self, b: &Batch, use_clip: bool, train: bool, rng: &mut ChaCha8Rng) -> Result<Tensor2> {
        let embed = if use_clip { Some(self.clip.forward(&b.tokens)?) } else { None };
        let x = self.head_input(&b.base, embed.as_ref())?;
        self.head.forward(&x, train, rng)
    }

    pub fn infer(&self, b: &Batch, use_clip: bool) -> Result<Tensor2> {
        let embed = if use_clip { Some(self.clip.infer(&b.tokens)?) } else { None };
        self.head.infer(&self.head_input(&b.base, embed.as_ref())?)
    }

    pub fn backward(&mut self, dy: &Tensor2, use_clip: bool) -> Result<()> {
        let dx = self.head.backward(dy)?;
        if use_clip {
            let c = FeatureGroup::Clip.range();
            let mut de = Tensor2::zeros(dx.rows, CLIP_DIM);
            for r in 0..dx.rows {
                de.row_mut(r).copy_from_slice(&dx.row(r)[c.clone()]);
            }
            self.clip.backward(&de)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.clip.params();
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.clip.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clip_param_count(&self) -> usize {
        self.clip.params().iter().map(|p| p.len()).sum()
    }

    /// Round every parameter and running statistic to f32 precision, the
    /// precision of the checkpoint blob.
    pub fn round_to_f32(&mut self) {
        let round = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
        for p in self.params_mut() {
            round(&mut p.value);
        }
        for bn in self.head.batchnorms_mut() {
            round(&mut bn.running_mean);
            round(&mut bn.running_var);
        }
    }
}

/// Eight predicted QPs for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub vmaf_targets: Vec<f64>,
    pub qp_norm: Vec<f64>,
    pub qp: Vec<f64>,
}

impl Prediction {
    fn from_row(row: &[f64], targets: &[f64]) -> Self {
        Self {
            vmaf_targets: targets.to_vec(),
            qp_norm: row.to_vec(),
            qp: row.iter().map(|v| v * MAX_QP).collect(),
        }
    }
}

/// One clip ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub raw: RawFeatures,
    pub clip: Option<ClipEmbedding>,
    pub curve: RdCurve,
    /// Ground-truth QPs (0..255) for the model's VMAF targets.
    pub target_qp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// A trained network with everything needed to predict.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub scaler: Scaler,
    pub mask: GroupMask,
    pub vmaf_targets: Vec<f64>,
    pub config: TrainConfig,
    pub history: Vec<EpochLog>,
}

fn use_clip(mask: GroupMask) -> bool {
    !mask.is_removed(FeatureGroup::Clip)
}

fn tokens_of(clip: Option<&ClipEmbedding>, mask: GroupMask) -> Result<Vec<f64>> {
    match clip {
        Some(c) => Ok(c.to_f64()),
        None if !use_clip(mask) => Ok(vec![0.0; TOKENS * TOKEN_DIM]),
        None => Err(Error::invalid("clip embedding required unless the C group is masked")),
    }
}

impl Model {
    /// Untrained model; useful for tests and closed-form checks.
    pub fn new(net: Network, scaler: Scaler, mask: GroupMask, config: TrainConfig) -> Self {
        Self {
            net,
            scaler,
            mask,
            vmaf_targets: DEFAULT_VMAF_TARGETS.to_vec(),
            config,
            history: vec![],
        }
    }

    pub fn batch(&self, items: &[(&RawFeatures, Option<&ClipEmbedding>)]) -> Result<Batch> {
        let mut base = Vec::with_capacity(items.len() * FEATURE_DIM);
        let mut tokens = Vec::with_capacity(items.len() * TOKENS * TOKEN_DIM);
        let zeros = [0.0; CLIP_DIM];
        for (raw, clip) in items {
            let fv = features::assemble(raw, &zeros, &self.scaler, self.mask)?;
            base.extend(fv.values);
            tokens.extend(tokens_of(*clip, self.mask)?);
        }
        Ok(Batch {
            base: Tensor2::from_vec(items.len(), FEATURE_DIM, base)?,
            tokens: Tensor2::from_vec(items.len() * TOKENS, TOKEN_DIM, tokens)?,
        })
    }

    pub fn predict(&self, raw: &RawFeatures, clip: Option<&ClipEmbedding>) -> Result<Prediction> {
        Ok(self.predict_batch(&[(raw, clip)])?.remove(0))
    }

    pub fn predict_batch(&self, items: &[(&RawFeatures, Option<&ClipEmbedding>)]) -> Result<Vec<Prediction>> {
        if items.is_empty() {
            return Ok(vec![]);
        }
        let out = self.net.infer(&self.batch(items)?, use_clip(self.mask))?;
        out.check_finite("prediction")?;
        Ok((0..out.rows)
            .map(|r| Prediction::from_row(out.row(r), &self.vmaf_targets))
            .collect())
    }

    pub fn predict_samples(&self, samples: &[Sample]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(64) {
            let items: Vec<_> = chunk.iter().map(|s| (&s.raw, s.clip.as_ref())).collect();
            out.extend(self.predict_batch(&items)?);
        }
        Ok(out)
    }
}

/// Split off a seed-chosen validation subset. Falls back to validating on
/// the training set when the split would leave either side empty.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    idx.shuffle(&mut rng);
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return ((0..n).collect(), (0..n).collect());
    }
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Cut shuffled indices into batches; a trailing single sample joins the
/// previous batch so batch statistics always see two or more rows.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(last);
        }
    }
    batches
}

struct Prepared {
    batch: Batch,
    target: Tensor2,
}

fn prepare(model: &Model, samples: &[&Sample]) -> Result<Prepared> {
    let items: Vec<_> = samples.iter().map(|s| (&s.raw, s.clip.as_ref())).collect();
    let batch = model.batch(&items)?;
    let mut target = Vec::with_capacity(samples.len() * OUTPUTS);
    for s in samples {
        if s.target_qp.len() != OUTPUTS {
            return Err(Error::invalid(format!("{}: {} target QPs, expected {OUTPUTS}", s.id, s.target_qp.len())));
        }
        target.extend(s.target_qp.iter().map(|q| q / MAX_QP));
    }
    Ok(Prepared {
        batch,
        target: Tensor2::from_vec(samples.len(), OUTPUTS, target)?,
    })
}

/// Mean composite loss of a set of samples in eval mode.
pub fn evaluate_loss(model: &Model, samples: &[&Sample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(64) {
        let p = prepare(model, chunk)?;
        let out = model.net.infer(&p.batch, use_clip(model.mask))?;
        let curves: Vec<&RdCurve> = chunk.iter().map(|s| &s.curve).collect();
        let (loss, _) = tolerant_composite_loss(&out, &p.target, &curves, &model.config)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    net: &mut Network,
    opt: &mut Adam,
    batch: &Batch,
    target: &Tensor2,
    curves: &[&RdCurve],
    mask: GroupMask,
    lr: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    net.zero_grad();
    let clip = use_clip(mask);
    let out = net.forward(batch, clip, true, rng)?;
    let (loss, grad) = tolerant_composite_loss(&out, target, curves, cfg)?;
    net.backward(&grad, clip)?;
    let n_clip = net.clip.params().len();
    let mut params = net.params_mut();
    if !clip {
        // the embedder is not part of a masked model's graph
        params.drain(..n_clip);
    }
    opt.step(&mut params, lr, cfg);
    Ok(loss)
}

/// Joint training of embedder and head. The best-validation weights are
/// returned, rounded to checkpoint precision.
pub fn train(
    samples: &[Sample],
    mask: GroupMask,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Model> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let (train_idx, val_idx) = validation_split(samples.len(), cfg.val_fraction, cfg.seed);
    let train_raw: Vec<RawFeatures> = train_idx.iter().map(|&i| samples[i].raw.clone()).collect();
    let scaler = Scaler::fit_features(&train_raw)?;
    let mut model = Model::new(Network::new(cfg.seed, cfg.dropout), scaler, mask, cfg.clone());

    let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let prepared: Vec<Prepared> = train_set
        .iter()
        .map(|s| prepare(&model, std::slice::from_ref(s)))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new();
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.scheduler.clone());
    let mut best: Option<(f64, Network)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = sched.lr;
        let mut epoch_loss = 0.0;
        for b in make_batches(&order, cfg.batch_size) {
            let batch = Batch {
                base: stack(b.iter().map(|&i| &prepared[i].batch.base))?,
                tokens: stack(b.iter().map(|&i| &prepared[i].batch.tokens))?,
            };
            let target = stack(b.iter().map(|&i| &prepared[i].target))?;
            let curves: Vec<&RdCurve> = b.iter().map(|&i| &train_set[i].curve).collect();
            let loss = train_step(&mut model.net, &mut opt, &batch, &target, &curves, mask, lr, cfg, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, lr {lr}")),
                    e => e,
                })?;
            epoch_loss += loss * b.len() as f64;
        }
        let val_loss = evaluate_loss(&model, &val_set)?;
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            lr,
        };
        on_epoch(&log);
        model.history.push(log);
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.net.clone()));
        }
        sched.step(val_loss);
        if sched.exhausted {
            break;
        }
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    model.net.round_to_f32();
    Ok(model)
}

fn stack<'a>(parts: impl Iterator<Item = &'a Tensor2>) -> Result<Tensor2> {
    let mut data = vec![];
    let (mut rows, mut cols) = (0, None);
    for p in parts {
        if *cols.get_or_insert(p.cols) != p.cols {
            return Err(Error::internal("stacking tensors of different widths"));
        }
        rows += p.rows;
        data.extend_from_slice(&p.data);
    }
    Tensor2::from_vec(rows, cols.unwrap_or(0), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd::RdSample;
    use rand::Rng;

    pub(crate) fn raw(seed: u64) -> RawFeatures {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        RawFeatures {
            layout_version: features::LAYOUT_VERSION,
            frame_level: (0..features::FRAME_DIM).map(|_| r.gen::<f64>()).collect(),
            video_level: (0..features::VIDEO_DIM).map(|_| r.gen::<f64>()).collect(),
            meta: (0..features::META_DIM).map(|_| r.gen::<f64>()).collect(),
            complexity: (0..features::COMPLEXITY_DIM).map(|_| r.gen_range(0.0..50.0)).collect(),
        }
    }

    fn unit_scaler() -> Scaler {
        Scaler {
            min: vec![0.0; features::SCALED_DIM],
            max: vec![1.0; features::SCALED_DIM],
        }
    }

    #[test]
    fn parameter_audit() {
        let net = Network::new(0, 0.2);
        assert_eq!(net.head.param_count(), 244_040);
        assert_eq!(net.clip_param_count(), 796_176);
        assert_eq!(net.head.layer_shapes(), [(754, 256), (256, 128), (128, 64), (64, 8)]);
    }

    #[test]
    fn zero_head_predicts_midpoint() {
        let mut net = Network::new(1, 0.2);
        net.head = Head::zeroed(0.2);
        let model = Model::new(net, unit_scaler(), GroupMask::full(), TrainConfig::default());
        let zero = RawFeatures {
            frame_level: vec![0.0; features::FRAME_DIM],
            video_level: vec![0.0; features::VIDEO_DIM],
            meta: vec![0.0; features::META_DIM],
            complexity: vec![0.0; features::COMPLEXITY_DIM],
            ..raw(0)
        };
        let p = model.predict(&zero, Some(&ClipEmbedding::zeros())).unwrap();
        assert_eq!(p.qp, vec![127.5; 8]);
        assert_eq!(p.qp_norm, vec![0.5; 8]);
    }

    #[test]
    fn masked_clip_equals_zero_embedding() {
        let net = Network::new(2, 0.2);
        let emb = ClipEmbedding::new((0..4096).map(|i| (i as f32).cos()).collect()).unwrap();
        let masked = Model::new(net.clone(), unit_scaler(), GroupMask::full().without(FeatureGroup::Clip), TrainConfig::default());
        let a = masked.predict(&raw(5), Some(&emb)).unwrap();
        let b = masked.predict(&raw(5), None).unwrap();
        assert_eq!(a, b);

        let full = Model::new(net, unit_scaler(), GroupMask::full(), TrainConfig::default());
        assert!(full.predict(&raw(5), None).is_err());
    }

    #[test]
    fn eval_is_batch_size_invariant() {
        let model = Model::new(Network::new(3, 0.2), unit_scaler(), GroupMask::full(), TrainConfig::default());
        let raws: Vec<RawFeatures> = (0..5).map(raw).collect();
        let emb = ClipEmbedding::new((0..4096).map(|i| (i as f32 * 0.01).sin()).collect()).unwrap();
        let items: Vec<_> = raws.iter().map(|r| (r, Some(&emb))).collect();
        let all = model.predict_batch(&items).unwrap();
        for (i, r) in raws.iter().enumerate() {
            assert_eq!(model.predict(r, Some(&emb)).unwrap(), all[i]);
        }
    }

    #[test]
    fn batching_merges_singleton_tail() {
        let order: Vec<usize> = (0..65).collect();
        let b = make_batches(&order, 32);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 33]);
        assert_eq!(make_batches(&[4], 32), vec![vec![4]]);
    }

    #[test]
    fn validation_split_is_disjoint() {
        let (t, v) = validation_split(50, 0.1, 7);
        assert_eq!(v.len(), 5);
        assert_eq!(t.len(), 45);
        assert!(v.iter().all(|i| !t.contains(i)));
        let (t, v) = validation_split(3, 0.1, 7);
        assert_eq!(t, v);
    }

    fn sample(seed: u64) -> Sample {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let c = r.gen_range(80.0..180.0);
        let samples: Vec<RdSample> = (0..24)
            .map(|i| {
                let qp = (i * 11) as u16;
                RdSample::new(qp, 100.0 / (1.0 + ((qp as f64 - c) / 20.0).exp()))
            })
            .collect();
        let curve = RdCurve::fit(&samples).unwrap();
        let target_qp = curve.derive_targets(&DEFAULT_VMAF_TARGETS).qps();
        Sample {
            id: format!("s{seed}"),
            raw: raw(seed),
            clip: Some(ClipEmbedding::new((0..4096).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()),
            curve,
            target_qp,
        }
    }

    #[test]
    fn gradients_reach_the_embedder() {
        let s: Vec<Sample> = (0..4).map(sample).collect();
        let refs: Vec<&Sample> = s.iter().collect();
        let mut model = Model::new(Network::new(4, 0.2), unit_scaler(), GroupMask::full(), TrainConfig::default());
        let p = prepare(&model, &refs).unwrap();
        let curves: Vec<&RdCurve> = s.iter().map(|x| &x.curve).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        model.net.zero_grad();
        let out = model.net.forward(&p.batch, true, true, &mut rng).unwrap();
        let (_, g) = tolerant_composite_loss(&out, &p.target, &curves, &model.config).unwrap();
        model.net.backward(&g, true).unwrap();
        let norm: f64 = model.net.clip.params().iter().flat_map(|p| &p.grad).map(|g| g * g).sum();
        assert!(norm > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let s: Vec<Sample> = (0..12).map(sample).collect();
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let a = train(&s, GroupMask::full(), &cfg, |_| {}).unwrap();
        let b = train(&s, GroupMask::full(), &cfg, |_| {}).unwrap();
        for (x, y) in a.net.params().iter().zip(b.net.params()) {
            assert_eq!(x.value, y.value);
        }
        assert_eq!(a.history, b.history);
        assert!(train(&[], GroupMask::full(), &cfg, |_| {}).is_err());
    }
}
