//! Binary checkpoint for a trained [`Model`].
//!
//! ```text
//! offset   size  field
//! 0        4     magic "LVPN"
//! 4        4     format_version (u32 LE)
//! 8        4     header length H (u32 LE)
//! 12       H     JSON header (UTF-8)
//! 12+H     4*N   parameter blob, f32 LE
//! 12+H+4N  4     CRC-32 (IEEE) of the blob, u32 LE
//! ```
//!
//! Blob order: embedder (query W, b; key W, b; value W, b; projection W, b),
//! then the head (dense1 W, b; bn1 gamma, beta; dense2 W, b; bn2 gamma,
//! beta; dense3 W, b; bn3 gamma, beta; skip3 W; dense4 W, b), then the
//! running mean and variance of bn1, bn2 and bn3. Dense weights are stored
//! inputs x outputs, row-major. The header lists every tensor with its
//! length.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{GroupMask, Scaler, LAYOUT_VERSION};
use crate::model::{EpochLog, Model, Network, HEAD_WIDTHS};
use crate::nn::TrainConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LVPN";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub head_widths: Vec<usize>,
    pub clip_tokens: usize,
    pub clip_token_dim: usize,
    pub clip_out: usize,
}

impl Architecture {
    pub fn current() -> Self {
        Self {
            head_widths: HEAD_WIDTHS.to_vec(),
            clip_tokens: crate::embedding::TOKENS,
            clip_token_dim: crate::embedding::TOKEN_DIM,
            clip_out: crate::features::CLIP_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub architecture: Architecture,
    pub layout_version: u32,
    pub mask: String,
    pub vmaf_targets: Vec<f64>,
    pub train_config: TrainConfig,
    pub scaler: Scaler,
    pub param_count: usize,
    pub tensors: Vec<TensorEntry>,
    pub history: Vec<EpochLog>,
}

const PARAM_NAMES: [&str; 23] = [
    "clip.query.weight",
    "clip.query.bias",
    "clip.key.weight",
    "clip.key.bias",
    "clip.value.weight",
    "clip.value.bias",
    "clip.proj.weight",
    "clip.proj.bias",
    "head.dense1.weight",
    "head.dense1.bias",
    "head.bn1.gamma",
    "head.bn1.beta",
    "head.dense2.weight",
    "head.dense2.bias",
    "head.bn2.gamma",
    "head.bn2.beta",
    "head.dense3.weight",
    "head.dense3.bias",
    "head.bn3.gamma",
    "head.bn3.beta",
    "head.skip3.weight",
    "head.dense4.weight",
    "head.dense4.bias",
];

/// Every stored tensor in blob order.
fn tensors(net: &Network) -> Vec<(String, &[f64])> {
    let mut out: Vec<(String, &[f64])> = PARAM_NAMES
        .iter()
        .zip(net.params())
        .map(|(n, p)| (n.to_string(), p.value.as_slice()))
        .collect();
    for (i, bn) in net.head.batchnorms().iter().enumerate() {
        out.push((format!("head.bn{}.running_mean", i + 1), &bn.running_mean));
        out.push((format!("head.bn{}.running_var", i + 1), &bn.running_var));
    }
    out
}

/// Overwrite every stored tensor, in blob order, from `values`.
fn assign(net: &mut Network, values: &mut impl Iterator<Item = f64>) {
    let mut fill = |dst: &mut Vec<f64>| dst.iter_mut().for_each(|v| *v = values.next().unwrap_or_default());
    for p in net.params_mut() {
        fill(&mut p.value);
    }
    for bn in net.head.batchnorms_mut() {
        fill(&mut bn.running_mean);
        fill(&mut bn.running_var);
    }
}

fn exact_f32(v: f64) -> Option<f32> {
    let f = v as f32;
    (f64::from(f) == v).then_some(f)
}

/// Serialize a model. Values that f32 cannot hold exactly are refused so
/// that a reload is bitwise identical.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let list = tensors(&model.net);
    let mut blob = Vec::new();
    for (name, values) in &list {
        for &v in *values {
            let f = exact_f32(v).ok_or_else(|| {
                Error::Format(format!("{name}: value {v} is not representable as f32; round the model first"))
            })?;
            blob.extend_from_slice(&f.to_le_bytes());
        }
    }
    let header = Header {
        architecture: Architecture::current(),
        layout_version: LAYOUT_VERSION,
        mask: model.mask.to_string(),
        vmaf_targets: model.vmaf_targets.clone(),
        train_config: model.config.clone(),
        scaler: model.scaler.clone(),
        param_count: model.net.params().iter().map(|p| p.len()).sum(),
        tensors: list
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                len: v.len(),
            })
            .collect(),
        history: model.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + blob.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    out.extend_from_slice(&crc32fast::hash(&blob).to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parse only the JSON header.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    Ok(parse_prefix(bytes)?.0)
}

fn parse_prefix(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32_at(bytes, 4).ok_or_else(|| Error::Format("truncated checkpoint prefix".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            what: "checkpoint format",
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32_at(bytes, 8).ok_or_else(|| Error::Format("truncated checkpoint prefix".into()))? as usize;
    let json = bytes
        .get(PREFIX_LEN..PREFIX_LEN + hlen)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.layout_version != LAYOUT_VERSION {
        return Err(Error::Version {
            what: "feature layout",
            found: header.layout_version,
            expected: LAYOUT_VERSION,
        });
    }
    if header.architecture != Architecture::current() {
        return Err(Error::Format(format!(
            "checkpoint architecture {:?} differs from {:?}",
            header.architecture,
            Architecture::current()
        )));
    }
    Ok((header, PREFIX_LEN + hlen))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (header, blob_start) = parse_prefix(bytes)?;
    let mut net = Network::new(0, header.train_config.dropout);
    let expected: Vec<(String, usize)> = tensors(&net).into_iter().map(|(n, v)| (n, v.len())).collect();
    let listed: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
    if expected != listed {
        return Err(Error::Format("checkpoint tensor list does not match the architecture".into()));
    }
    let n: usize = expected.iter().map(|(_, l)| l).sum();
    let blob_end = blob_start + 4 * n;
    if bytes.len() != blob_end + 4 {
        return Err(Error::Format(format!(
            "checkpoint is {} bytes, expected {}",
            bytes.len(),
            blob_end + 4
        )));
    }
    let blob = &bytes[blob_start..blob_end];
    let stored = u32_at(bytes, blob_end).unwrap_or_default();
    if crc32fast::hash(blob) != stored {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    assign(&mut net, &mut values);
    if let Some(i) = net.params().iter().flat_map(|p| &p.value).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("checkpoint parameter {i}")));
    }
    let mask: GroupMask = header.mask.parse()?;
    Ok(Model {
        net,
        scaler: header.scaler,
        mask,
        vmaf_targets: header.vmaf_targets,
        config: header.train_config,
        history: header.history,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}
