//! Sidecar file holding the per-frame semantic embeddings of a clip.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LVPE"
//! 4       4     version (u32 LE, = 1)
//! 8       4     n_frames (u32 LE, = 8)
//! 12      4     dim (u32 LE, = 512)
//! 16      ...   n_frames x dim f32 LE, row-major
//! ```

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LVPE";
pub const VERSION: u32 = 1;
pub const TOKENS: usize = 8;
pub const TOKEN_DIM: usize = 512;
const HEADER_LEN: usize = 16;

/// 8 x 512 frame embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbedding {
    values: Vec<f32>,
}

impl ClipEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != TOKENS * TOKEN_DIM {
            return Err(Error::invalid(format!(
                "embedding has {} values, expected {}",
                values.len(),
                TOKENS * TOKEN_DIM
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding at ({}, {})",
                i / TOKEN_DIM,
                i % TOKEN_DIM
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; TOKENS * TOKEN_DIM],
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * TOKEN_DIM..(i + 1) * TOKEN_DIM]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, TOKENS as u32, TOKEN_DIM as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        validate_bytes(bytes).map_err(|v| Error::Format(v.to_string()))?;
        let values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// First contract violation found by [`validate_bytes`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Magic,
    Version(u32),
    Frames(u32),
    Dim(u32),
    PayloadLength { expected: usize, found: usize },
    NonFinite { row: usize, col: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Magic => write!(f, "bad magic"),
            Violation::Version(v) => write!(f, "unsupported version {v}"),
            Violation::Frames(n) => write!(f, "n_frames {n}, expected {TOKENS}"),
            Violation::Dim(d) => write!(f, "dim {d}, expected {TOKEN_DIM}"),
            Violation::PayloadLength { expected, found } => {
                write!(f, "payload length {found} bytes, expected {expected}")
            }
            Violation::NonFinite { row, col } => write!(f, "non-finite at ({row}, {col})"),
        }
    }
}

/// Check magic, version, dimensions, payload length and finiteness.
pub fn validate_bytes(bytes: &[u8]) -> std::result::Result<(), Violation> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Violation::Magic);
    }
    let word = |i: usize| -> Option<u32> {
        bytes
            .get(4 + 4 * i..8 + 4 * i)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let short = || Violation::PayloadLength {
        expected: TOKENS * TOKEN_DIM * 4,
        found: 0,
    };
    let version = word(0).ok_or_else(short)?;
    if version != VERSION {
        return Err(Violation::Version(version));
    }
    let n = word(1).ok_or_else(short)?;
    if n as usize != TOKENS {
        return Err(Violation::Frames(n));
    }
    let d = word(2).ok_or_else(short)?;
    if d as usize != TOKEN_DIM {
        return Err(Violation::Dim(d));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = TOKENS * TOKEN_DIM * 4;
    if payload.len() != expected {
        return Err(Violation::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    for (i, c) in payload.chunks_exact(4).enumerate() {
        if !f32::from_le_bytes([c[0], c[1], c[2], c[3]]).is_finite() {
            return Err(Violation::NonFinite {
                row: i / TOKEN_DIM,
                col: i % TOKEN_DIM,
            });
        }
    }
    Ok(())
}
