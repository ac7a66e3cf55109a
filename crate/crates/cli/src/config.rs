//! Run configuration file.
//!
//! A TOML file with optional `[train]`, `[synth]` and `[extract]` tables.
//! Keys mirror the library structs; anything left out keeps its default,
//! and command-line flags override both.
//!
//! ```toml
//! [train]
//! learning_rate = 1e-3
//! max_epochs = 50
//! seed = 7
//!
//! [train.scheduler]
//! patience = 5
//!
//! [synth]
//! n_videos = 128
//!
//! [extract]
//! analysis_size = "native"
//! jobs = 4
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use qptune::nn::TrainConfig;
use qptune::synth::SynthSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// `native` or `WxH`.
    pub analysis_size: Option<String>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub extract: ExtractSection,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Short stable digest of an effective configuration, for run logs.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
