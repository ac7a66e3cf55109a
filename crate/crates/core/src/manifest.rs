//! JSONL dataset manifest, one video per line.
//!
//! ```text
//! {"id": "v0001", "y4m_path": "v0001.y4m", "bitstream_json_path": "v0001.json",
//!  "clip_embed_path": "v0001.lvpe", "rd_samples": [{"qp": 0, "vmaf": 99.8}, ...],
//!  "split": "train"}
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rd::{RdCurve, RdSample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub y4m_path: PathBuf,
    pub bitstream_json_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_embed_path: Option<PathBuf>,
    pub rd_samples: Vec<RdSample>,
    pub split: Split,
}

impl Entry {
    pub fn curve(&self) -> Result<RdCurve> {
        RdCurve::fit(&self.rd_samples).map_err(|e| Error::invalid(format!("{}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = vec![];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: Entry = serde_json::from_str(line).map_err(|e| Error::Schema {
                path: format!("line {}", i + 1),
                msg: e.to_string(),
            })?;
            entries.push(e);
        }
        let m = Self {
            entries,
            base_dir: base_dir.to_path_buf(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Ids must be non-empty, file-name safe and unique, an id may not
    /// appear in both splits, and every entry's RD samples must fit a curve.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for e in &self.entries {
            let safe = |c: char| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-');
            if e.id.is_empty() || !e.id.chars().all(safe) || e.id.starts_with('.') {
                return Err(Error::invalid(format!(
                    "id {:?} must be non-empty [A-Za-z0-9._-] (ids name output files)",
                    e.id
                )));
            }
            if let Some(&prev) = seen.get(e.id.as_str()) {
                if prev != e.split {
                    return Err(Error::invalid(format!(
                        "split leakage: {} appears in both train and test",
                        e.id
                    )));
                }
                return Err(Error::invalid(format!("duplicate id {}", e.id)));
            }
            seen.insert(&e.id, e.split);
            e.curve()?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, split: &str) -> String {
        format!(
            r#"{{"id":"{id}","y4m_path":"{id}.y4m","bitstream_json_path":"{id}.json","clip_embed_path":"{id}.lvpe","rd_samples":[{{"qp":0,"vmaf":99}},{{"qp":255,"vmaf":10}}],"split":"{split}"}}"#
        )
    }

    #[test]
    fn parses_and_roundtrips() {
        let text = [line("a", "train"), line("b", "test")].join("\n");
        let m = Manifest::parse(&text, Path::new("/data")).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.split(Split::Test).count(), 1);
        assert_eq!(m.resolve(&m.entries[0].y4m_path), PathBuf::from("/data/a.y4m"));
        let again = Manifest::parse(&m.to_jsonl().unwrap(), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn leakage_is_rejected() {
        let text = [line("a", "train"), line("a", "test")].join("\n");
        let err = Manifest::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("leakage"), "{err}");
        let text = [line("a", "train"), line("a", "train")].join("\n");
        assert!(Manifest::parse(&text, Path::new(".")).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn bad_lines_name_the_line() {
        let text = format!("{}\n{{\"id\": 3}}", line("a", "train"));
        let err = Manifest::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let bad_rd = line("a", "train").replace(r#""qp":255"#, r#""qp":0"#);
        assert!(Manifest::parse(&bad_rd, Path::new(".")).is_err());
    }
}
