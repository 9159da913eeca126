//! Dataset files: one JSON object per line.
//!
//! ```text
//! {"id": "en-001", "image": "images/receipt.png", "question": "What is the total?",
//!  "task_type": "recognition", "language": "en", "gold": ["12.00"], "eval": "anls"}
//! ```
//!
//! `image` is resolved relative to the dataset file. `language` defaults to
//! `en`; `eval` is optional. The shape of `gold` depends on `task_type`:
//!
//! | task_type | gold |
//! |---|---|
//! | recognition, calculation, understanding, reasoning, long_reading | string or list of strings |
//! | referring | `[x_min, y_min, x_max, y_max]` or a list of them |
//! | spotting | list of `{"bbox": [..4], "text": "..."}` |
//! | extraction | object of field → string or list of strings |
//! | parsing | table markup (HTML or markdown) |
//! | counting | integer or list of integers |

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::sample::{Sample, SampleRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset has {} invalid line(s); first: {}", .0.len(), .0[0])]
    Format(Vec<LineDiagnostic>),
    #[error("duplicate sample id {id:?} on lines {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// sha256 of the file contents.
    pub hash: String,
    /// Lines skipped in non-strict mode.
    pub diagnostics: Vec<LineDiagnostic>,
    pub source: PathBuf,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Parses dataset text. Bad lines fail the load in strict mode and are
/// skipped with a diagnostic otherwise; duplicate ids always fail.
pub fn parse_dataset(text: &str, base_dir: &Path, strict: bool) -> Result<Dataset, DatasetError> {
    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<SampleRecord>(raw)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_sample(base_dir));
        match parsed {
            Ok(sample) => {
                if let Some(&first) = seen.get(&sample.id) {
                    return Err(DatasetError::DuplicateId { id: sample.id, first, second: line });
                }
                seen.insert(sample.id.clone(), line);
                samples.push(sample);
            }
            Err(message) => diagnostics.push(LineDiagnostic { line, message }),
        }
    }
    if strict && !diagnostics.is_empty() {
        return Err(DatasetError::Format(diagnostics));
    }
    for d in &diagnostics {
        tracing::warn!("skipping dataset {d}");
    }
    Ok(Dataset {
        samples,
        hash: hex::encode(Sha256::digest(text.as_bytes())),
        diagnostics,
        source: base_dir.to_path_buf(),
    })
}

pub fn load_dataset(path: &Path, strict: bool) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut ds = parse_dataset(&text, base, strict)?;
    ds.source = path.to_path_buf();
    Ok(ds)
}
