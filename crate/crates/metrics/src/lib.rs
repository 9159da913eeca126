//! Scoring functions for OCR and document-VQA answers.
//!
//! Every metric returns a [`MetricScore`] whose value lies in `[0, 1]`.
//! String metrics share one normalization routine ([`normalize`]) so that
//! casing, whitespace runs and trailing punctuation never decide a score.
//!
//! | task family        | metric                                   |
//! |--------------------|------------------------------------------|
//! | parsing            | [`teds`] over [`parse_table_markup`]     |
//! | referring/spotting | [`iou`]                                  |
//! | extraction         | [`extraction_f1`]                        |
//! | long reading       | [`long_reading_score`]                   |
//! | counting           | [`counting_score`]                       |
//! | basic VQA          | [`vqa_score`] (exact / contains / ANLS)  |

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

mod bbox;
mod counting;
mod edit;
mod extraction;
mod normalize;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
mod table;
mod text_gen;
mod vqa;

pub use bbox::{iou, BoundingBox};
pub use counting::counting_score;
pub use edit::{edit_similarity, levenshtein};
pub use extraction::{extraction_f1, KeyValueSet};
pub use normalize::{normalize, tokenize};
pub use table::{parse_table_markup, teds, tree_edit_distance, TableNode, TableTree};
pub use text_gen::{bleu, long_reading_score, meteor_lite, token_f1};
pub use vqa::{anls, vqa_score, VqaMethod, DEFAULT_ANLS_THRESHOLD};

/// Identity of the metric that produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Exact,
    Contains,
    Anls,
    Iou,
    SpottingF1,
    Teds,
    ExtractionF1,
    Bleu,
    MeteorLite,
    TokenF1,
    EditSimilarity,
    LongReading,
    Counting,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Exact => "exact",
            MetricKind::Contains => "contains",
            MetricKind::Anls => "anls",
            MetricKind::Iou => "iou",
            MetricKind::SpottingF1 => "spotting_f1",
            MetricKind::Teds => "teds",
            MetricKind::ExtractionF1 => "extraction_f1",
            MetricKind::Bleu => "bleu",
            MetricKind::MeteorLite => "meteor_lite",
            MetricKind::TokenF1 => "token_f1",
            MetricKind::EditSimilarity => "edit_similarity",
            MetricKind::LongReading => "long_reading",
            MetricKind::Counting => "counting",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A normalized score plus metric-specific diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub metric: MetricKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MetricScore {
    /// Builds a score. Values within floating-point noise of the unit
    /// interval are snapped onto it; anything further out is a bug.
    pub fn new(metric: MetricKind, value: f64) -> Self {
        debug_assert!(
            value > -1e-9 && value < 1.0 + 1e-9,
            "{metric} produced out-of-range value {value}"
        );
        let value = value.clamp(0.0, 1.0);
        Self {
            value,
            metric,
            diagnostics: BTreeMap::new(),
            note: None,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn zero(metric: MetricKind) -> Self {
        Self::new(metric, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("gold answer set is empty")]
    EmptyGold,
    #[error("ANLS threshold {0} outside [0, 1)")]
    InvalidThreshold(f64),
    #[error("count lists differ in length: predicted {pred}, gold {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("bounding box has min > max: {0:?}")]
    InvalidBox(BoundingBox),
    #[error("max n-gram order must be at least 1")]
    InvalidOrder,
}
