//! Feasibility classification of corrective plan actions.
//!
//! A reflection proposes a plan; some of its actions are things a vision
//! language model cannot do on its own (change pixels, involve a person,
//! call an outside tool). Those are rejected here so that refinement is
//! conditioned only on executable steps.
//!
//! Classification is lexical: a [`Taxonomy`] is an ordered list of
//! case-insensitive regular expressions, first match wins, and unmatched
//! actions default to feasible.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Built-in rule document, also shipped as `assets/default_taxonomy.tsv`.
pub const DEFAULT_TAXONOMY: &str = include_str!("../assets/default_taxonomy.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    TextOperation,
    ImageManipulation,
    HumanInLoop,
    ExternalTool,
    Unknown,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::TextOperation => "text_operation",
            Category::ImageManipulation => "image_manipulation",
            Category::HumanInLoop => "human_in_loop",
            Category::ExternalTool => "external_tool",
            Category::Unknown => "unknown",
        }
    }

    /// Verdict a rule with this category is allowed to carry.
    fn implied_verdict(self) -> Verdict {
        match self {
            Category::TextOperation | Category::Unknown => Verdict::Feasible,
            _ => Verdict::Infeasible,
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "text_operation" => Category::TextOperation,
            "image_manipulation" => Category::ImageManipulation,
            "human_in_loop" => Category::HumanInLoop,
            "external_tool" => Category::ExternalTool,
            "unknown" => Category::Unknown,
            other => return Err(format!("unknown category {other:?}")),
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corrective action extracted from a reflection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAction {
    pub text: String,
    pub verdict: Verdict,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_rule: Option<String>,
}

impl PlanAction {
    pub fn unclassified(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            verdict: Verdict::Unclassified,
            category: Category::Unknown,
            matched_rule: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub id: String,
    pub pattern: Regex,
    pub category: Category,
    pub verdict: Verdict,
}

/// Ordered rule set realizing the feasibility indicator. Immutable once
/// loaded.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    rules: Vec<Rule>,
    default_verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{source_name}:{line}: {message}")]
pub struct TaxonomyParseError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyLoadError {
    #[error("cannot read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] TaxonomyParseError),
}

impl Taxonomy {
    /// The embedded default rule set.
    pub fn builtin() -> Self {
        static BUILTIN: LazyLock<Taxonomy> =
            LazyLock::new(|| Taxonomy::parse("default", DEFAULT_TAXONOMY).expect("embedded taxonomy is valid"));
        BUILTIN.clone()
    }

    /// Parses a rule document (`verdict<TAB>category<TAB>pattern`, `#`
    /// comments, blank lines ignored).
    pub fn parse(source_name: &str, text: &str) -> Result<Self, TaxonomyParseError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| TaxonomyParseError {
                source_name: source_name.to_string(),
                line: line_no,
                message,
            };
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(3, '\t').collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields (verdict, category, pattern), found {}",
                    fields.len()
                )));
            }
            let verdict = match fields[0].trim() {
                "feasible" => Verdict::Feasible,
                "infeasible" => Verdict::Infeasible,
                other => return Err(err(format!("verdict must be feasible or infeasible, got {other:?}"))),
            };
            let category: Category = fields[1].trim().parse().map_err(err)?;
            if category.implied_verdict() != verdict {
                return Err(err(format!("category {category} cannot carry verdict {}", fields[0].trim())));
            }
            let pattern_src = fields[2].trim();
            if pattern_src.is_empty() {
                return Err(err("empty pattern".to_string()));
            }
            let pattern = Regex::new(&format!("(?i){pattern_src}"))
                .map_err(|e| err(format!("invalid pattern {pattern_src:?}: {e}")))?;
            rules.push(Rule {
                id: format!("{source_name}:{line_no}"),
                pattern,
                category,
                verdict,
            });
        }
        Ok(Self {
            rules,
            default_verdict: Verdict::Feasible,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyLoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyLoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self::parse(&name, &text)?)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn default_verdict(&self) -> Verdict {
        self.default_verdict
    }

    /// Content hash over the ordered rules, for run metadata.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rules {
            h.update(format!("{:?}\t{}\t{}\n", r.verdict, r.category.as_str(), r.pattern.as_str()));
        }
        hex::encode(h.finalize())
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Assigns verdict, category and the firing rule to `action`.
pub fn classify_action(action: &PlanAction, taxonomy: &Taxonomy) -> PlanAction {
    let hit = taxonomy.rules.iter().find(|r| r.pattern.is_match(&action.text));
    match hit {
        Some(rule) => PlanAction {
            text: action.text.clone(),
            verdict: rule.verdict,
            category: rule.category,
            matched_rule: Some(rule.id.clone()),
        },
        None => PlanAction {
            text: action.text.clone(),
            verdict: taxonomy.default_verdict,
            category: Category::Unknown,
            matched_rule: None,
        },
    }
}

/// Result of splitting a plan by feasibility.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilteredPlan {
    pub feasible: Vec<PlanAction>,
    pub rejected: Vec<PlanAction>,
}

/// Classifies every action and partitions the plan, preserving order.
/// Exact duplicate texts among feasible actions keep their first
/// occurrence only.
pub fn filter_plan(plan: &[PlanAction], taxonomy: &Taxonomy) -> FilteredPlan {
    let mut out = FilteredPlan::default();
    for action in plan {
        let classified = classify_action(action, taxonomy);
        match classified.verdict {
            Verdict::Infeasible => out.rejected.push(classified),
            _ => {
                if !out.feasible.iter().any(|a| a.text == classified.text) {
                    out.feasible.push(classified);
                }
            }
        }
    }
    out
}
