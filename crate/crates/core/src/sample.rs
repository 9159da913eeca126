//! Benchmark items and their task-typed ground truth.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ocr_reflect_metrics::{BoundingBox, KeyValueSet, VqaMethod};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{encode_image_path, ImageError, ImageSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Recognition,
    Referring,
    Spotting,
    Extraction,
    Parsing,
    Calculation,
    Understanding,
    Reasoning,
    Counting,
    LongReading,
}

impl TaskType {
    /// Report column order.
    pub const ALL: [TaskType; 10] = [
        TaskType::Recognition,
        TaskType::Referring,
        TaskType::Spotting,
        TaskType::Extraction,
        TaskType::Parsing,
        TaskType::Calculation,
        TaskType::Understanding,
        TaskType::Reasoning,
        TaskType::Counting,
        TaskType::LongReading,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Recognition => "recognition",
            TaskType::Referring => "referring",
            TaskType::Spotting => "spotting",
            TaskType::Extraction => "extraction",
            TaskType::Parsing => "parsing",
            TaskType::Calculation => "calculation",
            TaskType::Understanding => "understanding",
            TaskType::Reasoning => "reasoning",
            TaskType::Counting => "counting",
            TaskType::LongReading => "long_reading",
        }
    }

    /// Column header used in reports.
    pub fn label(self) -> &'static str {
        match self {
            TaskType::Recognition => "Recognition",
            TaskType::Referring => "Referring",
            TaskType::Spotting => "Spotting",
            TaskType::Extraction => "Extraction",
            TaskType::Parsing => "Parsing",
            TaskType::Calculation => "Calculation",
            TaskType::Understanding => "Understanding",
            TaskType::Reasoning => "Reasoning",
            TaskType::Counting => "Counting",
            TaskType::LongReading => "Long Reading",
        }
    }

    /// Tasks whose gold is a list of acceptable answer strings.
    pub fn has_text_gold(self) -> bool {
        matches!(
            self,
            TaskType::Recognition
                | TaskType::Calculation
                | TaskType::Understanding
                | TaskType::Reasoning
                | TaskType::LongReading
        )
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    #[default]
    En,
    Zh,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One gold text instance for spotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Spot {
    pub bbox: BoundingBox,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Answers(Vec<String>),
    KeyValues(KeyValueSet),
    Boxes(Vec<BoundingBox>),
    Spots(Vec<Spot>),
    Table(String),
    Counts(Vec<u64>),
}

/// Per-sample override of the default scoring route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalDirective {
    Vqa(VqaMethod),
    /// Extraction answers are a JSON object.
    KvJson,
    /// Extraction answers are `key: value` lines.
    KvLines,
    /// Counting reads numbers from the start of the answer.
    CountFirst,
    /// Counting reads numbers from the end of the answer.
    CountLast,
}

impl FromStr for EvalDirective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "exact" => EvalDirective::Vqa(VqaMethod::Exact),
            "contains" => EvalDirective::Vqa(VqaMethod::Contains),
            "contains_either" => EvalDirective::Vqa(VqaMethod::ContainsEither),
            "anls" => EvalDirective::Vqa(VqaMethod::Anls(None)),
            "kv_json" => EvalDirective::KvJson,
            "kv_lines" => EvalDirective::KvLines,
            "count_first" => EvalDirective::CountFirst,
            "count_last" => EvalDirective::CountLast,
            other => match other.strip_prefix("anls:") {
                Some(t) => {
                    let tau: f64 = t.parse().map_err(|_| format!("bad ANLS threshold in {other:?}"))?;
                    if !(0.0..1.0).contains(&tau) {
                        return Err(format!("ANLS threshold {tau} outside [0, 1)"));
                    }
                    EvalDirective::Vqa(VqaMethod::Anls(Some(tau)))
                }
                None => return Err(format!("unknown eval directive {other:?}")),
            },
        })
    }
}

impl EvalDirective {
    fn applies_to(self, task: TaskType) -> bool {
        match self {
            EvalDirective::Vqa(_) => task.has_text_gold(),
            EvalDirective::KvJson | EvalDirective::KvLines => task == TaskType::Extraction,
            EvalDirective::CountFirst | EvalDirective::CountLast => task == TaskType::Counting,
        }
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// File path (relative to `base_dir`), `http(s)://` URL or `data:` URL.
    pub image_ref: String,
    pub question: String,
    pub task_type: TaskType,
    pub language: Language,
    pub gold: Gold,
    pub eval_directive: Option<EvalDirective>,
    pub base_dir: PathBuf,
}

impl Sample {
    pub fn image_path(&self) -> Option<PathBuf> {
        if is_url(&self.image_ref) {
            None
        } else {
            Some(self.base_dir.join(&self.image_ref))
        }
    }

    /// Loads and encodes the image, or passes URLs through.
    pub fn resolve_image(&self) -> Result<ImageSource, ImageError> {
        match self.image_path() {
            None => Ok(ImageSource::Url(self.image_ref.clone())),
            Some(p) => encode_image_path(&p).map(ImageSource::Inline),
        }
    }
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://") || s.starts_with("data:")
}

/// Line schema of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    pub question: String,
    pub task_type: TaskType,
    #[serde(default)]
    pub language: Language,
    pub gold: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<String>,
}

impl SampleRecord {
    pub fn into_sample(self, base_dir: &Path) -> Result<Sample, String> {
        if self.id.trim().is_empty() {
            return Err("\"id\" is empty".into());
        }
        if self.image.trim().is_empty() {
            return Err("\"image\" is empty".into());
        }
        if self.question.trim().is_empty() {
            return Err("\"question\" is empty".into());
        }
        let gold = parse_gold(self.task_type, &self.gold).map_err(|e| format!("gold: {e}"))?;
        let eval_directive = match self.eval.as_deref() {
            None => None,
            Some(d) => {
                let d: EvalDirective = d.parse()?;
                if !d.applies_to(self.task_type) {
                    return Err(format!("eval directive {:?} does not apply to {}", self.eval.unwrap(), self.task_type));
                }
                Some(d)
            }
        };
        Ok(Sample {
            id: self.id,
            image_ref: self.image,
            question: self.question,
            task_type: self.task_type,
            language: self.language,
            gold,
            eval_directive,
            base_dir: base_dir.to_path_buf(),
        })
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn text_list(v: &Value) -> Result<Vec<String>, String> {
    let list = match v {
        Value::Array(items) => items
            .iter()
            .map(|i| scalar_text(i).ok_or_else(|| format!("expected string, found {i}")))
            .collect::<Result<Vec<_>, _>>()?,
        other => vec![scalar_text(other).ok_or_else(|| format!("expected string or list, found {other}"))?],
    };
    if list.is_empty() {
        return Err("empty answer list".into());
    }
    Ok(list)
}

fn parse_box(v: &Value) -> Result<BoundingBox, String> {
    let nums: Vec<f64> = v
        .as_array()
        .ok_or_else(|| format!("expected [x_min, y_min, x_max, y_max], found {v}"))?
        .iter()
        .map(|n| n.as_f64().ok_or_else(|| format!("non-numeric coordinate {n}")))
        .collect::<Result<_, _>>()?;
    let [a, b, c, d] = nums[..] else {
        return Err(format!("box needs 4 coordinates, found {}", nums.len()));
    };
    BoundingBox::new(a, b, c, d).map_err(|e| e.to_string())
}

fn parse_gold(task: TaskType, v: &Value) -> Result<Gold, String> {
    match task {
        t if t.has_text_gold() => text_list(v).map(Gold::Answers),
        TaskType::Referring => {
            let items = v.as_array().ok_or("expected a box or a list of boxes")?;
            let boxes = if items.first().is_some_and(Value::is_number) {
                vec![parse_box(v)?]
            } else {
                items.iter().map(parse_box).collect::<Result<Vec<_>, _>>()?
            };
            if boxes.is_empty() {
                return Err("empty box list".into());
            }
            Ok(Gold::Boxes(boxes))
        }
        TaskType::Spotting => {
            let items = v.as_array().ok_or("expected a list of {bbox, text} objects")?;
            let spots = items
                .iter()
                .map(|i| {
                    let bbox = parse_box(i.get("bbox").ok_or("spot without \"bbox\"")?)?;
                    let text = i.get("text").and_then(scalar_text).ok_or("spot without \"text\"")?;
                    Ok(Spot { bbox, text })
                })
                .collect::<Result<Vec<_>, String>>()?;
            if spots.is_empty() {
                return Err("empty spot list".into());
            }
            Ok(Gold::Spots(spots))
        }
        TaskType::Extraction => {
            let obj = v.as_object().ok_or("expected an object of field -> value(s)")?;
            let mut kv = KeyValueSet::new();
            for (k, val) in obj {
                if k.trim().is_empty() {
                    return Err("empty field name".into());
                }
                for item in text_list(val)? {
                    kv.insert(k.clone(), item);
                }
            }
            Ok(Gold::KeyValues(kv))
        }
        TaskType::Parsing => match v {
            Value::String(s) if !s.trim().is_empty() => Ok(Gold::Table(s.clone())),
            _ => Err("expected table markup string".into()),
        },
        TaskType::Counting => {
            let items: Vec<&Value> = match v {
                Value::Array(items) => items.iter().collect(),
                other => vec![other],
            };
            let counts = items
                .iter()
                .map(|n| n.as_u64().ok_or_else(|| format!("expected non-negative integer, found {n}")))
                .collect::<Result<Vec<_>, _>>()?;
            if counts.is_empty() {
                return Err("empty count list".into());
            }
            Ok(Gold::Counts(counts))
        }
        _ => unreachable!("text tasks handled above"),
    }
}
