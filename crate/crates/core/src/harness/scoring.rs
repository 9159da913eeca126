//! Turns free-text answers into typed operands and routes them to metrics.

use std::sync::LazyLock;

use ocr_reflect_metrics::{
    counting_score, extraction_f1, iou, long_reading_score, normalize, parse_table_markup, teds, vqa_score,
    BoundingBox, KeyValueSet, MetricKind, MetricScore,
};
use regex::Regex;
use serde_json::Value;

use crate::sample::{EvalDirective, Gold, Sample, Spot, TaskType};

/// Minimum IoU for a predicted text instance to match a gold one.
pub const SPOTTING_IOU_GATE: f64 = 0.5;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:,\d{3})*(?:\.\d+)?").unwrap());
static COUNT_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\d+(?:,\d{3})*(?:\.\d+)?|\b(?:zero|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|thirteen|fourteen|fifteen|sixteen|seventeen|eighteen|nineteen|twenty|thirty|forty|fifty|sixty|seventy|eighty|ninety|hundred)\b")
        .unwrap()
});
static FENCED_JSON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```(?:json)?\s*(.*?)```").unwrap());

/// Scores `answer` against the sample's gold. Never fails: unparseable
/// answers score zero with a note.
pub fn score_answer(sample: &Sample, answer: &str, anls_threshold: f64) -> MetricScore {
    match (&sample.gold, sample.task_type) {
        (Gold::Answers(gold), TaskType::LongReading) => match sample.eval_directive {
            Some(EvalDirective::Vqa(m)) => vqa(answer, gold, Some(m), anls_threshold),
            _ => gold
                .iter()
                .map(|g| long_reading_score(answer, g))
                .max_by(|a, b| a.value.total_cmp(&b.value))
                .expect("gold answers are nonempty"),
        },
        (Gold::Answers(gold), _) => {
            let method = match sample.eval_directive {
                Some(EvalDirective::Vqa(m)) => Some(m),
                _ => None,
            };
            vqa(answer, gold, method, anls_threshold)
        }
        (Gold::Table(markup), _) => teds(&parse_table_markup(answer), &parse_table_markup(markup)),
        (Gold::KeyValues(gold), _) => {
            let pred = parse_key_values(answer, sample.eval_directive);
            extraction_f1(&pred, gold)
        }
        (Gold::Boxes(gold), _) => match parse_box(answer) {
            Some(pred) => gold
                .iter()
                .map(|g| iou(&pred, g))
                .max_by(|a, b| a.value.total_cmp(&b.value))
                .expect("gold boxes are nonempty"),
            None => MetricScore::zero(MetricKind::Iou).with_note("no bounding box found in answer"),
        },
        (Gold::Spots(gold), _) => spotting_f1(&parse_spots(answer), gold),
        (Gold::Counts(gold), _) => {
            let from_end = sample.eval_directive == Some(EvalDirective::CountLast);
            let pred = extract_counts(answer, gold.len(), from_end);
            counting_score(&pred, gold).expect("lengths match and gold is nonempty")
        }
    }
}

fn vqa(answer: &str, gold: &[String], method: Option<ocr_reflect_metrics::VqaMethod>, tau: f64) -> MetricScore {
    vqa_score(answer, gold, method, tau).unwrap_or_else(|e| MetricScore::zero(MetricKind::Exact).with_note(e.to_string()))
}

fn json_candidates(answer: &str) -> Vec<&str> {
    let mut out: Vec<&str> = FENCED_JSON.captures_iter(answer).map(|c| c.get(1).unwrap().as_str()).collect();
    out.push(answer.trim());
    if let (Some(s), Some(e)) = (answer.find('{'), answer.rfind('}')) {
        if s < e {
            out.push(&answer[s..=e]);
        }
    }
    out
}

fn json_scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn kv_from_json(answer: &str) -> Option<KeyValueSet> {
    json_candidates(answer).into_iter().find_map(|c| {
        let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(c) else {
            return None;
        };
        let mut kv = KeyValueSet::new();
        for (k, v) in obj {
            match &v {
                Value::Array(items) => items.iter().filter_map(json_scalar).for_each(|s| kv.insert(k.clone(), s)),
                other => {
                    if let Some(s) = json_scalar(other) {
                        kv.insert(k.clone(), s);
                    }
                }
            }
        }
        Some(kv)
    })
}

fn kv_from_lines(answer: &str) -> KeyValueSet {
    let mut kv = KeyValueSet::new();
    for line in answer.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
        let split = line.split_once(':').or_else(|| line.split_once('：'));
        if let Some((k, v)) = split {
            let (k, v) = (k.trim().trim_matches('"'), v.trim().trim_end_matches(',').trim().trim_matches('"'));
            if !k.is_empty() && !v.is_empty() {
                kv.insert(k, v);
            }
        }
    }
    kv
}

/// Key-value pairs from a JSON object (bare or fenced) or `key: value`
/// lines.
pub fn parse_key_values(answer: &str, directive: Option<EvalDirective>) -> KeyValueSet {
    match directive {
        Some(EvalDirective::KvJson) => kv_from_json(answer).unwrap_or_default(),
        Some(EvalDirective::KvLines) => kv_from_lines(answer),
        _ => kv_from_json(answer).unwrap_or_else(|| kv_from_lines(answer)),
    }
}

fn numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().replace(',', "").parse().ok())
        .collect()
}

/// The first four numbers of the answer, read as two corners.
pub fn parse_box(answer: &str) -> Option<BoundingBox> {
    match numbers(answer)[..] {
        [x0, y0, x1, y1, ..] => Some(BoundingBox::from_corners(x0, y0, x1, y1)),
        _ => None,
    }
}

/// Predicted text instances: a JSON list of `{bbox, text}` objects, or
/// one instance per line as four coordinates followed by the text.
pub fn parse_spots(answer: &str) -> Vec<Spot> {
    for c in json_candidates(answer).into_iter().chain(bracketed_list(answer)) {
        if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(c) {
            let spots: Vec<Spot> = items
                .iter()
                .filter_map(|i| {
                    let b: Vec<f64> = i.get("bbox")?.as_array()?.iter().filter_map(Value::as_f64).collect();
                    let [x0, y0, x1, y1] = b[..] else { return None };
                    let text = json_scalar(i.get("text")?)?;
                    Some(Spot { bbox: BoundingBox::from_corners(x0, y0, x1, y1), text })
                })
                .collect();
            return spots;
        }
    }
    answer
        .lines()
        .filter_map(|line| {
            let found: Vec<_> = NUMBER.find_iter(line).take(4).collect();
            if found.len() < 4 {
                return None;
            }
            let v: Vec<f64> = found.iter().filter_map(|m| m.as_str().replace(',', "").parse().ok()).collect();
            let text = line[found[3].end()..].trim().trim_matches(|c: char| c == ')' || c == ']' || c == ':' || c.is_whitespace());
            let text = text.trim_matches('"');
            if v.len() < 4 || text.is_empty() {
                return None;
            }
            Some(Spot { bbox: BoundingBox::from_corners(v[0], v[1], v[2], v[3]), text: text.to_string() })
        })
        .collect()
}

fn bracketed_list(answer: &str) -> Option<&str> {
    let (s, e) = (answer.find('[')?, answer.rfind(']')?);
    (s < e).then(|| &answer[s..=e])
}

/// F1 over text instances. A prediction matches an unmatched gold
/// instance when IoU ≥ 0.5 and normalized texts are equal; predictions
/// are matched greedily in order, each to its highest-IoU candidate.
pub fn spotting_f1(pred: &[Spot], gold: &[Spot]) -> MetricScore {
    let mut used = vec![false; gold.len()];
    let mut tp = 0usize;
    for p in pred {
        let text = normalize(&p.text);
        let best = gold
            .iter()
            .enumerate()
            .filter(|(j, g)| !used[*j] && normalize(&g.text) == text)
            .map(|(j, g)| (j, iou(&p.bbox, &g.bbox).value))
            .filter(|&(_, v)| v >= SPOTTING_IOU_GATE)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
    }
    let denom = pred.len() + gold.len();
    let value = if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
    MetricScore::new(MetricKind::SpottingF1, value)
        .with("true_positives", tp as f64)
        .with("predicted", pred.len() as f64)
        .with("gold", gold.len() as f64)
}

fn word_value(w: &str) -> u64 {
    match w.to_ascii_lowercase().as_str() {
        "zero" => 0,
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        "eleven" => 11,
        "twelve" => 12,
        "thirteen" => 13,
        "fourteen" => 14,
        "fifteen" => 15,
        "sixteen" => 16,
        "seventeen" => 17,
        "eighteen" => 18,
        "nineteen" => 19,
        "twenty" => 20,
        "thirty" => 30,
        "forty" => 40,
        "fifty" => 50,
        "sixty" => 60,
        "seventy" => 70,
        "eighty" => 80,
        "ninety" => 90,
        "hundred" => 100,
        _ => unreachable!("regex only matches listed words"),
    }
}

/// `n` counts read from the answer (from its start, or its end with
/// `from_end`), padded with zeros when the answer has fewer numbers.
pub fn extract_counts(answer: &str, n: usize, from_end: bool) -> Vec<u64> {
    let found: Vec<u64> = COUNT_TOKEN
        .find_iter(answer)
        .map(|m| {
            let s = m.as_str();
            if s.starts_with(|c: char| c.is_ascii_digit()) {
                s.replace(',', "").parse::<f64>().map_or(0, |v| v.round() as u64)
            } else {
                word_value(s)
            }
        })
        .collect();
    let mut picked: Vec<u64> = if from_end {
        found[found.len().saturating_sub(n)..].to_vec()
    } else {
        found.into_iter().take(n).collect()
    };
    picked.resize(n, 0);
    picked
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use ocr_reflect_metrics::VqaMethod;

    use super::*;
    use crate::sample::Language;

    fn sample(task: TaskType, gold: Gold) -> Sample {
        Sample {
            id: "s".into(),
            image_ref: "a.png".into(),
            question: "q".into(),
            task_type: task,
            language: Language::En,
            gold,
            eval_directive: None,
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn recognition_identity() {
        let s = sample(TaskType::Recognition, Gold::Answers(vec!["Hello World".into()]));
        assert_eq!(score_answer(&s, "hello world.", 0.5).value, 1.0);
        assert_eq!(score_answer(&s, "goodbye", 0.5).value, 0.0);
    }

    #[test]
    fn parsing_identity() {
        let markup = "<table><tr><td>a</td><td>b</td></tr></table>";
        let s = sample(TaskType::Parsing, Gold::Table(markup.into()));
        assert_eq!(score_answer(&s, markup, 0.5).value, 1.0);
    }

    #[test]
    fn counting_from_sentence() {
        let s = sample(TaskType::Counting, Gold::Counts(vec![10]));
        let v = score_answer(&s, "there are 8", 0.5).value;
        assert!((v - 0.8).abs() < 1e-12);
        assert_eq!(extract_counts("Seven apples and 1,200 pears", 2, false), [7, 1200]);
        assert_eq!(extract_counts("nothing", 2, false), [0, 0]);
        assert_eq!(extract_counts("1 2 3", 2, true), [2, 3]);
    }

    #[test]
    fn extraction_json_and_lines() {
        let mut gold = KeyValueSet::new();
        gold.insert("total", "12.00");
        gold.insert("date", "2024-01-02");
        let s = sample(TaskType::Extraction, Gold::KeyValues(gold));
        let fenced = "Here:\n```json\n{\"total\": \"12.00\", \"date\": \"2024-01-02\"}\n```";
        assert_eq!(score_answer(&s, fenced, 0.5).value, 1.0);
        assert_eq!(score_answer(&s, "total: 12.00\ndate: 2024-01-02", 0.5).value, 1.0);
        assert_eq!(score_answer(&s, "total: 12.00", 0.5).value, 2.0 / 3.0);
    }

    #[test]
    fn referring_uses_first_four_numbers() {
        let s = sample(TaskType::Referring, Gold::Boxes(vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()]));
        let v = score_answer(&s, "The box is [5, 0, 15, 10].", 0.5).value;
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(score_answer(&s, "somewhere on the left", 0.5).value, 0.0);
    }

    #[test]
    fn spotting_gated_by_iou_and_text() {
        let gold = vec![
            Spot { bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), text: "STOP".into() },
            Spot { bbox: BoundingBox::new(20.0, 0.0, 30.0, 10.0).unwrap(), text: "GO".into() },
        ];
        let s = sample(TaskType::Spotting, Gold::Spots(gold));
        assert_eq!(score_answer(&s, "0,0,10,10 stop\n20,0,30,10 go", 0.5).value, 1.0);
        // right text, box too far off
        assert_eq!(score_answer(&s, "0,0,10,10 stop\n26,0,36,10 go", 0.5).value, 0.5);
        let json = r#"[{"bbox":[0,0,10,10],"text":"STOP"}]"#;
        assert!((score_answer(&s, json, 0.5).value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn directive_overrides_route() {
        let mut s = sample(TaskType::Understanding, Gold::Answers(vec!["blue".into()]));
        assert_eq!(score_answer(&s, "it is blue", 0.5).value, 0.0);
        s.eval_directive = Some(EvalDirective::Vqa(VqaMethod::Contains));
        assert_eq!(score_answer(&s, "it is blue", 0.5).value, 1.0);
    }

    #[test]
    fn long_reading_takes_best_gold() {
        let s = sample(
            TaskType::LongReading,
            Gold::Answers(vec!["unrelated words entirely".into(), "the quick brown fox".into()]),
        );
        let best = score_answer(&s, "the quick brown fox", 0.5);
        assert_eq!(best.metric, MetricKind::LongReading);
        assert!(best.value > 0.9);
    }
}
