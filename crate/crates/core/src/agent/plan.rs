//! Pulling structured pieces out of free model text.

use std::sync::LazyLock;

use regex::Regex;

use crate::capability::PlanAction;

static STEP_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^step(?:\s*\d{1,3})?\s*:\s*(.*)$").unwrap());
static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{1,3}[.)]\s+(.*)$").unwrap());
static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[-*•]\s+(.*)$").unwrap());
static PLAN_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(plan|steps?|actions?|corrections?)\b.*:\s*$").unwrap());
static ANSWER_MARK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)answer\s*:").unwrap());

/// Strips markdown emphasis and surrounding whitespace.
fn clean(s: &str) -> &str {
    s.trim().trim_matches('*').trim()
}

/// Corrective actions in order of appearance, all unclassified.
///
/// Recognized forms: `STEP:` lines (optionally numbered or bulleted),
/// numbered items (`1.` / `2)`), and dash or star bullets under a header
/// that mentions a plan, steps, actions or corrections.
pub fn extract_plan(reflection: &str) -> Vec<PlanAction> {
    plan_lines(reflection).into_iter().map(|(_, a)| a).collect()
}

/// Like [`extract_plan`], paired with the line index each action came from.
pub(crate) fn plan_lines(reflection: &str) -> Vec<(usize, PlanAction)> {
    let mut actions = Vec::new();
    let mut in_section = false;
    for (idx, raw) in reflection.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let unbulleted = BULLET.captures(line).map_or(line, |c| c.get(1).unwrap().as_str());
        let unbulleted = unbulleted.trim_start_matches("**");
        if let Some(c) = STEP_LINE.captures(unbulleted) {
            push(&mut actions, idx, c.get(1).unwrap().as_str());
            continue;
        }
        if let Some(c) = NUMBERED.captures(line) {
            push(&mut actions, idx, c.get(1).unwrap().as_str());
            continue;
        }
        if let Some(c) = BULLET.captures(line) {
            if in_section {
                push(&mut actions, idx, c.get(1).unwrap().as_str());
            }
            continue;
        }
        in_section = PLAN_HEADER.is_match(clean(line.trim_start_matches('#')));
    }
    actions
}

fn push(actions: &mut Vec<(usize, PlanAction)>, line: usize, text: &str) {
    let text = clean(text);
    if !text.is_empty() {
        actions.push((line, PlanAction::unclassified(text)));
    }
}

/// Text after the last `ANSWER:` marker, or the whole response when the
/// marker is absent or followed by nothing.
pub fn extract_answer(response: &str) -> String {
    let whole = response.trim();
    match ANSWER_MARK.find_iter(response).last() {
        Some(m) => {
            let tail = clean(&response[m.end()..]);
            if tail.is_empty() {
                whole.to_string()
            } else {
                tail.to_string()
            }
        }
        None => whole.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        extract_plan(s).into_iter().map(|a| a.text).collect()
    }

    #[test]
    fn step_lines_trimmed() {
        assert_eq!(
            texts("STEP: compare digits\nSTEP:   add human proofreading  "),
            ["compare digits", "add human proofreading"]
        );
        assert_eq!(texts("- Step 2: recount rows\n**STEP:** check units"), ["recount rows", "check units"]);
    }

    #[test]
    fn no_markers_gives_empty_plan() {
        assert!(texts("no structured plan here").is_empty());
        assert!(texts("").is_empty());
    }

    #[test]
    fn numbered_duplicates_are_kept() {
        assert_eq!(
            texts("1. re-examine the table\n2. re-examine the table"),
            ["re-examine the table", "re-examine the table"]
        );
        assert_eq!(texts("1) a\n2) b"), ["a", "b"]);
    }

    #[test]
    fn bullets_only_inside_plan_section() {
        let text = "Observations:\n- the total looks wrong\n\nCorrective plan:\n- re-read the total\n- check the currency\nThat is all.\n- stray bullet";
        assert_eq!(texts(text), ["re-read the total", "check the currency"]);
        assert_eq!(texts("## Next steps:\n* zoom into the header"), ["zoom into the header"]);
    }

    #[test]
    fn every_action_is_unclassified() {
        assert!(extract_plan("STEP: a\n1. b")
            .iter()
            .all(|a| a.verdict == crate::capability::Verdict::Unclassified));
    }

    #[test]
    fn answer_after_last_marker() {
        assert_eq!(extract_answer("thinking...\nANSWER: 41\nwait\nANSWER: 42"), "42");
        assert_eq!(extract_answer("**Answer:** Hello World"), "Hello World");
        assert_eq!(extract_answer("  plain text  "), "plain text");
        assert_eq!(extract_answer("ANSWER:"), "ANSWER:");
    }
}
