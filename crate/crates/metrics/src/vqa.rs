use crate::edit::levenshtein;
use crate::normalize::normalize;
use crate::{MetricError, MetricKind, MetricScore};

pub const DEFAULT_ANLS_THRESHOLD: f64 = 0.5;

/// Gold answers with at most this many whitespace tokens are scored by
/// exact match when no directive is given; longer ones by ANLS.
const EXACT_ROUTE_MAX_TOKENS: usize = 3;

/// Explicit scoring method for a basic-VQA answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VqaMethod {
    Exact,
    /// Normalized gold must occur inside the normalized prediction.
    Contains,
    /// Either string may contain the other (enumerative answers).
    ContainsEither,
    /// ANLS with an optional threshold override.
    Anls(Option<f64>),
}

fn check_tau(tau: f64) -> Result<(), MetricError> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(MetricError::InvalidThreshold(tau))
    }
}

/// Similarity and raw distance between two already-normalized strings.
fn normalized_similarity(pred: &str, gold: &str) -> (f64, usize) {
    let dist = levenshtein(pred, gold);
    let max_len = pred.chars().count().max(gold.chars().count());
    if max_len == 0 {
        return (1.0, 0);
    }
    (1.0 - dist as f64 / max_len as f64, dist)
}

/// Average Normalized Levenshtein Similarity. Each gold answer is
/// thresholded at `tau` before taking the maximum.
pub fn anls<S: AsRef<str>>(pred: &str, gold: &[S], tau: f64) -> Result<MetricScore, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    check_tau(tau)?;
    let pred = normalize(pred);
    let mut best = (0.0_f64, f64::NAN, usize::MAX);
    for g in gold {
        let (sim, dist) = normalized_similarity(&pred, &normalize(g.as_ref()));
        let thresholded = if sim >= tau { sim } else { 0.0 };
        if best.1.is_nan() || thresholded > best.0 || (thresholded == best.0 && sim > best.1) {
            best = (thresholded, sim, dist);
        }
    }
    Ok(MetricScore::new(MetricKind::Anls, best.0)
        .with("similarity", best.1)
        .with("edit_distance", best.2 as f64)
        .with("tau", tau))
}

fn exact(pred: &str, gold: &str) -> f64 {
    f64::from(u8::from(pred == gold))
}

fn contains(pred: &str, gold: &str, either: bool) -> f64 {
    let hit = if gold.is_empty() || pred.is_empty() {
        gold.is_empty() && pred.is_empty()
    } else {
        pred.contains(gold) || (either && gold.contains(pred))
    };
    f64::from(u8::from(hit))
}

/// Basic VQA scoring. An explicit `method` always wins; otherwise each gold
/// answer is routed by its length (short → exact, long → ANLS) and the best
/// gold decides the score.
pub fn vqa_score<S: AsRef<str>>(
    pred: &str,
    gold: &[S],
    method: Option<VqaMethod>,
    tau: f64,
) -> Result<MetricScore, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    check_tau(tau)?;

    if let Some(VqaMethod::Anls(t)) = method {
        return anls(pred, gold, t.unwrap_or(tau));
    }

    let pred_norm = normalize(pred);
    let mut best: Option<MetricScore> = None;
    for g in gold {
        let gold_norm = normalize(g.as_ref());
        let score = match method {
            Some(VqaMethod::Exact) => MetricScore::new(MetricKind::Exact, exact(&pred_norm, &gold_norm)),
            Some(VqaMethod::Contains) => {
                MetricScore::new(MetricKind::Contains, contains(&pred_norm, &gold_norm, false))
            }
            Some(VqaMethod::ContainsEither) => {
                MetricScore::new(MetricKind::Contains, contains(&pred_norm, &gold_norm, true))
            }
            Some(VqaMethod::Anls(_)) => unreachable!("handled above"),
            None => {
                if gold_norm.split_whitespace().count() <= EXACT_ROUTE_MAX_TOKENS {
                    MetricScore::new(MetricKind::Exact, exact(&pred_norm, &gold_norm))
                } else {
                    anls(&pred_norm, &[gold_norm.as_str()], tau)?
                }
            }
        };
        if best.as_ref().is_none_or(|b| score.value > b.value) {
            best = Some(score);
        }
    }
    Ok(best.expect("gold is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anls_identity_after_normalization() {
        let s = anls("Hello  World.", &["hello world"], 0.5).unwrap();
        assert_eq!(s.value, 1.0);
    }

    #[test]
    fn anls_threshold_cuts_to_zero() {
        let s = anls("abcd", &["wxyz"], 0.5).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.diagnostics["edit_distance"], 4.0);
    }

    #[test]
    fn anls_partial_match() {
        let s = anls("abcd", &["abcx"], 0.5).unwrap();
        assert!((s.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn anls_takes_best_gold() {
        let s = anls("abcd", &["wxyz", "abcx", "abcd"], 0.5).unwrap();
        assert_eq!(s.value, 1.0);
    }

    #[test]
    fn anls_rejects_bad_inputs() {
        assert_eq!(anls::<&str>("a", &[], 0.5), Err(MetricError::EmptyGold));
        assert_eq!(anls("a", &["a"], 1.0), Err(MetricError::InvalidThreshold(1.0)));
        assert_eq!(anls("a", &["a"], -0.1), Err(MetricError::InvalidThreshold(-0.1)));
    }

    #[test]
    fn vqa_default_routes_short_gold_to_exact() {
        let s = vqa_score("Paris", &["paris"], None, 0.5).unwrap();
        assert_eq!((s.value, s.metric), (1.0, MetricKind::Exact));
        let s = vqa_score("Pariss", &["paris"], None, 0.5).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn vqa_default_routes_long_gold_to_anls() {
        let gold = ["a long transcribed sentence here today"];
        let s = vqa_score("a long transcribed sentence here", &gold, None, 0.5).unwrap();
        assert_eq!(s.metric, MetricKind::Anls);
        assert!(s.value > 0.5 && s.value < 1.0);
    }

    #[test]
    fn vqa_contains() {
        let s = vqa_score("The answer is Paris", &["Paris"], Some(VqaMethod::Contains), 0.5).unwrap();
        assert_eq!(s.value, 1.0);
        let s = vqa_score("Paris", &["The answer is Paris"], Some(VqaMethod::Contains), 0.5).unwrap();
        assert_eq!(s.value, 0.0);
        let s = vqa_score("Paris", &["Paris, Rome"], Some(VqaMethod::ContainsEither), 0.5).unwrap();
        assert_eq!(s.value, 1.0);
        let s = vqa_score("", &["x"], Some(VqaMethod::ContainsEither), 0.5).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn vqa_directive_overrides_routing() {
        let s = vqa_score("pari", &["paris"], Some(VqaMethod::Anls(None)), 0.5).unwrap();
        assert!((s.value - 0.8).abs() < 1e-12);
        let s = vqa_score("pari", &["paris"], Some(VqaMethod::Anls(Some(0.9))), 0.5).unwrap();
        assert_eq!(s.value, 0.0);
    }
}
