use std::collections::HashMap;

use crate::edit::edit_similarity;
use crate::normalize::{normalize, tokenize};
use crate::{MetricError, MetricKind, MetricScore};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU against one reference. Zero n-gram matches are smoothed to
/// `1 / (candidates + 1)`; the brevity penalty is `min(1, exp(1 - r/c))`.
pub fn bleu(pred: &str, reference: &str, max_n: usize) -> Result<MetricScore, MetricError> {
    if max_n == 0 {
        return Err(MetricError::InvalidOrder);
    }
    let hyp = tokenize(pred);
    let refs = tokenize(reference);
    if hyp.is_empty() {
        return Ok(MetricScore::zero(MetricKind::Bleu).with("brevity_penalty", 0.0));
    }

    let mut log_sum = 0.0;
    let mut score = MetricScore::zero(MetricKind::Bleu);
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(&hyp, n);
        let ref_counts = ngram_counts(&refs, n);
        let total = hyp.len().saturating_sub(n - 1);
        let matched: usize = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        score.diagnostics.insert(format!("p{n}"), precision);
        log_sum += precision.ln();
    }
    let bp = (1.0 - refs.len() as f64 / hyp.len() as f64).exp().min(1.0);
    let value = bp * (log_sum / max_n as f64).exp();
    let mut out = MetricScore::new(MetricKind::Bleu, value).with("brevity_penalty", bp);
    out.diagnostics.append(&mut score.diagnostics);
    Ok(out)
}

/// METEOR restricted to exact unigram matches.
///
/// Matching is greedy and one-to-one in prediction order. With `m` matches
/// forming `chunks` contiguous runs, the score is
/// `F_mean * (1 - 0.5 * (chunks / m)^3)` where
/// `F_mean = 10PR / (R + 9P)`.
pub fn meteor_lite(pred: &str, reference: &str) -> MetricScore {
    let hyp = tokenize(pred);
    let refs = tokenize(reference);
    let mut used = vec![false; refs.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in hyp.iter().enumerate() {
        if let Some(j) = (0..refs.len()).find(|&j| !used[j] && refs[j] == *tok) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let m = alignment.len();
    if m == 0 {
        return MetricScore::zero(MetricKind::MeteorLite).with("matches", 0.0);
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let precision = m as f64 / hyp.len() as f64;
    let recall = m as f64 / refs.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MetricScore::new(MetricKind::MeteorLite, f_mean * (1.0 - penalty))
        .with("matches", m as f64)
        .with("chunks", chunks as f64)
        .with("precision", precision)
        .with("recall", recall)
        .with("f_mean", f_mean)
        .with("penalty", penalty)
}

/// Bag-of-tokens F1.
pub fn token_f1(pred: &str, reference: &str) -> MetricScore {
    let hyp = tokenize(pred);
    let refs = tokenize(reference);
    if hyp.is_empty() || refs.is_empty() {
        let v = f64::from(u8::from(hyp.is_empty() && refs.is_empty()));
        return MetricScore::new(MetricKind::TokenF1, v);
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &refs {
        *ref_counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &hyp {
        if let Some(c) = ref_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return MetricScore::zero(MetricKind::TokenF1);
    }
    let p = common as f64 / hyp.len() as f64;
    let r = common as f64 / refs.len() as f64;
    MetricScore::new(MetricKind::TokenF1, 2.0 * p * r / (p + r))
        .with("precision", p)
        .with("recall", r)
}

/// Unweighted mean of BLEU-4, METEOR-lite, token F1 and character edit
/// similarity. An empty prediction scores 0 on every component.
pub fn long_reading_score(pred: &str, gold: &str) -> MetricScore {
    let pred_norm = normalize(pred);
    let (b, m, f, e) = if pred_norm.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (
            bleu(pred, gold, 4).expect("order 4 is valid").value,
            meteor_lite(pred, gold).value,
            token_f1(pred, gold).value,
            edit_similarity(&pred_norm, &normalize(gold)),
        )
    };
    MetricScore::new(MetricKind::LongReading, (b + m + f + e) / 4.0)
        .with("bleu", b)
        .with("meteor_lite", m)
        .with("token_f1", f)
        .with("edit_similarity", e)
}
