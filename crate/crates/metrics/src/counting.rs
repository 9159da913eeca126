use crate::{MetricError, MetricKind, MetricScore};

/// Normalized L1 accuracy of counts: each element scores
/// `max(0, 1 - |p - g| / max(g, 1))`, and the result is their mean.
pub fn counting_score(pred: &[u64], gold: &[u64]) -> Result<MetricScore, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    if pred.len() != gold.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let total: f64 = pred
        .iter()
        .zip(gold)
        .map(|(&p, &g)| {
            let diff = p.abs_diff(g) as f64;
            (1.0 - diff / g.max(1) as f64).max(0.0)
        })
        .sum();
    let l1: u64 = pred.iter().zip(gold).map(|(&p, &g)| p.abs_diff(g)).sum();
    Ok(MetricScore::new(MetricKind::Counting, total / gold.len() as f64).with("l1", l1 as f64))
}
