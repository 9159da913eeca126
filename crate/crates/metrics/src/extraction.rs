use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::normalize::normalize;
use crate::{MetricKind, MetricScore};

/// Field name → values. Field names are matched exactly; values after
/// normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyValueSet(pub BTreeMap<String, Vec<String>>);

impl KeyValueSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a value. Empty field names are ignored.
    pub fn insert(&mut self, field: impl Into<String>, value: impl Into<String>) {
        let field = field.into();
        if field.trim().is_empty() {
            return;
        }
        self.0.entry(field).or_default().push(value.into());
    }

    pub fn pair_count(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_count() == 0
    }

    fn pair_counts(&self) -> HashMap<(&str, String), usize> {
        let mut counts = HashMap::new();
        for (field, values) in &self.0 {
            for v in values {
                *counts.entry((field.as_str(), normalize(v))).or_insert(0) += 1;
            }
        }
        counts
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for KeyValueSet {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut set = Self::new();
        for (k, v) in iter {
            set.insert(k, v);
        }
        set
    }
}

/// Pair-level F1 between predicted and gold key-value sets. Two empty sets
/// score 1; otherwise no true positives means 0.
pub fn extraction_f1(pred: &KeyValueSet, gold: &KeyValueSet) -> MetricScore {
    let (np, ng) = (pred.pair_count(), gold.pair_count());
    if np == 0 && ng == 0 {
        return MetricScore::new(MetricKind::ExtractionF1, 1.0)
            .with("precision", 1.0)
            .with("recall", 1.0)
            .with("true_positives", 0.0);
    }
    let gold_counts = gold.pair_counts();
    let tp: usize = pred
        .pair_counts()
        .iter()
        .map(|(k, &c)| c.min(gold_counts.get(k).copied().unwrap_or(0)))
        .sum();
    let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let recall = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    MetricScore::new(MetricKind::ExtractionF1, f1)
        .with("precision", precision)
        .with("recall", recall)
        .with("true_positives", tp as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> KeyValueSet {
        pairs.iter().copied().collect()
    }

    #[test]
    fn identical_sets() {
        let g = kv(&[("name", "Ann"), ("date", "2024-01-02"), ("total", "9.50")]);
        assert_eq!(extraction_f1(&g, &g).value, 1.0);
    }

    #[test]
    fn half_right_with_spurious_pairs() {
        let gold = kv(&[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4")]);
        let pred = kv(&[("a", "1"), ("b", "2"), ("x", "9"), ("c", "wrong")]);
        let s = extraction_f1(&pred, &gold);
        assert_eq!(s.diagnostics["precision"], 0.5);
        assert_eq!(s.diagnostics["recall"], 0.5);
        assert!((s.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gold = kv(&[("a", "1")]);
        assert_eq!(extraction_f1(&KeyValueSet::new(), &gold).value, 0.0);
        assert_eq!(extraction_f1(&gold, &KeyValueSet::new()).value, 0.0);
    }

    #[test]
    fn values_normalized_fields_exact() {
        let gold = kv(&[("Total", "USD 12.00")]);
        assert_eq!(extraction_f1(&kv(&[("Total", "usd  12.00.")]), &gold).value, 1.0);
        assert_eq!(extraction_f1(&kv(&[("total", "USD 12.00")]), &gold).value, 0.0);
    }

    #[test]
    fn duplicate_values_count_as_multiset() {
        let gold = kv(&[("item", "pen"), ("item", "pen")]);
        let pred = kv(&[("item", "pen")]);
        let s = extraction_f1(&pred, &gold);
        assert_eq!(s.diagnostics["precision"], 1.0);
        assert_eq!(s.diagnostics["recall"], 0.5);
    }

    #[test]
    fn empty_field_names_dropped() {
        let set = kv(&[("", "x"), ("  ", "y")]);
        assert!(set.is_empty());
    }
}
