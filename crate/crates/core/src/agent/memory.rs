use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::plan::plan_lines;

use crate::backend::MemoryEntry;
use crate::capability::PlanAction;

/// One reflection and the plan mined from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub iteration: u32,
    pub text: String,
    pub extracted_plan: Vec<PlanAction>,
    /// Empty in modes that skip the feasibility filter.
    pub feasible_plan: Vec<PlanAction>,
    pub rejected_plan: Vec<PlanAction>,
}

impl ReflectionRecord {
    /// Reflection text without the lines whose actions were rejected.
    pub fn redacted_text(&self) -> Cow<'_, str> {
        if self.rejected_plan.is_empty() {
            return Cow::Borrowed(&self.text);
        }
        let drop: Vec<usize> = plan_lines(&self.text)
            .into_iter()
            .filter(|(_, a)| self.rejected_plan.iter().any(|r| r.text == a.text))
            .map(|(i, _)| i)
            .collect();
        let kept: Vec<&str> = self
            .text
            .lines()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, l)| l)
            .collect();
        Cow::Owned(kept.join("\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("memory holds {held} record(s); expected iteration {expected}, got {got}")]
pub struct SequenceError {
    pub held: usize,
    pub expected: u32,
    pub got: u32,
}

/// Append-only reflection history; record `k` has iteration `k + 1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryStore {
    records: Vec<ReflectionRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ReflectionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&ReflectionRecord> {
        self.records.last()
    }

    /// Prompt view of `records`, optionally with rejected actions removed.
    pub(crate) fn entries(records: &[ReflectionRecord], redact: bool) -> Vec<MemoryEntry> {
        records
            .iter()
            .map(|r| MemoryEntry {
                iteration: r.iteration,
                text: if redact { r.redacted_text().into_owned() } else { r.text.clone() },
            })
            .collect()
    }

    /// Checks the sequential-iteration invariant, e.g. after import.
    pub fn is_sequential(&self) -> bool {
        self.records.iter().enumerate().all(|(k, r)| r.iteration as usize == k + 1)
    }
}

/// Returns `memory` with `record` appended.
pub fn update_memory(memory: &MemoryStore, record: ReflectionRecord) -> Result<MemoryStore, SequenceError> {
    let expected = memory.records.len() as u32 + 1;
    if record.iteration != expected {
        return Err(SequenceError { held: memory.records.len(), expected, got: record.iteration });
    }
    let mut next = memory.clone();
    next.records.push(record);
    Ok(next)
}
