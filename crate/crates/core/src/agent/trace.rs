//! Episode traces as JSON lines, one episode per line.

use std::io::{self, Write};

use super::EpisodeState;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn export_traces<'a>(
    states: impl IntoIterator<Item = &'a EpisodeState>,
    mut out: impl Write,
) -> Result<(), TraceError> {
    for state in states {
        let line = serde_json::to_string(state).map_err(io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn import_traces(text: &str) -> Result<Vec<EpisodeState>, TraceError> {
    let mut states = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| TraceError::Invalid { line: i + 1, message };
        let state: EpisodeState = serde_json::from_str(raw).map_err(|e| invalid(e.to_string()))?;
        if !state.memory.is_sequential() {
            return Err(invalid("reflection iterations are not 1, 2, 3, ...".into()));
        }
        states.push(state);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{update_memory, AgentConfig, CallRecord, ReflectionRecord};
    use crate::backend::CallKind;
    use crate::capability::{filter_plan, Taxonomy};

    fn state() -> EpisodeState {
        let mut s = EpisodeState::new("doc-7 \"quoted\" 中文", &AgentConfig::default());
        s.answers = vec!["A0".into(), "A1\nsecond line".into()];
        let plan = super::super::extract_plan("STEP: re-read\nSTEP: apply image enhancement");
        let filtered = filter_plan(&plan, &Taxonomy::builtin());
        let rec = ReflectionRecord {
            iteration: 1,
            text: "why: ünïcödé\ttab".into(),
            extracted_plan: plan,
            feasible_plan: filtered.feasible,
            rejected_plan: filtered.rejected,
        };
        s.memory = update_memory(&s.memory, rec).unwrap();
        s.call_trace = vec![CallRecord { kind: CallKind::Initial, iteration: 0, digest: "ab".into() }];
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let states = vec![state(), state()];
        let mut first = Vec::new();
        export_traces(&states, &mut first).unwrap();
        let back = import_traces(std::str::from_utf8(&first).unwrap()).unwrap();
        assert_eq!(back, states);
        let mut second = Vec::new();
        export_traces(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn out_of_order_reflections_rejected() {
        let mut line = serde_json::to_string(&state()).unwrap();
        line = line.replace("\"iteration\":1,\"text\"", "\"iteration\":2,\"text\"");
        assert!(matches!(import_traces(&line), Err(TraceError::Invalid { line: 1, .. })));
        assert!(matches!(import_traces("\n{"), Err(TraceError::Invalid { line: 2, .. })));
    }
}
