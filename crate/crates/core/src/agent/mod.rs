//! The reflect → plan → filter → refine loop.
//!
//! An episode starts with a zero-shot answer and then runs a fixed number
//! of rounds. Each round asks the model to critique the latest answer,
//! mines corrective actions from that critique, drops the ones the model
//! cannot execute, and asks for a revised answer. Every reflection is kept
//! in an append-only memory that later rounds see in full.
//!
//! The six [`Mode`]s switch the filter and the memory depth on and off:
//!
//! | mode              | rounds | filter | reflect sees | refine sees        |
//! |-------------------|--------|--------|--------------|--------------------|
//! | `naive`           | no     |        |              |                    |
//! | `cot`             | no     |        |              |                    |
//! | `self_refine`     | yes    | no     | nothing      | latest reflection  |
//! | `capability_only` | yes    | yes    | nothing      | latest reflection  |
//! | `memory_only`     | yes    | no     | all earlier  | all incl. latest   |
//! | `full`            | yes    | yes    | all earlier  | all incl. latest   |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, Bindings, CallKind, CallTag, GenerationParams, ImageError, ImageSource, ModelBackend, ModelRequest,
    TemplateBundle, TemplateError, TemplateName,
};
use crate::capability::{filter_plan, PlanAction, Taxonomy};
use crate::sample::Sample;

mod memory;
mod plan;
mod trace;

pub use memory::{update_memory, MemoryStore, ReflectionRecord, SequenceError};
pub use plan::{extract_answer, extract_plan};
pub use trace::{export_traces, import_traces, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Naive,
    Cot,
    SelfRefine,
    CapabilityOnly,
    MemoryOnly,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Naive,
        Mode::Cot,
        Mode::SelfRefine,
        Mode::CapabilityOnly,
        Mode::MemoryOnly,
        Mode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Cot => "cot",
            Mode::SelfRefine => "self_refine",
            Mode::CapabilityOnly => "capability_only",
            Mode::MemoryOnly => "memory_only",
            Mode::Full => "full",
        }
    }

    /// Row label in method comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Naive => "Naive",
            Mode::Cot => "CoT",
            Mode::SelfRefine => "Self-Refine",
            Mode::CapabilityOnly => "Capability Reflection",
            Mode::MemoryOnly => "Memory Reflection",
            Mode::Full => "Capability & Memory",
        }
    }

    pub fn is_iterative(self) -> bool {
        !matches!(self, Mode::Naive | Mode::Cot)
    }

    pub fn filters_plan(self) -> bool {
        matches!(self, Mode::CapabilityOnly | Mode::Full)
    }

    pub fn keeps_history(self) -> bool {
        matches!(self, Mode::MemoryOnly | Mode::Full)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Mode::ALL.into_iter().find(|m| m.as_str() == key).ok_or_else(|| {
            let names: Vec<_> = Mode::ALL.iter().map(|m| m.as_str()).collect();
            format!("unknown mode {s:?} (expected one of {})", names.join(", "))
        })
    }
}

pub const DEFAULT_MAX_ITERATIONS: u32 = 3;
pub const DEFAULT_MEMORY_CHAR_BUDGET: usize = 16_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_iterations: u32,
    pub mode: Mode,
    /// `default` or a directory of template files.
    pub template_set: String,
    pub generation: GenerationParams,
    /// Character budget for rendered memory; `None` disables summarizing.
    pub memory_char_budget: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            mode: Mode::Full,
            template_set: "default".into(),
            generation: GenerationParams::default(),
            memory_char_budget: Some(DEFAULT_MEMORY_CHAR_BUDGET),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("mode {mode} runs no reflection rounds; max_iterations must be 0, got {max_iterations}")]
    RoundsWithoutLoop { mode: Mode, max_iterations: u32 },
}

impl AgentConfig {
    /// Defaults for `mode`, with zero rounds for the single-pass modes.
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            max_iterations: if mode.is_iterative() { DEFAULT_MAX_ITERATIONS } else { 0 },
            ..Self::default()
        }
    }

    pub fn with_iterations(mut self, max_iterations: u32) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.mode.is_iterative() && self.max_iterations > 0 {
            return Err(ConfigError::RoundsWithoutLoop { mode: self.mode, max_iterations: self.max_iterations });
        }
        Ok(())
    }
}

/// One backend call as issued by an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub iteration: u32,
    /// Digest of the full request (image, messages, parameters).
    pub digest: String,
}

/// Everything one sample's run produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub sample_id: String,
    pub mode: Mode,
    pub max_iterations: u32,
    /// `answers[0]` is zero-shot; `answers[i]` came from refine round `i`.
    pub answers: Vec<String>,
    #[serde(rename = "reflections")]
    pub memory: MemoryStore,
    pub call_trace: Vec<CallRecord>,
    /// Some rendered memory section was summarized to fit the budget.
    pub memory_truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl EpisodeState {
    pub fn new(sample_id: impl Into<String>, config: &AgentConfig) -> Self {
        Self {
            sample_id: sample_id.into(),
            mode: config.mode,
            max_iterations: config.max_iterations,
            answers: Vec::new(),
            memory: MemoryStore::new(),
            call_trace: Vec::new(),
            memory_truncated: false,
            aborted: None,
        }
    }

    pub fn reflections(&self) -> &[ReflectionRecord] {
        self.memory.records()
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.answers.last().map(String::as_str)
    }

    pub fn is_complete(&self) -> bool {
        self.aborted.is_none() && self.answers.len() == self.max_iterations as usize + 1
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeFailure {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// An aborted episode with whatever it produced before failing.
#[derive(Debug, thiserror::Error)]
#[error("episode {} aborted: {failure}", state.sample_id)]
pub struct EpisodeError {
    pub state: Box<EpisodeState>,
    #[source]
    pub failure: EpisodeFailure,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Output of one loop step plus the call that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step<T> {
    pub value: T,
    pub call: CallRecord,
    pub memory_truncated: bool,
}

/// A failed step. `call` is set when the request reached the backend.
#[derive(Debug, thiserror::Error)]
#[error("{failure}")]
pub struct StepError {
    pub call: Option<CallRecord>,
    #[source]
    pub failure: EpisodeFailure,
}

macro_rules! step_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for StepError {
            fn from(e: $t) -> Self {
                Self { call: None, failure: e.into() }
            }
        }
    )*};
}

step_error_from!(ImageError, TemplateError, SequenceError);

#[derive(Clone)]
pub struct Agent {
    backend: Arc<dyn ModelBackend>,
    config: AgentConfig,
    templates: Arc<TemplateBundle>,
    taxonomy: Arc<Taxonomy>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("backend", &self.backend.describe())
            .field("config", &self.config)
            .field("templates", &self.templates.id())
            .finish()
    }
}

impl Agent {
    /// Validates the config and resolves its template set.
    pub fn new(backend: Arc<dyn ModelBackend>, config: AgentConfig) -> Result<Self, AgentError> {
        config.validate()?;
        let templates = Arc::new(TemplateBundle::resolve(&config.template_set)?);
        Ok(Self { backend, config, templates, taxonomy: Arc::new(Taxonomy::builtin()) })
    }

    pub fn with_taxonomy(mut self, taxonomy: Taxonomy) -> Self {
        self.taxonomy = Arc::new(taxonomy);
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn templates(&self) -> &TemplateBundle {
        &self.templates
    }

    pub fn backend(&self) -> &Arc<dyn ModelBackend> {
        &self.backend
    }

    fn bindings(&self, sample: &Sample) -> Bindings {
        Bindings {
            question: Some(sample.question.clone()),
            memory_budget: self.config.memory_char_budget,
            ..Bindings::default()
        }
    }

    async fn call(
        &self,
        sample: &Sample,
        image: &Arc<ImageSource>,
        template: TemplateName,
        bindings: &Bindings,
        kind: CallKind,
        iteration: u32,
    ) -> Result<Step<String>, StepError> {
        let rendered = self.templates.render(template, bindings)?;
        let request = ModelRequest {
            image: Arc::clone(image),
            messages: rendered.messages,
            params: self.config.generation.clone(),
            tag: CallTag { sample_id: sample.id.clone(), kind, iteration },
        };
        let call = CallRecord { kind, iteration, digest: request.digest() };
        match self.backend.generate(&request).await {
            Ok(resp) => Ok(Step { value: resp.text, call, memory_truncated: rendered.memory_truncated }),
            Err(e) => Err(StepError { call: Some(call), failure: e.into() }),
        }
    }

    /// Zero-shot answer; the chain-of-thought template in `cot` mode.
    pub async fn initial_answer(&self, sample: &Sample, image: &Arc<ImageSource>) -> Result<Step<String>, StepError> {
        let template = if self.config.mode == Mode::Cot { TemplateName::ZeroShotCot } else { TemplateName::ZeroShot };
        let step = self.call(sample, image, template, &self.bindings(sample), CallKind::Initial, 0).await?;
        Ok(Step { value: extract_answer(&step.value), ..step })
    }

    /// Critiques `prev_answer` and mines a plan from the critique. `memory`
    /// holds rounds before `iteration`; whether the prompt shows it depends
    /// on the mode.
    pub async fn reflect(
        &self,
        sample: &Sample,
        image: &Arc<ImageSource>,
        prev_answer: &str,
        memory: &MemoryStore,
        iteration: u32,
    ) -> Result<Step<ReflectionRecord>, StepError> {
        let history = if self.config.mode.keeps_history() { memory.records() } else { &[] };
        let mut bindings = self.bindings(sample);
        bindings.prev_answer = Some(prev_answer.to_string());
        bindings.memory = Some(MemoryStore::entries(history, false));
        let step = self
            .call(sample, image, TemplateName::Reflection, &bindings, CallKind::Reflect, iteration)
            .await?;

        let text = step.value.trim().to_string();
        let extracted_plan = extract_plan(&text);
        if extracted_plan.is_empty() {
            tracing::warn!(sample = %sample.id, iteration, "reflection contains no plan markers");
        }
        let (feasible_plan, rejected_plan) = if self.config.mode.filters_plan() {
            let filtered = filter_plan(&extracted_plan, &self.taxonomy);
            (filtered.feasible, filtered.rejected)
        } else {
            (Vec::new(), Vec::new())
        };
        let record = ReflectionRecord { iteration, text, extracted_plan, feasible_plan, rejected_plan };
        Ok(Step { value: record, call: step.call, memory_truncated: step.memory_truncated })
    }

    /// Revises `prev_answer`. `memory` must end with this round's
    /// reflection; `plan` is injected verbatim.
    pub async fn refine(
        &self,
        sample: &Sample,
        image: &Arc<ImageSource>,
        prev_answer: &str,
        plan: &[PlanAction],
        memory: &MemoryStore,
    ) -> Result<Step<String>, StepError> {
        let Some(current) = memory.last() else {
            return Err(SequenceError { held: 0, expected: 1, got: 0 }.into());
        };
        let iteration = current.iteration;
        let history = if self.config.mode.keeps_history() {
            memory.records()
        } else {
            std::slice::from_ref(current)
        };
        let mut bindings = self.bindings(sample);
        bindings.prev_answer = Some(prev_answer.to_string());
        // Rejected actions must not reach refinement, not even through memory.
        bindings.memory = Some(MemoryStore::entries(history, self.config.mode.filters_plan()));
        bindings.plan = Some(plan.iter().map(|a| a.text.clone()).collect());
        let step = self
            .call(sample, image, TemplateName::Refinement, &bindings, CallKind::Refine, iteration)
            .await?;
        Ok(Step { value: extract_answer(&step.value), ..step })
    }

    /// Runs one sample to completion. On failure the partial state rides
    /// along in the error.
    pub async fn run_episode(&self, sample: &Sample) -> Result<EpisodeState, EpisodeError> {
        let mut state = EpisodeState::new(&sample.id, &self.config);
        match self.drive(sample, &mut state).await {
            Ok(()) => Ok(state),
            Err(e) => {
                if let Some(call) = e.call {
                    state.call_trace.push(call);
                }
                state.aborted = Some(e.failure.to_string());
                Err(EpisodeError { state: Box::new(state), failure: e.failure })
            }
        }
    }

    async fn drive(&self, sample: &Sample, state: &mut EpisodeState) -> Result<(), StepError> {
        let image = Arc::new(sample.resolve_image()?);

        let first = self.initial_answer(sample, &image).await?;
        state.call_trace.push(first.call);
        state.answers.push(first.value);

        for iteration in 1..=self.config.max_iterations {
            let prev = state.answers.last().expect("initial answer recorded").clone();

            let reflected = self.reflect(sample, &image, &prev, &state.memory, iteration).await?;
            state.call_trace.push(reflected.call);
            state.memory_truncated |= reflected.memory_truncated;
            let record = reflected.value;
            let plan = if self.config.mode.filters_plan() {
                record.feasible_plan.clone()
            } else {
                record.extracted_plan.clone()
            };
            state.memory = update_memory(&state.memory, record)?;

            let refined = self.refine(sample, &image, &prev, &plan, &state.memory).await?;
            state.call_trace.push(refined.call);
            state.memory_truncated |= refined.memory_truncated;
            state.answers.push(refined.value);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::backend::{FixtureKey, ScriptedBackend, ScriptedFixture, COT_MARKER, NO_MEMORY_PLACEHOLDER};
    use crate::sample::{Gold, Language, TaskType};

    fn sample(id: &str) -> Sample {
        Sample {
            id: id.into(),
            image_ref: "data:image/png;base64,AAAA".into(),
            question: "What is the total?".into(),
            task_type: TaskType::Recognition,
            language: Language::En,
            gold: Gold::Answers(vec!["42".into()]),
            eval_directive: None,
            base_dir: PathBuf::new(),
        }
    }

    fn fixture() -> ScriptedFixture {
        let mut fx = ScriptedFixture::new().with(FixtureKey::new("s", CallKind::Initial, 0), "ANSWER: 40");
        for i in 1..=3 {
            fx = fx
                .with(
                    FixtureKey::new("s", CallKind::Reflect, i),
                    format!("Reflection text {i}.\nSTEP: re-read the header region\nSTEP: apply image enhancement"),
                )
                .with(FixtureKey::new("s", CallKind::Refine, i), format!("ANSWER: {}", 40 + i));
        }
        fx
    }

    fn agent(backend: &Arc<ScriptedBackend>, config: AgentConfig) -> Agent {
        Agent::new(backend.clone(), config).unwrap()
    }

    #[tokio::test]
    async fn full_mode_trace_shape() {
        let backend = Arc::new(ScriptedBackend::new(fixture()));
        let state = agent(&backend, AgentConfig::for_mode(Mode::Full)).run_episode(&sample("s")).await.unwrap();
        let kinds: Vec<_> = state.call_trace.iter().map(|c| (c.kind, c.iteration)).collect();
        assert_eq!(
            kinds,
            [
                (CallKind::Initial, 0),
                (CallKind::Reflect, 1),
                (CallKind::Refine, 1),
                (CallKind::Reflect, 2),
                (CallKind::Refine, 2),
                (CallKind::Reflect, 3),
                (CallKind::Refine, 3)
            ]
        );
        assert_eq!(state.answers, ["40", "41", "42", "43"]);
        assert_eq!(state.reflections().len(), 3);
        assert!(state.is_complete());
        let r = &state.reflections()[0];
        assert_eq!(r.extracted_plan.len(), 2);
        assert_eq!(r.feasible_plan.len(), 1);
        assert_eq!(r.rejected_plan[0].text, "apply image enhancement");
    }

    #[tokio::test]
    async fn naive_single_call() {
        let backend = Arc::new(ScriptedBackend::new(fixture()));
        let state = agent(&backend, AgentConfig::for_mode(Mode::Naive)).run_episode(&sample("s")).await.unwrap();
        assert_eq!(state.answers, ["40"]);
        assert!(state.reflections().is_empty());
        assert_eq!(state.call_trace.len(), 1);
        assert!(!backend.captured()[0].user_text().contains(COT_MARKER));
    }

    #[tokio::test]
    async fn cot_prompt_carries_marker() {
        let backend = Arc::new(ScriptedBackend::new(fixture()));
        agent(&backend, AgentConfig::for_mode(Mode::Cot)).run_episode(&sample("s")).await.unwrap();
        assert!(backend.captured()[0].user_text().contains(COT_MARKER));
    }

    #[tokio::test]
    async fn self_refine_sees_only_latest_reflection() {
        let backend = Arc::new(ScriptedBackend::new(fixture()));
        agent(&backend, AgentConfig::for_mode(Mode::SelfRefine)).run_episode(&sample("s")).await.unwrap();
        let refine3 = backend.captured()[6].user_text().to_string();
        assert!(refine3.contains("Reflection text 3."));
        assert!(!refine3.contains("Reflection text 1.") && !refine3.contains("Reflection text 2."));
        // no filter: the infeasible action reaches the prompt
        assert!(refine3.contains("apply image enhancement"));
        assert!(backend.captured()[5].user_text().contains(NO_MEMORY_PLACEHOLDER));
    }

    #[tokio::test]
    async fn full_mode_refine_sees_all_and_only_feasible_actions() {
        let backend = Arc::new(ScriptedBackend::new(fixture()));
        agent(&backend, AgentConfig::for_mode(Mode::Full)).run_episode(&sample("s")).await.unwrap();
        let refine3 = backend.captured()[6].user_text().to_string();
        for i in 1..=3 {
            assert!(refine3.contains(&format!("Reflection text {i}.")));
        }
        assert!(refine3.contains("re-read the header region"));
        assert!(!refine3.contains("apply image enhancement"));
        let reflect3 = backend.captured()[5].user_text().to_string();
        assert!(reflect3.find("Reflection text 1.").unwrap() < reflect3.find("Reflection text 2.").unwrap());
        assert!(!reflect3.contains("Reflection text 3."));
    }

    #[tokio::test]
    async fn empty_feasible_plan_still_refines() {
        let fx = ScriptedFixture::constant("ANSWER: a", "STEP: apply image enhancement", "ANSWER: b");
        let backend = Arc::new(ScriptedBackend::new(fx));
        let state = agent(&backend, AgentConfig::for_mode(Mode::Full).with_iterations(1))
            .run_episode(&sample("s"))
            .await
            .unwrap();
        assert_eq!(state.call_trace.len(), 3);
        assert!(backend.captured()[2].user_text().contains(crate::backend::NO_PLAN_SENTINEL));
    }

    #[tokio::test]
    async fn missing_image_fails_before_any_call() {
        let backend = Arc::new(ScriptedBackend::new(fixture()));
        let mut s = sample("s");
        s.image_ref = "no/such/file.png".into();
        let err = agent(&backend, AgentConfig::default()).run_episode(&s).await.unwrap_err();
        assert!(matches!(err.failure, EpisodeFailure::Image(_)));
        assert_eq!(backend.call_count(), 0);
        assert!(err.state.call_trace.is_empty());
    }

    #[tokio::test]
    async fn backend_failure_keeps_partial_trace() {
        let fx = fixture().with_failure(
            FixtureKey::new("s", CallKind::Refine, 2),
            BackendError::Transport { attempts: 4, message: "down".into() },
        );
        let backend = Arc::new(ScriptedBackend::new(fx));
        let err = agent(&backend, AgentConfig::default()).run_episode(&sample("s")).await.unwrap_err();
        assert!(matches!(err.failure, EpisodeFailure::Backend(_)));
        assert_eq!(err.state.answers.len(), 2);
        assert_eq!(err.state.reflections().len(), 2);
        assert_eq!(err.state.call_trace.len(), 5);
        assert!(err.state.aborted.is_some());
    }

    #[test]
    fn config_rules() {
        assert!(AgentConfig::for_mode(Mode::Naive).with_iterations(3).validate().is_err());
        assert!(AgentConfig::for_mode(Mode::Full).with_iterations(0).validate().is_ok());
        assert_eq!(AgentConfig::default().max_iterations, 3);
        assert!(matches!(
            Agent::new(Arc::new(ScriptedBackend::default()), AgentConfig { template_set: "nope".into(), ..Default::default() }),
            Err(AgentError::Template(_))
        ));
        assert_eq!("memory-only".parse::<Mode>().unwrap(), Mode::MemoryOnly);
    }
}
