//! Run settings, layered flag > environment > config file > default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, ValueEnum};
use ocr_reflect::agent::{AgentConfig, Mode};
use ocr_reflect::backend::{GenerationParams, HttpBackendConfig};
use ocr_reflect::harness::RunOptions;
use serde::{Deserialize, Serialize};

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "OCR_REFLECT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend {other:?} (expected http or mock)")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        })
    }
}

/// One layer of settings. Every key is optional so layers can be merged;
/// the same names serve as flags (`--max-iterations`), config-file keys
/// (`max_iterations`) and environment variables (`OCR_REFLECT_MAX_ITERATIONS`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Dataset file, one JSON sample per line.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// naive, cot, self_refine, capability_only, memory_only or full.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Reflect/refine rounds (must be 0 for naive and cot).
    #[arg(long, short = 'T')]
    pub max_iterations: Option<u32>,
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// JSONL fixture for the mock backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// OpenAI-compatible endpoint prefix, e.g. http://host:8000/v1.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Bearer token; prefer the environment over flags and files.
    #[arg(long)]
    pub api_key: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Episodes in flight.
    #[arg(long)]
    pub workers: Option<usize>,
    /// ANLS threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Fail on any malformed dataset line instead of skipping it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    /// `default` or a directory of prompt templates.
    #[arg(long)]
    pub templates: Option<String>,
    /// Capability taxonomy file replacing the built-in one.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Characters of rendered memory before old reflections are shortened
    /// (0 disables).
    #[arg(long)]
    pub memory_budget: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("missing required setting `{0}` (flag, environment or config file)")]
    Missing(&'static str),
    #[error("invalid setting `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn parse_env<T: FromStr>(var: &'static str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.trim().parse().map_err(|e: T::Err| ConfigError::Env { var, message: e.to_string() })
}

macro_rules! settings_keys {
    ($($field:ident => $env:literal),* $(,)?) => {
        impl Settings {
            /// (config key, environment variable) for every setting.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$((stringify!($field), $env)),*];

            /// Fills keys unset here from `lower`.
            pub fn over(self, lower: Settings) -> Settings {
                Settings { $($field: self.$field.or(lower.$field)),* }
            }

            pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Settings, ConfigError> {
                Ok(Settings {
                    $($field: get($env).map(|raw| parse_env($env, &raw)).transpose()?),*
                })
            }
        }
    };
}

settings_keys! {
    dataset => "OCR_REFLECT_DATASET",
    out => "OCR_REFLECT_OUT",
    mode => "OCR_REFLECT_MODE",
    max_iterations => "OCR_REFLECT_MAX_ITERATIONS",
    backend => "OCR_REFLECT_BACKEND",
    fixture => "OCR_REFLECT_FIXTURE",
    base_url => "OCR_REFLECT_BASE_URL",
    model => "OCR_REFLECT_MODEL",
    api_key => "OCR_REFLECT_API_KEY",
    timeout_secs => "OCR_REFLECT_TIMEOUT_SECS",
    max_retries => "OCR_REFLECT_MAX_RETRIES",
    workers => "OCR_REFLECT_WORKERS",
    tau => "OCR_REFLECT_TAU",
    strict => "OCR_REFLECT_STRICT",
    templates => "OCR_REFLECT_TEMPLATES",
    taxonomy => "OCR_REFLECT_TAXONOMY",
    temperature => "OCR_REFLECT_TEMPERATURE",
    max_tokens => "OCR_REFLECT_MAX_TOKENS",
    seed => "OCR_REFLECT_SEED",
    memory_budget => "OCR_REFLECT_MEMORY_BUDGET",
}

impl Settings {
    pub fn from_toml(path: &Path, text: &str) -> Result<Settings, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load_file(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(path, &text)
    }
}

/// Merges the three layers; the file is `config_path`, else the one named
/// by `OCR_REFLECT_CONFIG`, else none.
pub fn layered(
    flags: Settings,
    config_path: Option<&Path>,
    get_env: impl Fn(&str) -> Option<String>,
) -> Result<Settings, ConfigError> {
    let env = Settings::from_env(&get_env)?;
    let file = match config_path.map(Path::to_path_buf).or_else(|| get_env(CONFIG_ENV).map(PathBuf::from)) {
        Some(p) => Settings::load_file(&p)?,
        None => Settings::default(),
    };
    Ok(flags.over(env).over(file))
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Mock { fixture: Option<PathBuf> },
    Http(HttpBackendConfig),
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub agent: AgentConfig,
    pub backend: BackendChoice,
    pub workers: usize,
    pub tau: f64,
    pub strict: bool,
    pub taxonomy: Option<PathBuf>,
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, message: message.into() }
}

impl CliConfig {
    /// Applies defaults and checks consistency.
    pub fn resolve(s: Settings) -> Result<CliConfig, ConfigError> {
        let dataset = s.dataset.ok_or(ConfigError::Missing("dataset"))?;
        let mode = s.mode.unwrap_or(Mode::Full);
        let base = AgentConfig::for_mode(mode);
        let generation = GenerationParams {
            temperature: s.temperature.unwrap_or(base.generation.temperature),
            max_tokens: s.max_tokens.unwrap_or(base.generation.max_tokens),
            seed: s.seed.or(base.generation.seed),
        };
        let agent = AgentConfig {
            max_iterations: s.max_iterations.unwrap_or(base.max_iterations),
            mode,
            template_set: s.templates.unwrap_or(base.template_set),
            generation,
            memory_char_budget: match s.memory_budget {
                Some(0) => None,
                Some(n) => Some(n),
                None => base.memory_char_budget,
            },
        };
        agent.validate().map_err(|e| invalid("max_iterations", e.to_string()))?;

        let backend = match s.backend.unwrap_or(BackendKind::Http) {
            BackendKind::Mock => BackendChoice::Mock { fixture: s.fixture },
            BackendKind::Http => {
                let d = HttpBackendConfig::default();
                let timeout = match s.timeout_secs {
                    Some(t) => Duration::try_from_secs_f64(t).map_err(|e| invalid("timeout_secs", e.to_string()))?,
                    None => d.timeout,
                };
                BackendChoice::Http(HttpBackendConfig {
                    base_url: s.base_url.unwrap_or(d.base_url),
                    model: s.model.unwrap_or(d.model),
                    api_key: s.api_key,
                    timeout,
                    max_retries: s.max_retries.unwrap_or(d.max_retries),
                    ..d
                })
            }
        };

        let workers = s.workers.unwrap_or(4);
        if workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        let tau = s.tau.unwrap_or(RunOptions::default().anls_threshold);
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid("tau", format!("{tau} is outside [0, 1]")));
        }
        let out = s.out.unwrap_or_else(|| PathBuf::from("runs").join(mode.as_str()));
        Ok(CliConfig { dataset, out, agent, backend, workers, tau, strict: s.strict.unwrap_or(true), taxonomy: s.taxonomy })
    }

    /// Settings that reproduce this configuration; the API key is left out.
    pub fn snapshot(&self) -> Settings {
        let g = &self.agent.generation;
        let mut s = Settings {
            dataset: Some(self.dataset.clone()),
            out: Some(self.out.clone()),
            mode: Some(self.agent.mode),
            max_iterations: Some(self.agent.max_iterations),
            workers: Some(self.workers),
            tau: Some(self.tau),
            strict: Some(self.strict),
            templates: Some(self.agent.template_set.clone()),
            taxonomy: self.taxonomy.clone(),
            temperature: Some(g.temperature),
            max_tokens: Some(g.max_tokens),
            seed: g.seed,
            memory_budget: Some(self.agent.memory_char_budget.unwrap_or(0)),
            ..Settings::default()
        };
        match &self.backend {
            BackendChoice::Mock { fixture } => {
                s.backend = Some(BackendKind::Mock);
                s.fixture = fixture.clone();
            }
            BackendChoice::Http(h) => {
                s.backend = Some(BackendKind::Http);
                s.base_url = Some(h.base_url.clone());
                s.model = Some(h.model.clone());
                s.timeout_secs = Some(h.timeout.as_secs_f64());
                s.max_retries = Some(h.max_retries);
            }
        }
        s
    }
}
