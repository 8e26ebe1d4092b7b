//! Run configuration: a single strict JSON document with documented
//! defaults, plus the named presets that map onto agent/fusion switches.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dyta_core::agent::{AgentConfig, SignalToggles};
use dyta_core::fusion::{FusionConfig, FusionMethod};

use crate::runner::{EvalError, Method};

/// How many users to evaluate and the seed that picks them. The sample is
/// drawn once and shared by every run, preset, and experiment condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UserSample {
    pub count: usize,
    pub seed: u64,
}

impl Default for UserSample {
    fn default() -> Self {
        Self { count: 50, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Live,
}

/// Model-call settings shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            temperature: 0.1,
            top_p: 0.9,
            max_concurrency: 4,
            timeout_secs: 60,
        }
    }
}

/// The whole run configuration. Unknown keys are rejected; every field
/// except `dataset_dir` has a documented default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    #[serde(default)]
    pub user_sample: UserSample,
    #[serde(default = "default_history_len")]
    pub history_len: usize,
    #[serde(default = "default_update_cadence")]
    pub update_cadence: u32,
    #[serde(default = "default_icl_k")]
    pub icl_k: usize,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    /// Overrides the built-in prompt templates when set.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub direct_prompting: bool,
}

fn default_history_len() -> usize {
    10
}
fn default_update_cadence() -> u32 {
    5
}
fn default_icl_k() -> usize {
    3
}
fn default_runs() -> usize {
    3
}
fn default_seeds() -> Vec<u64> {
    vec![1001, 1002, 1003]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// A minimal configuration pointing at `dataset_dir` with every other
    /// field at its default.
    pub fn minimal(dataset_dir: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({
            "dataset_dir": dataset_dir.into()
        }))
        .expect("minimal config deserializes")
    }

    /// Loads and validates a config file. Relative `dataset_dir`,
    /// `prompts_dir`, and `output_dir` are resolved against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EvalError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| EvalError::Config(format!("config {}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.dataset_dir);
        resolve(&mut self.output_dir);
        if let Some(dir) = self.prompts_dir.as_mut() {
            resolve(dir);
        }
    }

    /// Checks every invariant the schema cannot express; reports all
    /// problems at once.
    pub fn validate(&self) -> Result<(), EvalError> {
        let mut problems = Vec::new();
        if !self.dataset_dir.is_dir() {
            problems.push(format!(
                "dataset_dir {} is not a directory",
                self.dataset_dir.display()
            ));
        }
        if let Some(dir) = &self.prompts_dir {
            if !dir.is_dir() {
                problems.push(format!("prompts_dir {} is not a directory", dir.display()));
            }
        }
        if self.history_len == 0 {
            problems.push("history_len must be at least 1".into());
        }
        if self.update_cadence == 0 {
            problems.push("update_cadence must be at least 1".into());
        }
        if self.runs == 0 {
            problems.push("runs must be at least 1".into());
        }
        if self.seeds.len() != self.runs {
            problems.push(format!(
                "seeds lists {} entries but runs is {}",
                self.seeds.len(),
                self.runs
            ));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            problems.push("per-run seeds must be distinct".into());
        }
        if self.user_sample.count == 0 {
            problems.push("user_sample.count must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            problems.push(format!(
                "temperature {} outside [0, 2]",
                self.llm.temperature
            ));
        }
        if !(self.llm.top_p > 0.0 && self.llm.top_p <= 1.0) {
            problems.push(format!("top_p {} outside (0, 1]", self.llm.top_p));
        }
        if self.llm.max_concurrency == 0 {
            problems.push("max_concurrency must be at least 1".into());
        }
        if self.llm.model_name.trim().is_empty() {
            problems.push("model_name must not be empty".into());
        }
        if self.fusion.rrf_k.is_nan() || self.fusion.rrf_k <= 0.0 {
            problems.push(format!("fusion.rrf_k {} must be positive", self.fusion.rrf_k));
        }
        let weights = [
            ("static_weights.profile", self.fusion.static_weights.profile),
            ("static_weights.sequential", self.fusion.static_weights.sequential),
            ("static_weights.clustering", self.fusion.static_weights.clustering),
            ("detected_weights.sequential", self.fusion.detected_weights.sequential),
            ("detected_weights.clustering", self.fusion.detected_weights.clustering),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                problems.push(format!("fusion.{name} {w} must be finite and non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EvalError::Config(problems.join("; ")))
        }
    }

    /// SHA-256 over the canonical JSON form; embedded in every report so a
    /// run can be tied back to the exact configuration that produced it.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// The eleven runnable presets: the two full pipelines, seven ablations,
/// and the two non-agent baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    DytaBc,
    DytaRrf,
    LongTerm,
    LongShort,
    Sequential,
    Clustering,
    SeqLong,
    NoSaaBc,
    NoSaaRrf,
    Random,
    Bm25,
}

impl Preset {
    pub const ALL: [Preset; 11] = [
        Preset::DytaBc,
        Preset::DytaRrf,
        Preset::LongTerm,
        Preset::LongShort,
        Preset::Sequential,
        Preset::Clustering,
        Preset::SeqLong,
        Preset::NoSaaBc,
        Preset::NoSaaRrf,
        Preset::Random,
        Preset::Bm25,
    ];

    /// The nine agent rows of the ablation table, in table order.
    pub const ABLATION: [Preset; 9] = [
        Preset::LongTerm,
        Preset::LongShort,
        Preset::Sequential,
        Preset::Clustering,
        Preset::SeqLong,
        Preset::NoSaaBc,
        Preset::NoSaaRrf,
        Preset::DytaBc,
        Preset::DytaRrf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::DytaBc => "dyta_bc",
            Preset::DytaRrf => "dyta_rrf",
            Preset::LongTerm => "long_term",
            Preset::LongShort => "long_short",
            Preset::Sequential => "sequential",
            Preset::Clustering => "clustering",
            Preset::SeqLong => "seq_long",
            Preset::NoSaaBc => "no_saa_bc",
            Preset::NoSaaRrf => "no_saa_rrf",
            Preset::Random => "random",
            Preset::Bm25 => "bm25",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Maps the preset onto a concrete evaluation method. Agent presets
    /// inherit history/cadence/ICL/fusion knobs from the config and then
    /// apply their own signal and aggregation switches.
    pub fn method(self, config: &RunConfig) -> Method {
        let base = AgentConfig {
            history_len: config.history_len,
            update_cadence: config.update_cadence,
            icl_k: config.icl_k,
            signals: SignalToggles::default(),
            two_step_clustering: true,
            short_term_enabled: true,
            direct_prompting: config.direct_prompting,
            fusion: config.fusion,
        };
        let agent = |signals: SignalToggles,
                     short_term: bool,
                     adaptive: bool,
                     method: Option<FusionMethod>| {
            let mut a = AgentConfig {
                signals,
                short_term_enabled: short_term,
                ..base.clone()
            };
            a.fusion.adaptive = adaptive;
            if let Some(m) = method {
                a.fusion.method = m;
            }
            Method::Agent(a)
        };
        let all = SignalToggles::default();
        let only = |profile, sequential, clustering| SignalToggles {
            profile,
            sequential,
            clustering,
        };
        match self {
            Preset::DytaBc => agent(all, true, true, Some(FusionMethod::Borda)),
            Preset::DytaRrf => agent(all, true, true, Some(FusionMethod::Rrf)),
            Preset::LongTerm => agent(only(true, false, false), false, false, None),
            Preset::LongShort => agent(only(true, false, false), true, false, None),
            Preset::Sequential => agent(only(false, true, false), false, false, None),
            Preset::Clustering => agent(only(false, false, true), false, false, None),
            Preset::SeqLong => agent(only(true, true, false), false, false, None),
            Preset::NoSaaBc => agent(all, true, false, Some(FusionMethod::Borda)),
            Preset::NoSaaRrf => agent(all, true, false, Some(FusionMethod::Rrf)),
            Preset::Random => Method::Random,
            Preset::Bm25 => Method::Bm25,
        }
    }
}
