//! Experiment orchestration: keyword generation, verification, baseline and
//! inception inference, judging, persistence, resume and reporting.
//!
//! A run lives in `<out_dir>/<run_id>/`:
//!
//! | file | contents |
//! |---|---|
//! | `config.json` | the [`RunConfig`] snapshot the run was started with |
//! | `manifest.json` | [`RunManifest`]: progress, traffic counters, timings |
//! | `keywords.jsonl` | one [`KeywordRecord`](crate::keywordgen::KeywordRecord) per image |
//! | `candidates.jsonl` | scored candidates per image |
//! | `optimal.jsonl` | selected keywords per image and condition |
//! | `predictions.jsonl` | one [`PredictionRecord`](crate::bench::PredictionRecord) per sample and condition |
//! | `judge.jsonl` | judge results for generative benchmarks |
//! | `cache.jsonl` | backend response cache |
//! | `report/` | `metrics.tsv`, `summary.txt` |

mod exec;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchError, BenchmarkKind, MmvpMode, DEFAULT_HALLUCINATION_CUTOFF};
use crate::dvp::{DvpConfig, Stages};
use crate::gateway::{BackendSet, GatewayError, StatsSnapshot};
use crate::inception::InferenceSettings;
use crate::keywordgen::GenerationSettings;
use crate::store::StoreError;

pub use exec::{execute, execute_with_transport, plan, CandidatesPayload, OptimalPayload, RunPlan};
pub use report::{
    build_report, compare_conditions, load_report_inputs, report_digest, write_report, ComparisonReport, MetricRow,
    REPORT_FILES,
};

pub const KIND_KEYWORDS: &str = "keywords";
pub const KIND_CANDIDATES: &str = "candidates";
pub const KIND_OPTIMAL: &str = "optimal";
pub const KIND_PREDICTION: &str = "prediction";
pub const KIND_JUDGE: &str = "judge";

/// Record kind and the run-directory file it lives in.
pub const RECORD_FILES: [(&str, &str); 5] = [
    (KIND_KEYWORDS, "keywords.jsonl"),
    (KIND_CANDIDATES, "candidates.jsonl"),
    (KIND_OPTIMAL, "optimal.jsonl"),
    (KIND_PREDICTION, "predictions.jsonl"),
    (KIND_JUDGE, "judge.jsonl"),
];

pub fn record_file(kind: &str) -> &'static str {
    RECORD_FILES.iter().find(|(k, _)| *k == kind).map(|(_, f)| *f).expect("known record kind")
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("run directory {0} already holds a run; enable resume or pick another run id")]
    RunDirNotEmpty(PathBuf),
    #[error("run directory {0} was started with a different config")]
    ConfigMismatch(PathBuf),
    #[error("{failed} of {attempted} samples failed, above the {cap} failure cap")]
    FailureCap { failed: usize, attempted: usize, cap: f64 },
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("incomplete run: {0}")]
    IncompleteRun(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Inception,
    /// Visual filter only.
    VvOnly,
    /// Linguistic filter only.
    LvOnly,
    /// Selected keywords with a share replaced by factual keywords.
    MixedFactual {
        fraction: f64,
        seed: u64,
    },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Baseline => "baseline".into(),
            Condition::Inception => "inception".into(),
            Condition::VvOnly => "vv_only".into(),
            Condition::LvOnly => "lv_only".into(),
            Condition::MixedFactual { fraction, seed } => format!("mixed_factual:{fraction}:{seed}"),
        }
    }

    /// Filter stages this condition runs, or `None` when it uses no keywords.
    pub fn stages(&self) -> Option<Stages> {
        match self {
            Condition::Baseline => None,
            Condition::Inception | Condition::MixedFactual { .. } => Some(Stages::Both),
            Condition::VvOnly => Some(Stages::VisualOnly),
            Condition::LvOnly => Some(Stages::LinguisticOnly),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Condition {
    type Err = String;

    /// `baseline`, `inception`, `vv_only`, `lv_only`, or
    /// `mixed_factual:<fraction>[:<seed>]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "baseline" => Ok(Condition::Baseline),
            "inception" => Ok(Condition::Inception),
            "vv_only" => Ok(Condition::VvOnly),
            "lv_only" => Ok(Condition::LvOnly),
            other => {
                let mut parts = other.split(':');
                if parts.next() != Some("mixed_factual") {
                    return Err(format!(
                        "unknown condition {other:?} (expected baseline, inception, vv_only, lv_only or mixed_factual:<fraction>[:<seed>])"
                    ));
                }
                let fraction: f64 = parts
                    .next()
                    .ok_or("mixed_factual needs a fraction")?
                    .parse()
                    .map_err(|e| format!("bad fraction: {e}"))?;
                let seed: u64 = match parts.next() {
                    Some(s) => s.parse().map_err(|e| format!("bad seed: {e}"))?,
                    None => 0,
                };
                if parts.next().is_some() {
                    return Err(format!("trailing fields in condition {other:?}"));
                }
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(format!("fraction {fraction} outside [0, 1]"));
                }
                Ok(Condition::MixedFactual { fraction, seed })
            }
        }
    }
}

/// Parses a comma-separated condition list.
pub fn parse_conditions(s: &str) -> Result<Vec<Condition>, String> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    /// Parent of the run directory.
    pub out_dir: PathBuf,
    pub benchmark: BenchmarkKind,
    pub benchmark_path: PathBuf,
    #[serde(default)]
    pub allow_any_pope_split: bool,
    pub backends: BackendSet,
    pub dvp: DvpConfig,
    pub conditions: Vec<Condition>,
    /// Sampling temperature for keyword generation.
    #[serde(default = "default_keyword_temperature")]
    pub keyword_temperature: f64,
    /// Inference token budget; defaults by benchmark kind when unset.
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mmvp_mode: MmvpMode,
    #[serde(default = "default_cutoff")]
    pub hallucination_cutoff: f64,
    pub parallelism: usize,
    pub resume: bool,
    /// Largest tolerated share of failed samples.
    #[serde(default = "default_failure_cap")]
    pub failure_cap: f64,
    /// Stop after this many samples have been written. Simulates an interruption.
    #[serde(skip)]
    pub stop_after: Option<usize>,
}

fn default_keyword_temperature() -> f64 {
    GenerationSettings::DEFAULT_TEMPERATURE
}

fn default_cutoff() -> f64 {
    DEFAULT_HALLUCINATION_CUTOFF
}

fn default_failure_cap() -> f64 {
    0.1
}

impl RunConfig {
    pub fn new(
        run_id: impl Into<String>,
        out_dir: impl Into<PathBuf>,
        benchmark: BenchmarkKind,
        benchmark_path: impl Into<PathBuf>,
        backends: BackendSet,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            out_dir: out_dir.into(),
            benchmark,
            benchmark_path: benchmark_path.into(),
            allow_any_pope_split: false,
            backends,
            dvp: DvpConfig::main_profile(),
            conditions: vec![Condition::Baseline, Condition::Inception],
            keyword_temperature: default_keyword_temperature(),
            max_tokens: None,
            seed: None,
            mmvp_mode: MmvpMode::default(),
            hallucination_cutoff: default_cutoff(),
            parallelism: 4,
            resume: false,
            failure_cap: default_failure_cap(),
            stop_after: None,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return bad(format!("run id {:?} must be a plain directory name", self.run_id));
        }
        if self.conditions.is_empty() {
            return bad("at least one condition is required".into());
        }
        let mut labels: Vec<String> = self.conditions.iter().map(Condition::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.conditions.len() {
            return bad("conditions must be distinct".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.failure_cap) {
            return bad(format!("failure cap {} outside [0, 1]", self.failure_cap));
        }
        if !(0.0..=2.0).contains(&self.keyword_temperature) {
            return bad(format!("keyword temperature {} outside [0, 2]", self.keyword_temperature));
        }
        if self.max_tokens == Some(0) {
            return bad("max_tokens must be positive".into());
        }
        self.dvp.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if self.benchmark.judge_scale().is_some() && self.backends.judge.is_none() {
            return bad(format!("{} needs a judge backend", self.benchmark));
        }
        self.backends.validate()?;
        Ok(())
    }

    pub fn needs_keywords(&self) -> bool {
        self.conditions.iter().any(|c| c.stages().is_some())
    }

    pub fn inference_settings(&self) -> InferenceSettings {
        let max_tokens = self.max_tokens.unwrap_or(if self.benchmark.is_discriminative() {
            InferenceSettings::DISCRIMINATIVE_MAX_TOKENS
        } else {
            InferenceSettings::GENERATIVE_MAX_TOKENS
        });
        InferenceSettings { model_id: self.backends.chat.model_id.clone(), max_tokens, seed: self.seed }
    }

    pub fn generation_settings(&self) -> GenerationSettings {
        GenerationSettings {
            temperature: self.keyword_temperature,
            seed: self.seed,
            ..GenerationSettings::new(self.backends.keyword_model_id())
        }
    }

    /// The config with fields that may differ between a run and its resumption cleared.
    fn identity(&self) -> RunConfig {
        RunConfig { resume: false, parallelism: 1, stop_after: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Finished with some failed samples, within the cap.
    Partial,
    Interrupted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub samples_total: usize,
    /// Named progress counters (samples and records written per stage).
    pub progress: BTreeMap<String, u64>,
    pub traffic: StatsSnapshot,
    /// Accumulated wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub failures: Vec<SampleFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_digest: Option<String>,
    pub started_at: String,
    pub finished_at: String,
}
