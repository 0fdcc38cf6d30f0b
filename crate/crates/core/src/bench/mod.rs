//! Benchmark loading, answer extraction, metrics and judge-based scoring.

mod extract;
mod judge;
mod load;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ImageRef};

pub use extract::{extract_option, extract_yes_no, parse_options, YesNo};
pub use judge::{
    aggregate_generative, judge_generative, judge_prompt, parse_llava_scores, parse_mmhal_rating, GenerativeReport,
    GenerativeStats, JudgeResult, JudgeScale, JudgeSettings, DEFAULT_HALLUCINATION_CUTOFF,
};
pub use load::{load_benchmark, load_benchmark_with, LoadOptions, POPE_DEFAULT_SPLIT};
pub use metrics::{
    compute_binary_metrics, compute_mmvp_accuracy, information_level, is_correct, split_by_information_level,
    BinaryMetrics, InformationLevel, InformationSplit, MmvpAccuracy, MmvpMode, PatternAccuracy,
    LOW_INFORMATION_MAX_KEYWORDS,
};

/// The nine MMVP visual patterns, in report column order.
pub const MMVP_PATTERNS: [&str; 9] = [
    "Orientation and Direction",
    "Presence of Specific Features",
    "State and Condition",
    "Quantity and Count",
    "Positional and Relational Context",
    "Color and Appearance",
    "Structural and Physical Characteristics",
    "Text",
    "Viewpoint and Perspective",
];

pub const LLAVA_CATEGORIES: [&str; 3] = ["conversation", "detail", "reasoning"];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BenchError {
    #[error("{path}: line {line}: {reason}")]
    Schema { path: String, line: usize, reason: String },
    #[error("{path}: line {line}: unknown MMVP pattern {pattern:?}")]
    UnknownPattern { path: String, line: usize, pattern: String },
    #[error("no gold answer for sample {0}")]
    MissingGold(String),
    #[error("sample {0} has no pair id")]
    MissingPairId(String),
    #[error("pair {pair_id} has {size} questions, expected 2")]
    MalformedPair { pair_id: String, size: usize },
    #[error("judge reply could not be parsed: {raw:?}")]
    JudgeParse { raw: String },
    #[error("no results to aggregate")]
    Empty,
    #[error("{0} is not a judge-scored benchmark")]
    NotGenerative(BenchmarkKind),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    PopeAdversarial,
    Mmvp,
    LlavaWild,
    Mmhal,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] =
        [BenchmarkKind::PopeAdversarial, BenchmarkKind::Mmvp, BenchmarkKind::LlavaWild, BenchmarkKind::Mmhal];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::PopeAdversarial => "pope_adversarial",
            BenchmarkKind::Mmvp => "mmvp",
            BenchmarkKind::LlavaWild => "llava_wild",
            BenchmarkKind::Mmhal => "mmhal",
        }
    }

    /// Yes/no and multiple-choice benchmarks; the others are judge-scored.
    pub fn is_discriminative(self) -> bool {
        matches!(self, BenchmarkKind::PopeAdversarial | BenchmarkKind::Mmvp)
    }

    pub fn judge_scale(self) -> Option<JudgeScale> {
        match self {
            BenchmarkKind::LlavaWild => Some(JudgeScale::OneToTen),
            BenchmarkKind::Mmhal => Some(JudgeScale::ZeroToSeven),
            _ => None,
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pope" | "pope_adversarial" => Ok(BenchmarkKind::PopeAdversarial),
            "mmvp" => Ok(BenchmarkKind::Mmvp),
            "llava" | "llava_wild" => Ok(BenchmarkKind::LlavaWild),
            "mmhal" => Ok(BenchmarkKind::Mmhal),
            other => {
                Err(format!("unknown benchmark kind {other:?} (expected pope_adversarial, mmvp, llava_wild or mmhal)"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Gold {
    YesNo { yes: bool },
    Option { label: String, choices: Vec<(String, String)> },
    Reference { text: String },
    ReferenceWithCategory { text: String, category: String },
}

impl Gold {
    pub fn reference_text(&self) -> Option<&str> {
        match self {
            Gold::Reference { text } | Gold::ReferenceWithCategory { text, .. } => Some(text),
            _ => None,
        }
    }

    pub fn category(&self) -> Option<&str> {
        match self {
            Gold::ReferenceWithCategory { category, .. } => Some(category),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub sample_id: String,
    pub benchmark: BenchmarkKind,
    pub image_ref: ImageRef,
    pub question: String,
    pub gold: Gold,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl BenchmarkSample {
    pub fn pattern(&self) -> Option<&str> {
        self.metadata.get("pattern").map(String::as_str)
    }

    pub fn pair_id(&self) -> Option<&str> {
        self.metadata.get("pair_id").map(String::as_str).filter(|s| !s.is_empty())
    }
}

/// Structured answer pulled out of a free-text reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Extracted {
    Yes,
    No,
    Option(String),
    Text(String),
    Unparseable,
}

/// Request parameters persisted with each prediction, for fairness audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub condition: String,
    pub raw_answer: String,
    pub extracted: Extracted,
    pub keywords_used: Vec<String>,
    pub fallback_used: bool,
    pub request: RequestSummary,
}
