//! Judge-model scoring for the generative benchmarks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BenchError, BenchmarkKind, BenchmarkSample};
use crate::gateway::{ChatMessage, ChatModel, ChatRequest};

const LLAVA_TEMPLATE: &str = include_str!("../../prompts/judge_llava.txt");
const MMHAL_TEMPLATE: &str = include_str!("../../prompts/judge_mmhal.txt");

const LLAVA_REASK: &str =
    "Your reply did not start with the two scores. Output a single first line with the two integer scores separated by a space.";
const MMHAL_REASK: &str =
    "Your reply did not contain a single rating. End your reply with one line of the form \"Rating: <k>\".";

/// Ratings strictly below this count as hallucinated.
pub const DEFAULT_HALLUCINATION_CUTOFF: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeScale {
    OneToTen,
    ZeroToSeven,
}

impl JudgeScale {
    pub fn range(self) -> (f64, f64) {
        match self {
            JudgeScale::OneToTen => (1.0, 10.0),
            JudgeScale::ZeroToSeven => (0.0, 7.0),
        }
    }

    pub fn contains(self, v: f64) -> bool {
        let (lo, hi) = self.range();
        v.is_finite() && lo <= v && v <= hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub sample_id: String,
    pub scale: JudgeScale,
    pub reference_score: Option<f64>,
    pub candidate_score: f64,
    pub rationale_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSettings {
    pub model_id: String,
    pub max_tokens: u32,
}

impl JudgeSettings {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), max_tokens: 1024 }
    }
}

/// Single-pass `{name}` substitution; unknown braces are copied through.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in slots {
            if let Some(after) =
                tail.strip_prefix('{').and_then(|t| t.strip_prefix(name)).and_then(|t| t.strip_prefix('}'))
            {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// The judge prompt for one sample and candidate answer.
pub fn judge_prompt(sample: &BenchmarkSample, candidate: &str) -> Result<String, BenchError> {
    let reference = sample.gold.reference_text().ok_or(BenchError::NotGenerative(sample.benchmark))?;
    let meta = |k: &str| sample.metadata.get(k).map(String::as_str).unwrap_or("");
    match sample.benchmark {
        BenchmarkKind::LlavaWild => {
            let context = if meta("context").is_empty() { meta("image_contents") } else { meta("context") };
            Ok(fill(
                LLAVA_TEMPLATE,
                &[
                    ("context", context),
                    ("question", &sample.question),
                    ("reference", reference),
                    ("candidate", candidate),
                ],
            ))
        }
        BenchmarkKind::Mmhal => Ok(fill(
            MMHAL_TEMPLATE,
            &[
                ("image_contents", meta("image_contents")),
                ("question", &sample.question),
                ("reference", reference),
                ("candidate", candidate),
            ],
        )),
        other => Err(BenchError::NotGenerative(other)),
    }
}

static LEADING_PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+(?:\.\d+)?)\s*[,\s]\s*(\d+(?:\.\d+)?)\b").expect("valid regex"));
static RATING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\brating\s*:\s*(\d+)").expect("valid regex"));

/// `(reference, candidate)` from the first non-empty line, both within 1..=10.
pub fn parse_llava_scores(reply: &str) -> Option<(f64, f64)> {
    let line = reply.lines().find(|l| !l.trim().is_empty())?;
    let c = LEADING_PAIR.captures(line)?;
    let a: f64 = c[1].parse().ok()?;
    let b: f64 = c[2].parse().ok()?;
    (JudgeScale::OneToTen.contains(a) && JudgeScale::OneToTen.contains(b)).then_some((a, b))
}

/// The rating named by every `Rating: k` occurrence, within 0..=7. Several
/// different ratings make the reply ambiguous.
pub fn parse_mmhal_rating(reply: &str) -> Option<f64> {
    let values: BTreeSet<u32> = RATING.captures_iter(reply).filter_map(|c| c[1].parse().ok()).collect();
    match values.len() {
        1 => {
            let v = *values.first()? as f64;
            JudgeScale::ZeroToSeven.contains(v).then_some(v)
        }
        _ => None,
    }
}

/// Scores `candidate` against the sample's reference, re-asking once when
/// the first reply does not parse.
pub fn judge_generative(
    judge: &dyn ChatModel,
    sample: &BenchmarkSample,
    candidate: &str,
    settings: &JudgeSettings,
) -> Result<JudgeResult, BenchError> {
    let scale = sample.benchmark.judge_scale().ok_or(BenchError::NotGenerative(sample.benchmark))?;
    let prompt = judge_prompt(sample, candidate)?;
    let reask = match scale {
        JudgeScale::OneToTen => LLAVA_REASK,
        JudgeScale::ZeroToSeven => MMHAL_REASK,
    };
    let parse = |text: &str| -> Option<(Option<f64>, f64)> {
        match scale {
            JudgeScale::OneToTen => parse_llava_scores(text).map(|(r, c)| (Some(r), c)),
            JudgeScale::ZeroToSeven => parse_mmhal_rating(text).map(|c| (None, c)),
        }
    };
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut last = String::new();
    for attempt in 0..2 {
        if attempt == 1 {
            messages.push(ChatMessage::assistant(last.clone()));
            messages.push(ChatMessage::user(reask));
        }
        let req = ChatRequest {
            model_id: settings.model_id.clone(),
            messages: messages.clone(),
            temperature: 0.0,
            max_tokens: settings.max_tokens,
            seed: None,
        };
        last = judge.chat(&req)?.text;
        if let Some((reference_score, candidate_score)) = parse(&last) {
            return Ok(JudgeResult {
                sample_id: sample.sample_id.clone(),
                scale,
                reference_score,
                candidate_score,
                rationale_text: last,
            });
        }
        tracing::debug!(sample = %sample.sample_id, attempt, "judge reply did not parse");
    }
    Err(BenchError::JudgeParse { raw: last })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeStats {
    pub n: usize,
    pub mean_candidate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reference: Option<f64>,
    /// `100 * mean(candidate) / mean(reference)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_score: Option<f64>,
    /// Share of ratings below the cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallucination_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeReport {
    pub kind: BenchmarkKind,
    pub overall: GenerativeStats,
    pub per_category: BTreeMap<String, GenerativeStats>,
}

fn stats(results: &[&JudgeResult], kind: BenchmarkKind, cutoff: f64) -> GenerativeStats {
    let n = results.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>| xs.sum::<f64>() / n as f64;
    let mean_candidate = mean(&mut results.iter().map(|r| r.candidate_score));
    match kind {
        BenchmarkKind::LlavaWild => {
            let mean_reference = mean(&mut results.iter().map(|r| r.reference_score.unwrap_or(f64::NAN)));
            GenerativeStats {
                n,
                mean_candidate,
                mean_reference: Some(mean_reference),
                relative_score: Some(100.0 * mean_candidate / mean_reference),
                hallucination_rate: None,
            }
        }
        _ => GenerativeStats {
            n,
            mean_candidate,
            mean_reference: None,
            relative_score: None,
            hallucination_rate: Some(results.iter().filter(|r| r.candidate_score < cutoff).count() as f64 / n as f64),
        },
    }
}

/// Overall and per-category judge statistics. `categories` maps sample ids
/// to their category; uncategorized samples only count toward `overall`.
pub fn aggregate_generative(
    results: &[JudgeResult],
    categories: &HashMap<String, String>,
    kind: BenchmarkKind,
    cutoff: f64,
) -> Result<GenerativeReport, BenchError> {
    if results.is_empty() {
        return Err(BenchError::Empty);
    }
    let all: Vec<&JudgeResult> = results.iter().collect();
    let mut grouped: BTreeMap<String, Vec<&JudgeResult>> = BTreeMap::new();
    for r in results {
        if let Some(c) = categories.get(&r.sample_id) {
            grouped.entry(c.clone()).or_default().push(r);
        }
    }
    Ok(GenerativeReport {
        kind,
        overall: stats(&all, kind, cutoff),
        per_category: grouped.into_iter().map(|(c, rs)| (c, stats(&rs, kind, cutoff))).collect(),
    })
}
