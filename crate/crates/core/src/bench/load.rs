//! Dataset loaders. Image paths are resolved against the dataset file's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use super::{
    extract::parse_options, BenchError, BenchmarkKind, BenchmarkSample, Gold, LLAVA_CATEGORIES, MMVP_PATTERNS,
};
use crate::gateway::ImageRef;

pub const POPE_DEFAULT_SPLIT: &str = "adversarial";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Accept POPE records whose `split` is not adversarial.
    pub allow_any_pope_split: bool,
}

pub fn load_benchmark(path: &Path, kind: BenchmarkKind) -> Result<Vec<BenchmarkSample>, BenchError> {
    load_benchmark_with(path, kind, &LoadOptions::default())
}

pub fn load_benchmark_with(
    path: &Path,
    kind: BenchmarkKind,
    opts: &LoadOptions,
) -> Result<Vec<BenchmarkSample>, BenchError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    let ctx = Ctx { path, base: path.parent().map(Path::to_path_buf).unwrap_or_default() };
    let samples = match kind {
        BenchmarkKind::PopeAdversarial => load_pope(&ctx, &text, opts)?,
        BenchmarkKind::Mmvp => load_mmvp(&ctx, &text)?,
        BenchmarkKind::LlavaWild | BenchmarkKind::Mmhal => load_generative(&ctx, &text, kind)?,
    };
    Ok(samples)
}

struct Ctx<'a> {
    path: &'a Path,
    base: PathBuf,
}

impl Ctx<'_> {
    fn schema(&self, line: usize, reason: impl Into<String>) -> BenchError {
        BenchError::Schema { path: self.path.display().to_string(), line, reason: reason.into() }
    }

    fn image(&self, raw: &str) -> ImageRef {
        let p = Path::new(raw);
        if p.is_absolute() {
            ImageRef::new(p)
        } else {
            ImageRef::new(self.base.join(p))
        }
    }

    fn check_unique(&self, seen: &mut HashSet<String>, id: &str, line: usize) -> Result<(), BenchError> {
        if id.trim().is_empty() {
            return Err(self.schema(line, "empty id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(self.schema(line, format!("duplicate id {id:?}")));
        }
        Ok(())
    }
}

/// Ids may be written as strings or integers.
fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn non_empty<'a>(ctx: &Ctx<'_>, line: usize, field: &str, v: &'a str) -> Result<&'a str, BenchError> {
    if v.trim().is_empty() {
        Err(ctx.schema(line, format!("field {field:?} is empty")))
    } else {
        Ok(v)
    }
}

fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

#[derive(Deserialize)]
struct PopeRow {
    id: Value,
    image: String,
    text: String,
    label: String,
    #[serde(default)]
    split: Option<String>,
}

fn load_pope(ctx: &Ctx<'_>, text: &str, opts: &LoadOptions) -> Result<Vec<BenchmarkSample>, BenchError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in jsonl_lines(text) {
        let row: PopeRow = serde_json::from_str(raw).map_err(|e| ctx.schema(line, e.to_string()))?;
        let id = id_string(&row.id).ok_or_else(|| ctx.schema(line, "id must be a string or integer"))?;
        ctx.check_unique(&mut seen, &id, line)?;
        let yes = match row.label.trim().to_ascii_lowercase().as_str() {
            "yes" => true,
            "no" => false,
            other => return Err(ctx.schema(line, format!("label must be yes or no, got {other:?}"))),
        };
        let split = row.split.unwrap_or_else(|| POPE_DEFAULT_SPLIT.to_string());
        if split != POPE_DEFAULT_SPLIT && !opts.allow_any_pope_split {
            return Err(ctx.schema(line, format!("split {split:?} is not {POPE_DEFAULT_SPLIT}")));
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("split".to_string(), split);
        out.push(BenchmarkSample {
            sample_id: id,
            benchmark: BenchmarkKind::PopeAdversarial,
            image_ref: ctx.image(non_empty(ctx, line, "image", &row.image)?),
            question: non_empty(ctx, line, "text", &row.text)?.to_string(),
            gold: Gold::YesNo { yes },
            metadata,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct MmvpRow {
    index: String,
    #[serde(default)]
    pair_id: String,
    pattern: String,
    question: String,
    options: String,
    answer: String,
    #[serde(default)]
    image: Option<String>,
}

/// Canonical pattern name, matched case-insensitively.
fn canonical_pattern(raw: &str) -> Option<&'static str> {
    MMVP_PATTERNS.iter().copied().find(|p| p.eq_ignore_ascii_case(raw.trim()))
}

fn load_mmvp(ctx: &Ctx<'_>, text: &str) -> Result<Vec<BenchmarkSample>, BenchError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<MmvpRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| ctx.schema(line, e.to_string()))?;
        ctx.check_unique(&mut seen, &row.index, line)?;
        let pattern = canonical_pattern(&row.pattern).ok_or_else(|| BenchError::UnknownPattern {
            path: ctx.path.display().to_string(),
            line,
            pattern: row.pattern.clone(),
        })?;
        let choices = parse_options(&row.options);
        if choices.len() < 2 {
            return Err(ctx.schema(line, format!("options {:?} must list at least two labeled choices", row.options)));
        }
        let label = row.answer.trim().trim_start_matches('(').trim_end_matches(')').trim().to_ascii_lowercase();
        if !choices.iter().any(|(l, _)| *l == label) {
            return Err(ctx.schema(line, format!("answer {:?} is not one of the option labels", row.answer)));
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("pattern".to_string(), pattern.to_string());
        if !row.pair_id.is_empty() {
            metadata.insert("pair_id".to_string(), row.pair_id.clone());
        }
        let image = row.image.filter(|s| !s.is_empty()).unwrap_or_else(|| format!("{}.jpg", row.index));
        out.push(BenchmarkSample {
            sample_id: row.index.clone(),
            benchmark: BenchmarkKind::Mmvp,
            image_ref: ctx.image(&image),
            question: format!("{} {}", non_empty(ctx, line, "question", &row.question)?, row.options),
            gold: Gold::Option { label, choices },
            metadata,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct GenerativeRow {
    id: Value,
    image: String,
    question: String,
    #[serde(default)]
    category: Option<String>,
    reference: String,
    #[serde(default)]
    image_contents: Option<String>,
}

fn load_generative(ctx: &Ctx<'_>, text: &str, kind: BenchmarkKind) -> Result<Vec<BenchmarkSample>, BenchError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in jsonl_lines(text) {
        let row: GenerativeRow = serde_json::from_str(raw).map_err(|e| ctx.schema(line, e.to_string()))?;
        let id = id_string(&row.id).ok_or_else(|| ctx.schema(line, "id must be a string or integer"))?;
        ctx.check_unique(&mut seen, &id, line)?;
        let reference = non_empty(ctx, line, "reference", &row.reference)?.to_string();
        let category = row.category.map(|c| c.trim().to_string()).filter(|c| !c.is_empty());
        let gold = match (kind, category) {
            (BenchmarkKind::LlavaWild, Some(c)) if LLAVA_CATEGORIES.contains(&c.as_str()) => {
                Gold::ReferenceWithCategory { text: reference, category: c }
            }
            (BenchmarkKind::LlavaWild, c) => {
                return Err(ctx.schema(line, format!("category {c:?} must be one of {}", LLAVA_CATEGORIES.join(", "))))
            }
            (_, Some(c)) => Gold::ReferenceWithCategory { text: reference, category: c },
            (_, None) => Gold::Reference { text: reference },
        };
        let mut metadata = BTreeMap::new();
        if let Some(c) = gold.category() {
            metadata.insert("category".to_string(), c.to_string());
        }
        if let Some(ic) = row.image_contents {
            metadata.insert("image_contents".to_string(), ic);
        }
        out.push(BenchmarkSample {
            sample_id: id,
            benchmark: kind,
            image_ref: ctx.image(non_empty(ctx, line, "image", &row.image)?),
            question: non_empty(ctx, line, "question", &row.question)?.to_string(),
            gold,
            metadata,
        });
    }
    Ok(out)
}
