//! Metric tables per condition, deltas against the reference condition, and
//! the report files. Report bytes depend only on record payloads, so equal
//! runs give equal digests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, record_file, RunConfig, RunError, KIND_JUDGE, KIND_KEYWORDS, KIND_PREDICTION};
use crate::bench::{
    aggregate_generative, compute_binary_metrics, compute_mmvp_accuracy, information_level, load_benchmark_with,
    BenchmarkKind, BenchmarkSample, Gold, InformationLevel, JudgeResult, LoadOptions, MmvpMode, PredictionRecord,
    LLAVA_CATEGORIES, MMVP_PATTERNS,
};
use crate::keywordgen::KeywordRecord;
use crate::store::read_all_or_empty;

pub const REPORT_DIR: &str = "report";
pub const REPORT_FILES: [&str; 2] = ["metrics.tsv", "summary.txt"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// One value per condition, in condition order.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub run_id: String,
    pub benchmark: BenchmarkKind,
    pub conditions: Vec<String>,
    /// Samples that have results under every condition.
    pub n_samples: usize,
    pub notes: Vec<String>,
    pub rows: Vec<MetricRow>,
}

impl ComparisonReport {
    /// Baseline when present, else the first condition. `None` for a single condition.
    pub fn reference_index(&self) -> Option<usize> {
        if self.conditions.len() < 2 {
            return None;
        }
        Some(self.conditions.iter().position(|c| c == "baseline").unwrap_or(0))
    }

    /// `(label, per-row delta)` for every non-reference condition.
    pub fn deltas(&self) -> Vec<(String, Vec<Option<f64>>)> {
        let Some(r) = self.reference_index() else { return Vec::new() };
        (0..self.conditions.len())
            .filter(|&i| i != r)
            .map(|i| {
                let label = format!("delta({}-{})", self.conditions[i], self.conditions[r]);
                let values = self
                    .rows
                    .iter()
                    .map(|row| match (row.values[i], row.values[r]) {
                        (Some(a), Some(b)) => Some(a - b),
                        _ => None,
                    })
                    .collect();
                (label, values)
            })
            .collect()
    }

    pub fn row(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn value(&self, metric: &str, condition: &str) -> Option<f64> {
        let i = self.conditions.iter().position(|c| c == condition)?;
        self.row(metric)?.values[i]
    }

    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let deltas = self.deltas();
        let mut header = vec!["metric".to_string()];
        header.extend(self.conditions.iter().cloned());
        header.extend(deltas.iter().map(|(l, _)| l.clone()));
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut cells = vec![row.metric.clone()];
                cells.extend(row.values.iter().map(|v| fmt_value(*v)));
                cells.extend(deltas.iter().map(|(_, d)| fmt_value(d[i])));
                cells
            })
            .collect();
        (header, rows)
    }

    pub fn to_tsv(&self) -> String {
        let (header, rows) = self.table();
        let mut out = header.join("\t");
        out.push('\n');
        for r in rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run: {}", self.run_id);
        let _ = writeln!(out, "benchmark: {}", self.benchmark);
        let _ = writeln!(out, "samples: {}", self.n_samples);
        let _ = writeln!(out, "conditions: {}", self.conditions.join(", "));
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out.push('\n');
        let (header, rows) = self.table();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(&header));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        Some(_) | None => "-".to_string(),
    }
}

/// Records a report is computed from.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub predictions: Vec<PredictionRecord>,
    pub judges: HashMap<(String, String), JudgeResult>,
    /// Keyword records by image key.
    pub keywords: HashMap<String, KeywordRecord>,
}

pub fn load_report_inputs(run_dir: &Path) -> Result<ReportInputs, RunError> {
    let mut inputs = ReportInputs::default();
    for env in read_all_or_empty(&run_dir.join(record_file(KIND_PREDICTION)), Some(KIND_PREDICTION))? {
        inputs.predictions.push(env.payload_as()?);
    }
    for env in read_all_or_empty(&run_dir.join(record_file(KIND_JUDGE)), Some(KIND_JUDGE))? {
        let j: JudgeResult = env.payload_as()?;
        inputs.judges.insert((env.sample_id.clone(), env.condition.clone().unwrap_or_default()), j);
    }
    for env in read_all_or_empty(&run_dir.join(record_file(KIND_KEYWORDS)), Some(KIND_KEYWORDS))? {
        inputs.keywords.insert(env.sample_id.clone(), env.payload_as()?);
    }
    Ok(inputs)
}

/// Samples, in benchmark order, that have a prediction (and a judge result
/// for generative benchmarks) under every condition.
fn complete_samples<'a>(
    samples: &'a [BenchmarkSample],
    conditions: &[String],
    inputs: &ReportInputs,
    generative: bool,
) -> Vec<&'a BenchmarkSample> {
    let have: HashSet<(&str, &str)> =
        inputs.predictions.iter().map(|p| (p.sample_id.as_str(), p.condition.as_str())).collect();
    samples
        .iter()
        .filter(|s| {
            conditions.iter().all(|c| {
                have.contains(&(s.sample_id.as_str(), c.as_str()))
                    && (!generative || inputs.judges.contains_key(&(s.sample_id.clone(), c.clone())))
            })
        })
        .collect()
}

struct Ctx<'a> {
    config: &'a RunConfig,
    conditions: &'a [String],
    inputs: &'a ReportInputs,
    by_condition: HashMap<&'a str, Vec<&'a PredictionRecord>>,
}

impl<'a> Ctx<'a> {
    fn preds(&self, condition: &str, subset: &[&BenchmarkSample]) -> Vec<PredictionRecord> {
        let ids: HashSet<&str> = subset.iter().map(|s| s.sample_id.as_str()).collect();
        self.by_condition
            .get(condition)
            .map(|v| v.iter().filter(|p| ids.contains(p.sample_id.as_str())).map(|p| (*p).clone()).collect())
            .unwrap_or_default()
    }

    fn judges(&self, condition: &str, subset: &[&BenchmarkSample]) -> Vec<JudgeResult> {
        subset
            .iter()
            .filter_map(|s| self.inputs.judges.get(&(s.sample_id.clone(), condition.to_string())).cloned())
            .collect()
    }

    /// Named metrics of one condition over `subset`, in row order.
    fn metrics(&self, condition: &str, subset: &[&BenchmarkSample]) -> Result<Vec<(String, Option<f64>)>, RunError> {
        if subset.is_empty() {
            return Ok(Vec::new());
        }
        let preds = self.preds(condition, subset);
        let mut out: Vec<(String, Option<f64>)> = Vec::new();
        match self.config.benchmark {
            BenchmarkKind::PopeAdversarial => {
                let golds: HashMap<String, bool> = subset
                    .iter()
                    .filter_map(|s| match s.gold {
                        Gold::YesNo { yes } => Some((s.sample_id.clone(), yes)),
                        _ => None,
                    })
                    .collect();
                let m = compute_binary_metrics(&preds, &golds)?;
                out.extend([
                    ("accuracy".into(), Some(m.accuracy)),
                    ("precision".into(), Some(m.precision)),
                    ("recall".into(), Some(m.recall)),
                    ("f1".into(), Some(m.f1)),
                    ("yes_ratio".into(), Some(m.yes_ratio)),
                    ("unparseable".into(), Some(m.unparseable as f64)),
                ]);
            }
            BenchmarkKind::Mmvp => {
                let owned: Vec<BenchmarkSample> = subset.iter().map(|s| (*s).clone()).collect();
                let mode = self.config.mmvp_mode;
                let acc = compute_mmvp_accuracy(&preds, &owned, mode)?;
                out.push(("accuracy".into(), Some(acc.overall.accuracy)));
                for p in MMVP_PATTERNS {
                    out.push((format!("accuracy:{p}"), acc.per_pattern.get(p).map(|a| a.accuracy)));
                }
                if mode == MmvpMode::PerQuestion {
                    let pairs = compute_mmvp_accuracy(&preds, &owned, MmvpMode::PerPair).ok();
                    out.push(("accuracy_per_pair".into(), pairs.map(|a| a.overall.accuracy)));
                }
            }
            BenchmarkKind::LlavaWild | BenchmarkKind::Mmhal => {
                let results = self.judges(condition, subset);
                let categories: HashMap<String, String> = subset
                    .iter()
                    .filter_map(|s| s.gold.category().map(|c| (s.sample_id.clone(), c.to_string())))
                    .collect();
                let rep = aggregate_generative(
                    &results,
                    &categories,
                    self.config.benchmark,
                    self.config.hallucination_cutoff,
                )?;
                if self.config.benchmark == BenchmarkKind::LlavaWild {
                    out.push(("relative_score".into(), rep.overall.relative_score));
                    out.push(("mean_candidate".into(), Some(rep.overall.mean_candidate)));
                    out.push(("mean_reference".into(), rep.overall.mean_reference));
                    for c in LLAVA_CATEGORIES {
                        out.push((
                            format!("relative_score:{c}"),
                            rep.per_category.get(c).and_then(|s| s.relative_score),
                        ));
                    }
                } else {
                    out.push(("mean_rating".into(), Some(rep.overall.mean_candidate)));
                    out.push(("hallucination_rate".into(), rep.overall.hallucination_rate));
                    for (c, s) in &rep.per_category {
                        out.push((format!("mean_rating:{c}"), Some(s.mean_candidate)));
                        out.push((format!("hallucination_rate:{c}"), s.hallucination_rate));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Metric names shown in the information-level rows.
    fn level_metrics(&self) -> &'static [&'static str] {
        match self.config.benchmark {
            BenchmarkKind::PopeAdversarial => &["accuracy", "f1", "yes_ratio"],
            BenchmarkKind::Mmvp => &["accuracy"],
            BenchmarkKind::LlavaWild => &["relative_score"],
            BenchmarkKind::Mmhal => &["mean_rating", "hallucination_rate"],
        }
    }
}

/// Merges per-condition `(name, value)` lists into rows, keeping first-seen name order.
fn merge_rows(per_condition: Vec<Vec<(String, Option<f64>)>>, prefix: &str) -> Vec<MetricRow> {
    let n = per_condition.len();
    let mut order: Vec<String> = Vec::new();
    let mut table: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for (i, metrics) in per_condition.into_iter().enumerate() {
        for (name, v) in metrics {
            let key = format!("{prefix}{name}");
            let slot = table.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                vec![None; n]
            });
            slot[i] = v;
        }
    }
    order.into_iter().map(|m| MetricRow { values: table.remove(&m).expect("row present"), metric: m }).collect()
}

/// Builds the metric table for every configured condition.
pub fn build_report(
    config: &RunConfig,
    samples: &[BenchmarkSample],
    inputs: &ReportInputs,
) -> Result<ComparisonReport, RunError> {
    let conditions: Vec<String> = config.conditions.iter().map(|c| c.label()).collect();
    let generative = !config.benchmark.is_discriminative();
    let complete = complete_samples(samples, &conditions, inputs, generative);
    let mut by_condition: HashMap<&str, Vec<&PredictionRecord>> = HashMap::new();
    for p in &inputs.predictions {
        by_condition.entry(p.condition.as_str()).or_default().push(p);
    }
    let ctx = Ctx { config, conditions: &conditions, inputs, by_condition };

    let mut rows =
        merge_rows(ctx.conditions.iter().map(|c| ctx.metrics(c, &complete)).collect::<Result<Vec<_>, _>>()?, "");

    let mut notes = Vec::new();
    if config.benchmark == BenchmarkKind::Mmvp {
        notes.push(format!("mmvp accuracy mode: {}", config.mmvp_mode.as_str()));
    }
    if config.benchmark == BenchmarkKind::Mmhal {
        notes.push(format!("hallucination cutoff: rating < {}", config.hallucination_cutoff));
    }

    let with_level: Vec<(&BenchmarkSample, InformationLevel)> = complete
        .iter()
        .filter_map(|s| inputs.keywords.get(&s.image_ref.to_string()).map(|k| (*s, information_level(k.factual.len()))))
        .collect();
    if !with_level.is_empty() {
        for level in [InformationLevel::Low, InformationLevel::High] {
            let subset: Vec<&BenchmarkSample> =
                with_level.iter().filter(|(_, l)| *l == level).map(|(s, _)| *s).collect();
            let prefix = format!("{}_info:", level.as_str());
            rows.push(MetricRow {
                metric: format!("{prefix}n"),
                values: vec![Some(subset.len() as f64); conditions.len()],
            });
            let per_condition = ctx
                .conditions
                .iter()
                .map(|c| {
                    // per-question accuracy: a pair may straddle both levels
                    let mut m = if config.benchmark == BenchmarkKind::Mmvp {
                        let cfg = RunConfig { mmvp_mode: MmvpMode::PerQuestion, ..config.clone() };
                        Ctx { config: &cfg, conditions: ctx.conditions, inputs, by_condition: ctx.by_condition.clone() }
                            .metrics(c, &subset)?
                    } else {
                        ctx.metrics(c, &subset)?
                    };
                    m.retain(|(name, _)| ctx.level_metrics().contains(&name.as_str()));
                    Ok(m)
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let mut level_rows = merge_rows(per_condition, &prefix);
            if level_rows.is_empty() {
                level_rows = ctx
                    .level_metrics()
                    .iter()
                    .map(|m| MetricRow { metric: format!("{prefix}{m}"), values: vec![None; conditions.len()] })
                    .collect();
            }
            rows.extend(level_rows);
        }
        if config.benchmark == BenchmarkKind::Mmvp {
            notes.push("information-level rows use per-question accuracy".into());
        }
    }

    Ok(ComparisonReport {
        run_id: config.run_id.clone(),
        benchmark: config.benchmark,
        conditions,
        n_samples: complete.len(),
        notes,
        rows,
    })
}

/// Writes the report files and returns their digest.
pub fn write_report(run_dir: &Path, report: &ComparisonReport) -> Result<String, RunError> {
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (name, body) in REPORT_FILES.iter().zip([report.to_tsv(), report.to_summary()]) {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    report_digest(run_dir)
}

/// SHA-256 over the report files' names and bytes, in a fixed order.
pub fn report_digest(run_dir: &Path) -> Result<String, RunError> {
    let mut h = Sha256::new();
    for name in REPORT_FILES {
        let path = run_dir.join(REPORT_DIR).join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub(crate) fn read_config(run_dir: &Path) -> Result<RunConfig, RunError> {
    let path = run_dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

/// Side-by-side table for a finished run with at least two conditions.
pub fn compare_conditions(run_dir: &Path) -> Result<ComparisonReport, RunError> {
    let config = read_config(run_dir)?;
    if config.conditions.len() < 2 {
        return Err(RunError::IncompleteRun(format!("run {} has fewer than two conditions", config.run_id)));
    }
    let samples = load_benchmark_with(
        &config.benchmark_path,
        config.benchmark,
        &LoadOptions { allow_any_pope_split: config.allow_any_pope_split },
    )?;
    let inputs = load_report_inputs(run_dir)?;
    let mut per_condition: HashMap<&str, HashSet<&str>> = HashMap::new();
    for p in &inputs.predictions {
        per_condition.entry(p.condition.as_str()).or_default().insert(p.sample_id.as_str());
    }
    let labels: Vec<String> = config.conditions.iter().map(|c| c.label()).collect();
    let empty = HashSet::new();
    let first = per_condition.get(labels[0].as_str()).unwrap_or(&empty);
    for l in &labels {
        let got = per_condition.get(l.as_str()).unwrap_or(&empty);
        if got.is_empty() {
            return Err(RunError::IncompleteRun(format!("condition {l} has no predictions")));
        }
        if got != first {
            return Err(RunError::IncompleteRun(format!(
                "condition {l} covers a different sample set than {}",
                labels[0]
            )));
        }
    }
    build_report(&config, &samples, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(conditions: &[&str], rows: Vec<(&str, Vec<Option<f64>>)>) -> ComparisonReport {
        ComparisonReport {
            run_id: "r".into(),
            benchmark: BenchmarkKind::PopeAdversarial,
            conditions: conditions.iter().map(|s| s.to_string()).collect(),
            n_samples: 1,
            notes: vec![],
            rows: rows.into_iter().map(|(m, values)| MetricRow { metric: m.into(), values }).collect(),
        }
    }

    #[test]
    fn deltas_against_baseline() {
        let r = report(
            &["inception", "baseline"],
            vec![("accuracy", vec![Some(0.9), Some(0.7)]), ("f1", vec![None, Some(0.5)])],
        );
        let d = r.deltas();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].0, "delta(inception-baseline)");
        assert!((d[0].1[0].unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(d[0].1[1], None);
    }

    #[test]
    fn single_condition_has_no_delta_columns() {
        let r = report(&["baseline"], vec![("accuracy", vec![Some(0.5)])]);
        assert!(r.deltas().is_empty());
        assert_eq!(r.to_tsv(), "metric\tbaseline\naccuracy\t0.5000\n");
    }

    #[test]
    fn tsv_layout() {
        let r = report(&["baseline", "inception"], vec![("accuracy", vec![Some(0.5), Some(0.75)])]);
        assert_eq!(
            r.to_tsv(),
            "metric\tbaseline\tinception\tdelta(inception-baseline)\naccuracy\t0.5000\t0.7500\t0.2500\n"
        );
        assert!(r.to_summary().contains("conditions: baseline, inception"));
    }

    #[test]
    fn merge_keeps_first_seen_order() {
        let rows = merge_rows(
            vec![
                vec![("b".into(), Some(1.0)), ("a".into(), Some(2.0))],
                vec![("a".into(), Some(3.0)), ("c".into(), None)],
            ],
            "x:",
        );
        let names: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(names, ["x:b", "x:a", "x:c"]);
        assert_eq!(rows[1].values, vec![Some(2.0), Some(3.0)]);
    }
}
