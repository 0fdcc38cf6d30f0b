use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cfinception::bench::BenchmarkKind;
use cfinception::dvp::{aggregate_trends, iteration_trend, select_optimal, Stages, TrendRow};
use cfinception::gateway::{Backends, GatewayError, GatewayStats, ImageRef, Limiter, ResponseCache};
use cfinception::inception::{infer, infer_baseline, InferenceSettings};
use cfinception::keywordgen::{generate_keywords, GenerationSettings, KeywordError, KeywordRecord};
use cfinception::runner::{
    compare_conditions, execute, parse_conditions, plan, write_report, CandidatesPayload, OptimalPayload, RunConfig,
    RunError, RunStatus, KIND_CANDIDATES, KIND_KEYWORDS, KIND_OPTIMAL, REPORT_FILES,
};
use cfinception::store::{read_all_or_empty, RecordEnvelope, RecordKey, RecordWriter};
use serde_json::json;

use crate::plot::trend_svg;
use crate::settings::{Settings, UsageError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FATAL: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "gif", "webp", "bmp"];
const CACHE_FILE: &str = "cache.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

/// 0 when nothing failed, 2 when some items failed, 1 when every item failed.
fn item_exit_code(succeeded: usize, failed: usize) -> u8 {
    match (succeeded, failed) {
        (_, 0) => EXIT_OK,
        (0, _) => EXIT_FATAL,
        _ => EXIT_PARTIAL,
    }
}

fn print_dry_run(settings: &Settings, planned: &[(&str, String)]) {
    print!("# resolved settings\n{}", settings.describe());
    println!("# planned backend calls (nothing is sent)");
    for (k, v) in planned {
        println!("{k} = {v}");
    }
}

fn run_dir(settings: &Settings, default_id: &str) -> PathBuf {
    let id = if settings.is_set("run_id") { settings.raw("run_id") } else { default_id };
    settings.path("out").join(id)
}

fn build_backends(settings: &Settings, cache: ResponseCache) -> Result<(Backends, Arc<GatewayStats>)> {
    let set = settings.backends()?;
    set.validate()?;
    let stats = Arc::new(GatewayStats::default());
    let limiter = Arc::new(Limiter::new(settings.parse("parallelism")?));
    let backends = set.build(Arc::new(cache), stats.clone(), limiter, None)?;
    Ok((backends, stats))
}

fn generation_settings(settings: &Settings) -> Result<GenerationSettings> {
    let set = settings.backends()?;
    Ok(GenerationSettings {
        temperature: settings.parse("keyword_temperature")?,
        seed: settings.parse_opt("seed")?,
        ..GenerationSettings::new(set.keyword_model_id())
    })
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut images: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    images.sort();
    Ok(images)
}

fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn record_key(kind: &str, run_id: &str, sample_id: &str, condition: Option<&str>) -> RecordKey {
    RecordKey {
        kind: kind.into(),
        run_id: run_id.into(),
        sample_id: sample_id.into(),
        condition: condition.map(str::to_string),
    }
}

fn run_id_of(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn keywords(settings: &Settings, image_dir: &Path, dry_run: bool) -> Result<u8> {
    let dir = run_dir(settings, "keywords");
    let run_id = run_id_of(&dir);
    let dvp = settings.dvp()?;
    let profile = settings.profile()?;
    let gen = generation_settings(settings)?;
    let resume: bool = settings.parse("resume")?;
    let images = list_images(image_dir)?;
    if images.is_empty() {
        bail!("no images ({}) in {}", IMAGE_EXTENSIONS.join(", "), image_dir.display());
    }
    let path = dir.join("keywords.jsonl");
    let existing = read_all_or_empty(&path, Some(KIND_KEYWORDS))?;
    if !existing.is_empty() && !resume {
        return Err(RunError::RunDirNotEmpty(dir).into());
    }
    if dry_run {
        settings.backends()?.validate()?;
        let done = images.iter().filter(|p| existing.iter().any(|e| e.sample_id == p.display().to_string())).count();
        print_dry_run(
            settings,
            &[("images", images.len().to_string()), ("keyword_calls", (images.len() - done).to_string())],
        );
        return Ok(EXIT_OK);
    }

    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let (backends, stats) = build_backends(settings, ResponseCache::persistent(dir.join(CACHE_FILE))?)?;
    let mut writer = RecordWriter::open(&path)?;
    let (mut written, mut skipped, mut failures) = (0usize, 0usize, Vec::new());
    for image in &images {
        let key = image.display().to_string();
        if writer.contains(&record_key(KIND_KEYWORDS, &run_id, &key, None)) {
            skipped += 1;
            continue;
        }
        match generate_keywords(&*backends.keyword, &ImageRef::new(image), dvp.n_iterations, &gen) {
            Ok(record) => {
                writer.append(&RecordEnvelope::new(KIND_KEYWORDS, &run_id, &key, None, &record)?)?;
                written += 1;
            }
            Err(KeywordError::Gateway(e @ GatewayError::Auth(_))) => return Err(e.into()),
            Err(e) => {
                eprintln!("warning: skipping {key}: {e}");
                failures.push(json!({ "image": key, "error": e.to_string() }));
            }
        }
    }
    write_manifest(
        &dir,
        &json!({
            "command": "keywords",
            "run_id": run_id,
            "profile": profile,
            "dvp": dvp,
            "generation": gen,
            "backends": settings.backends()?,
            "images_total": images.len(),
            "records_written": written,
            "records_skipped": skipped,
            "failures": failures,
            "traffic": stats.snapshot(),
        }),
    )?;
    println!(
        "{written} keyword records written to {} ({skipped} already present, {} failed)",
        path.display(),
        failures.len()
    );
    Ok(item_exit_code(written + skipped, failures.len()))
}

fn stage_label(stages: Stages) -> &'static str {
    match stages {
        Stages::Both => "inception",
        Stages::VisualOnly => "vv_only",
        Stages::LinguisticOnly => "lv_only",
    }
}

pub fn verify(settings: &Settings, dir: &Path, dry_run: bool) -> Result<u8> {
    let dvp = settings.dvp()?;
    let records = read_all_or_empty(&dir.join("keywords.jsonl"), Some(KIND_KEYWORDS))?;
    if records.is_empty() {
        return Err(RunError::IncompleteRun(format!("no keyword records in {}", dir.display())).into());
    }
    let records: Vec<(String, String, KeywordRecord)> = records
        .into_iter()
        .map(|e| Ok((e.run_id.clone(), e.sample_id.clone(), e.payload_as()?)))
        .collect::<Result<_>>()?;
    if dry_run {
        settings.backends()?.validate()?;
        let candidates: usize =
            records.iter().map(|(_, _, r)| r.counterfactual_sets.iter().map(Vec::len).sum::<usize>()).sum();
        print_dry_run(
            settings,
            &[
                ("images", records.len().to_string()),
                ("similarity_calls", candidates.to_string()),
                ("nli_calls", candidates.to_string()),
            ],
        );
        return Ok(EXIT_OK);
    }

    let condition = stage_label(dvp.stages);
    let (backends, _) = build_backends(settings, ResponseCache::persistent(dir.join(CACHE_FILE))?)?;
    let mut candidates_out = RecordWriter::open(dir.join("candidates.jsonl"))?;
    let mut optimal_out = RecordWriter::open(dir.join("optimal.jsonl"))?;
    let (mut ok, mut failed) = (0, 0);
    println!("image\tcondition\tselected\tfallback");
    for (run_id, key, record) in &records {
        if optimal_out.contains(&record_key(KIND_OPTIMAL, run_id, key, Some(condition))) {
            ok += 1;
            continue;
        }
        match select_optimal(record, &record.image_ref, &dvp, &*backends.visual, &*backends.nli) {
            Ok((optimal, outcome)) => {
                if !candidates_out.contains(&record_key(KIND_CANDIDATES, run_id, key, None)) {
                    let payload = CandidatesPayload { image_ref: record.image_ref.clone(), outcome };
                    candidates_out.append(&RecordEnvelope::new(KIND_CANDIDATES, run_id, key, None, &payload)?)?;
                }
                println!("{key}\t{condition}\t{}\t{}", optimal.keywords.join(", "), optimal.fallback_used);
                let payload =
                    OptimalPayload { image_ref: record.image_ref.clone(), dvp: dvp.clone(), optimal, mixed: None };
                optimal_out.append(&RecordEnvelope::new(
                    KIND_OPTIMAL,
                    run_id,
                    key,
                    Some(condition.into()),
                    &payload,
                )?)?;
                ok += 1;
            }
            Err(e) => {
                eprintln!("warning: {key}: {e}");
                failed += 1;
            }
        }
    }
    Ok(item_exit_code(ok, failed))
}

pub fn infer_one(settings: &Settings, image: &Path, question: &str, baseline: bool, dry_run: bool) -> Result<u8> {
    let dvp = settings.dvp()?;
    let gen = generation_settings(settings)?;
    let set = settings.backends()?;
    let max_tokens = settings.parse_opt("max_tokens")?.unwrap_or(InferenceSettings::GENERATIVE_MAX_TOKENS);
    let inference =
        InferenceSettings { model_id: set.chat.model_id.clone(), max_tokens, seed: settings.parse_opt("seed")? };
    if question.trim().is_empty() {
        return Err(UsageError("--question must not be empty".into()).into());
    }
    if dry_run {
        set.validate()?;
        print_dry_run(
            settings,
            &[
                ("keyword_calls", "1".into()),
                ("scorer_calls_per_candidate", "2".into()),
                ("inference_calls", if baseline { "2" } else { "1" }.into()),
            ],
        );
        return Ok(EXIT_OK);
    }

    let (backends, _) = build_backends(settings, ResponseCache::in_memory())?;
    let image_ref = ImageRef::new(image);
    let record = generate_keywords(&*backends.keyword, &image_ref, dvp.n_iterations, &gen)?;
    let (optimal, _) = select_optimal(&record, &image_ref, &dvp, &*backends.visual, &*backends.nli)?;
    let answer = infer(&*backends.chat, &image_ref, question, &optimal, &inference)?;
    let mut out = json!({
        "image": image.display().to_string(),
        "question": question,
        "factual_keywords": record.factual,
        "counterfactual_keywords": optimal.keywords,
        "fallback_used": optimal.fallback_used,
        "answer": answer.text,
    });
    if baseline {
        out["baseline_answer"] = json!(infer_baseline(&*backends.chat, &image_ref, question, &inference)?.text);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(EXIT_OK)
}

pub fn eval(settings: &Settings, benchmark: &Path, dry_run: bool) -> Result<u8> {
    if !settings.is_set("kind") {
        return Err(UsageError("eval needs --kind (pope_adversarial, mmvp, llava_wild or mmhal)".into()).into());
    }
    let kind: BenchmarkKind = settings.parse("kind")?;
    let dir = run_dir(settings, kind.as_str());
    let out_dir = dir.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut config = RunConfig::new(run_id_of(&dir), out_dir, kind, benchmark, settings.backends()?);
    config.dvp = settings.dvp()?;
    config.conditions = parse_conditions(settings.raw("conditions")).map_err(UsageError)?;
    config.keyword_temperature = settings.parse("keyword_temperature")?;
    config.max_tokens = settings.parse_opt("max_tokens")?;
    config.seed = settings.parse_opt("seed")?;
    config.mmvp_mode = settings.mmvp_mode()?;
    config.hallucination_cutoff = settings.parse("hallucination_cutoff")?;
    config.failure_cap = settings.parse("failure_cap")?;
    config.parallelism = settings.parse("parallelism")?;
    config.resume = settings.parse("resume")?;
    config.allow_any_pope_split = settings.parse("allow_any_pope_split")?;
    config.validate()?;

    if dry_run {
        let p = plan(&config)?;
        print_dry_run(
            settings,
            &[
                ("run_dir", config.run_dir().display().to_string()),
                ("conditions", p.conditions.join(",")),
                ("samples", p.samples.to_string()),
                ("samples_done", p.samples_done.to_string()),
                ("unique_images", p.unique_images.to_string()),
                ("keyword_calls", p.keyword_calls.to_string()),
                ("scorer_calls_per_candidate", p.scorer_calls_per_candidate.to_string()),
                ("inference_calls", p.inference_calls.to_string()),
                ("judge_calls", p.judge_calls.to_string()),
            ],
        );
        return Ok(EXIT_OK);
    }

    let manifest = execute(&config)?;
    let summary = config.run_dir().join("report").join(REPORT_FILES[1]);
    if summary.exists() {
        print!("{}", std::fs::read_to_string(&summary)?);
    }
    for f in &manifest.failures {
        eprintln!("warning: sample {} failed: {}", f.sample_id, f.error);
    }
    eprintln!("run directory: {}", config.run_dir().display());
    Ok(match manifest.status {
        RunStatus::Completed => EXIT_OK,
        RunStatus::Partial | RunStatus::Interrupted => EXIT_PARTIAL,
        RunStatus::Failed => EXIT_FATAL,
    })
}

fn format_trend(label: &str, rows: &[TrendRow]) -> String {
    rows.iter()
        .map(|r| format!("{label}\t{}\t{}\t{:.4}\t{:.4}\n", r.iteration, r.count, r.mean_visual, r.mean_contradiction))
        .collect()
}

pub fn trend(dir: &Path, plot: Option<&Path>, dry_run: bool) -> Result<u8> {
    let path = dir.join("candidates.jsonl");
    if dry_run {
        println!("# planned backend calls (nothing is sent)\nbackend_calls = 0\nreads = {}", path.display());
        return Ok(EXIT_OK);
    }
    let mut per_image: BTreeMap<String, Vec<TrendRow>> = BTreeMap::new();
    for env in read_all_or_empty(&path, Some(KIND_CANDIDATES))? {
        let payload: CandidatesPayload = env.payload_as()?;
        if !payload.outcome.candidates.is_empty() {
            per_image.insert(env.sample_id, iteration_trend(&payload.outcome.candidates));
        }
    }
    if per_image.is_empty() {
        return Err(RunError::IncompleteRun(format!("no scored candidates in {}", dir.display())).into());
    }
    let rows: Vec<Vec<TrendRow>> = per_image.values().cloned().collect();
    let aggregate = aggregate_trends(&rows);
    let mut table = String::from("image\titeration\tcount\tmean_visual\tmean_contradiction\n");
    for (image, rows) in &per_image {
        table.push_str(&format_trend(image, rows));
    }
    table.push_str(&format_trend("aggregate", &aggregate));
    print!("{table}");
    if let Some(plot) = plot {
        std::fs::write(plot, trend_svg(&aggregate)).with_context(|| format!("cannot write {}", plot.display()))?;
        eprintln!("plot written to {}", plot.display());
    }
    Ok(EXIT_OK)
}

pub fn report(dir: &Path, dry_run: bool) -> Result<u8> {
    let report = compare_conditions(dir)?;
    if dry_run {
        println!(
            "# planned backend calls (nothing is sent)\nbackend_calls = 0\nwrites = {}",
            dir.join("report").display()
        );
        return Ok(EXIT_OK);
    }
    let digest = write_report(dir, &report)?;
    print!("{}", report.to_summary());
    eprintln!("report digest: {digest}");
    Ok(EXIT_OK)
}
