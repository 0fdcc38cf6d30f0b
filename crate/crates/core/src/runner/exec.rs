//! Run execution: a worker pool processes samples, the calling thread writes
//! their records in benchmark order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::{build_report, load_report_inputs, read_config, write_report};
use super::{
    io_err, record_file, Condition, RunConfig, RunError, RunManifest, RunStatus, SampleFailure, KIND_CANDIDATES,
    KIND_JUDGE, KIND_KEYWORDS, KIND_OPTIMAL, KIND_PREDICTION, RECORD_FILES,
};
use crate::bench::{
    extract_option, extract_yes_no, judge_generative, load_benchmark_with, BenchError, BenchmarkSample, Extracted,
    Gold, JudgeSettings, LoadOptions, PredictionRecord, RequestSummary, YesNo,
};
use crate::dvp::{score_candidates, select_from_candidates, DvpConfig, OptimalKeywords, ScoringOutcome};
use crate::gateway::{Backends, GatewayError, GatewayStats, ImageRef, Limiter, ResponseCache, Transport};
use crate::inception::{baseline_request, inception_request, InceptionError, InceptionTemplate, InferenceSettings};
use crate::keywordgen::{
    generate_keywords, mix_keywords, GenerationSettings, KeywordError, KeywordRecord, MixedKeywordSet,
};
use crate::store::{read_all_or_empty, RecordEnvelope, RecordWriter, StoreError};

const CONFIG_FILE: &str = "config.json";
const MANIFEST_FILE: &str = "manifest.json";
const CACHE_FILE: &str = "cache.jsonl";

/// Scored candidates for one image, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatesPayload {
    pub image_ref: ImageRef,
    pub outcome: ScoringOutcome,
}

/// Keywords selected for one image under one condition, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPayload {
    pub image_ref: ImageRef,
    pub dvp: DvpConfig,
    pub optimal: OptimalKeywords,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed: Option<MixedKeywordSet>,
}

/// Backend traffic a run would need, computed without contacting any backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_id: String,
    pub samples: usize,
    /// Samples a resumed run would skip.
    pub samples_done: usize,
    pub unique_images: usize,
    pub conditions: Vec<String>,
    pub keyword_calls: usize,
    pub inference_calls: usize,
    /// Lower bound; an unparseable judge reply costs one more call.
    pub judge_calls: usize,
    /// Every scored candidate costs one similarity and one NLI call.
    pub scorer_calls_per_candidate: usize,
}

/// Counts the work `execute` would do. Reads the benchmark and any existing
/// run records; never touches a backend.
pub fn plan(config: &RunConfig) -> Result<RunPlan, RunError> {
    config.validate()?;
    let samples = load_samples(config)?;
    let done = if config.resume { done_samples(config, &samples)? } else { HashSet::new() };
    let todo: Vec<&BenchmarkSample> = samples.iter().filter(|s| !done.contains(&s.sample_id)).collect();
    let images: HashSet<&ImageRef> = todo.iter().map(|s| &s.image_ref).collect();
    let all_images: HashSet<&ImageRef> = samples.iter().map(|s| &s.image_ref).collect();
    let n_cond = config.conditions.len();
    Ok(RunPlan {
        run_id: config.run_id.clone(),
        samples: samples.len(),
        samples_done: done.len(),
        unique_images: all_images.len(),
        conditions: config.conditions.iter().map(Condition::label).collect(),
        keyword_calls: if config.needs_keywords() { images.len() } else { 0 },
        inference_calls: todo.len() * n_cond,
        judge_calls: if config.benchmark.judge_scale().is_some() { todo.len() * n_cond } else { 0 },
        scorer_calls_per_candidate: 2,
    })
}

/// Runs the configured experiment with the transports the backend configs imply.
pub fn execute(config: &RunConfig) -> Result<RunManifest, RunError> {
    execute_inner(config, None)
}

/// Runs with every backend role routed through `transport`.
pub fn execute_with_transport(config: &RunConfig, transport: Arc<dyn Transport>) -> Result<RunManifest, RunError> {
    execute_inner(config, Some(transport))
}

fn load_samples(config: &RunConfig) -> Result<Vec<BenchmarkSample>, RunError> {
    let samples = load_benchmark_with(
        &config.benchmark_path,
        config.benchmark,
        &LoadOptions { allow_any_pope_split: config.allow_any_pope_split },
    )?;
    if samples.is_empty() {
        return Err(RunError::Config(format!("{} holds no samples", config.benchmark_path.display())));
    }
    Ok(samples)
}

/// Samples whose every condition already has its final record.
fn done_samples(config: &RunConfig, samples: &[BenchmarkSample]) -> Result<HashSet<String>, RunError> {
    let dir = config.run_dir();
    let final_kind = if config.benchmark.judge_scale().is_some() { KIND_JUDGE } else { KIND_PREDICTION };
    let have: HashSet<(String, Option<String>)> =
        read_all_or_empty(&dir.join(record_file(final_kind)), Some(final_kind))?
            .into_iter()
            .filter(|e| e.run_id == config.run_id)
            .map(|e| (e.sample_id, e.condition))
            .collect();
    Ok(samples
        .iter()
        .filter(|s| config.conditions.iter().all(|c| have.contains(&(s.sample_id.clone(), Some(c.label())))))
        .map(|s| s.sample_id.clone())
        .collect())
}

/// Creates the run directory, or checks that an existing one belongs to this config.
fn prepare_run_dir(config: &RunConfig) -> Result<(), RunError> {
    let dir = config.run_dir();
    let config_path = dir.join(CONFIG_FILE);
    if config_path.exists() {
        if !config.resume {
            return Err(RunError::RunDirNotEmpty(dir));
        }
        let previous = read_config(&dir)?;
        if previous.identity() != config.identity() {
            return Err(RunError::ConfigMismatch(dir));
        }
        return Ok(());
    }
    if dir.exists() && fs::read_dir(&dir).map_err(io_err(&dir))?.next().is_some() && !config.resume {
        return Err(RunError::RunDirNotEmpty(dir));
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let body = serde_json::to_string_pretty(&config.identity()).expect("configs serialize");
    fs::write(&config_path, body + "\n").map_err(io_err(&config_path))?;
    Ok(())
}

/// Why one sample could not be completed.
struct SampleError {
    message: String,
    /// Failures that would recur on every sample, such as rejected credentials.
    fatal: bool,
}

impl SampleError {
    fn from_gateway(stage: &str, e: &GatewayError) -> Self {
        Self { message: format!("{stage}: {e}"), fatal: matches!(e, GatewayError::Auth(_)) }
    }

    fn other(stage: &str, e: impl std::fmt::Display) -> Self {
        Self { message: format!("{stage}: {e}"), fatal: false }
    }
}

impl From<StoreError> for SampleError {
    fn from(e: StoreError) -> Self {
        Self::other("record", e)
    }
}

fn keyword_err(e: KeywordError) -> SampleError {
    match &e {
        KeywordError::Gateway(g) => SampleError::from_gateway("keyword generation", g),
        _ => SampleError::other("keyword generation", e),
    }
}

fn inception_err(e: InceptionError) -> SampleError {
    match &e {
        InceptionError::Gateway(g) => SampleError::from_gateway("inference", g),
        _ => SampleError::other("inference", e),
    }
}

fn bench_err(e: BenchError) -> SampleError {
    match &e {
        BenchError::Gateway(g) => SampleError::from_gateway("judge", g),
        _ => SampleError::other("judge", e),
    }
}

/// Read-only state shared by the workers.
struct Worker<'a> {
    config: &'a RunConfig,
    backends: Backends,
    generation: GenerationSettings,
    inference: InferenceSettings,
    judge_settings: Option<JudgeSettings>,
    dvp: DvpConfig,
    template: InceptionTemplate,
    /// Records persisted by an earlier attempt, reused so a resumed sample
    /// sees exactly the keywords its image already has on disk.
    prior_keywords: HashMap<String, KeywordRecord>,
    prior_candidates: HashMap<String, ScoringOutcome>,
    timings: Mutex<BTreeMap<&'static str, Duration>>,
}

impl Worker<'_> {
    fn timed<T>(&self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.lock().unwrap().entry(stage).or_default() += start.elapsed();
        out
    }

    fn envelope(
        &self,
        kind: &str,
        sample_id: &str,
        condition: Option<String>,
        payload: &impl Serialize,
    ) -> Result<RecordEnvelope, SampleError> {
        Ok(RecordEnvelope::new(kind, &self.config.run_id, sample_id, condition, payload)?)
    }

    /// All records of one sample, or the first error. Nothing is written here.
    fn process(&self, sample: &BenchmarkSample) -> Result<Vec<RecordEnvelope>, SampleError> {
        let image = &sample.image_ref;
        let image_key = image.to_string();
        let mut out = Vec::new();
        let mut selected: HashMap<String, OptimalKeywords> = HashMap::new();

        if self.config.needs_keywords() {
            let record = match self.prior_keywords.get(&image_key) {
                Some(r) => r.clone(),
                None => self
                    .timed("keyword_generation", || {
                        generate_keywords(&*self.backends.keyword, image, self.dvp.n_iterations, &self.generation)
                    })
                    .map_err(keyword_err)?,
            };
            out.push(self.envelope(KIND_KEYWORDS, &image_key, None, &record)?);

            let outcome = match self.prior_candidates.get(&image_key) {
                Some(o) => o.clone(),
                None => self.timed("verification", || {
                    score_candidates(&record, image, &self.dvp, &*self.backends.visual, &*self.backends.nli)
                }),
            };
            if outcome.candidates.is_empty() {
                if let Some(first) = outcome.dropped.first() {
                    return Err(SampleError::other(
                        "verification",
                        format!("all {} candidates failed to score; first: {}", outcome.dropped.len(), first.reason),
                    ));
                }
            }
            out.push(self.envelope(
                KIND_CANDIDATES,
                &image_key,
                None,
                &CandidatesPayload { image_ref: image.clone(), outcome: outcome.clone() },
            )?);

            for condition in &self.config.conditions {
                let Some(stages) = condition.stages() else { continue };
                let dvp = self.dvp.clone().with_stages(stages);
                let base = select_from_candidates(&outcome.candidates, &dvp);
                let (optimal, mixed) = match *condition {
                    Condition::MixedFactual { fraction, seed } if !base.fallback_used => {
                        let mixed =
                            mix_keywords(&record.factual, &base.keywords, fraction, seed).map_err(keyword_err)?;
                        let optimal = OptimalKeywords {
                            keywords: mixed.keywords.clone(),
                            provenance: base.provenance.clone(),
                            fallback_used: false,
                        };
                        (optimal, Some(mixed))
                    }
                    _ => (base, None),
                };
                let label = condition.label();
                out.push(self.envelope(
                    KIND_OPTIMAL,
                    &image_key,
                    Some(label.clone()),
                    &OptimalPayload { image_ref: image.clone(), dvp, optimal: optimal.clone(), mixed },
                )?);
                selected.insert(label, optimal);
            }
        }

        let mut judged = Vec::new();
        for condition in &self.config.conditions {
            let label = condition.label();
            let keywords = selected.get(&label);
            let req = match keywords {
                None => baseline_request(image, &sample.question, &self.inference),
                Some(k) => inception_request(&self.template, image, &sample.question, k, &self.inference)
                    .map_err(inception_err)?,
            };
            let reply = self
                .timed("inference", || self.backends.chat.chat(&req))
                .map_err(|e| SampleError::from_gateway("inference", &e))?;
            let extracted = match &sample.gold {
                Gold::YesNo { .. } => match extract_yes_no(&reply.text) {
                    YesNo::Yes => Extracted::Yes,
                    YesNo::No => Extracted::No,
                    YesNo::Unparseable => Extracted::Unparseable,
                },
                Gold::Option { choices, .. } => extract_option(&reply.text, choices),
                Gold::Reference { .. } | Gold::ReferenceWithCategory { .. } => Extracted::Text(reply.text.clone()),
            };
            let used_keywords = keywords.filter(|k| !k.fallback_used);
            let prediction = PredictionRecord {
                sample_id: sample.sample_id.clone(),
                condition: label.clone(),
                raw_answer: reply.text,
                extracted,
                keywords_used: used_keywords.map(|k| k.keywords.clone()).unwrap_or_default(),
                fallback_used: keywords.is_some_and(|k| k.fallback_used),
                request: RequestSummary {
                    model_id: req.model_id.clone(),
                    temperature: req.temperature,
                    max_tokens: req.max_tokens,
                    prompt: req.prompt_text().to_string(),
                },
            };
            out.push(self.envelope(KIND_PREDICTION, &sample.sample_id, Some(label.clone()), &prediction)?);
            judged.push((label, prediction.raw_answer));
        }

        if let (Some(judge), Some(settings)) = (&self.backends.judge, &self.judge_settings) {
            for (label, answer) in judged {
                let result =
                    self.timed("judge", || judge_generative(&**judge, sample, &answer, settings)).map_err(bench_err)?;
                out.push(self.envelope(KIND_JUDGE, &sample.sample_id, Some(label), &result)?);
            }
        }
        Ok(out)
    }
}

fn load_prior<T: serde::de::DeserializeOwned>(
    path: &Path,
    kind: &str,
    run_id: &str,
) -> Result<HashMap<String, T>, RunError> {
    let mut out = HashMap::new();
    for env in read_all_or_empty(path, Some(kind))? {
        if env.run_id == run_id && env.digest_valid() {
            out.insert(env.sample_id.clone(), env.payload_as()?);
        }
    }
    Ok(out)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(manifest).expect("manifests serialize");
    fs::write(&path, body + "\n").map_err(io_err(&path))
}

fn execute_inner(config: &RunConfig, transport: Option<Arc<dyn Transport>>) -> Result<RunManifest, RunError> {
    let started_at = now();
    let wall = Instant::now();
    config.validate()?;
    let samples = load_samples(config)?;
    prepare_run_dir(config)?;
    let dir = config.run_dir();

    let cache = Arc::new(ResponseCache::persistent(dir.join(CACHE_FILE))?);
    let stats = Arc::new(GatewayStats::default());
    let limiter = Arc::new(Limiter::new(config.parallelism));
    let backends = config.backends.build(cache, stats.clone(), limiter, transport)?;

    let mut writers: HashMap<&'static str, RecordWriter> = HashMap::new();
    for (kind, file) in RECORD_FILES {
        writers.insert(kind, RecordWriter::open(dir.join(file))?);
    }

    let done = done_samples(config, &samples)?;
    let todo: Vec<&BenchmarkSample> = samples.iter().filter(|s| !done.contains(&s.sample_id)).collect();
    tracing::info!(run = %config.run_id, total = samples.len(), skipped = done.len(), "starting run");

    let worker = Worker {
        config,
        backends,
        generation: config.generation_settings(),
        inference: config.inference_settings(),
        judge_settings: config
            .backends
            .judge
            .as_ref()
            .filter(|_| config.benchmark.judge_scale().is_some())
            .map(|j| JudgeSettings::new(&j.model_id)),
        // workers already run in parallel; candidates of one image are scored serially
        dvp: DvpConfig { parallelism: 1, ..config.dvp.clone() },
        template: InceptionTemplate::bundled(),
        prior_keywords: load_prior(&dir.join(record_file(KIND_KEYWORDS)), KIND_KEYWORDS, &config.run_id)?,
        prior_candidates: load_prior::<CandidatesPayload>(
            &dir.join(record_file(KIND_CANDIDATES)),
            KIND_CANDIDATES,
            &config.run_id,
        )?
        .into_iter()
        .map(|(k, v)| (k, v.outcome))
        .collect(),
        timings: Mutex::new(BTreeMap::new()),
    };

    let mut progress: BTreeMap<String, u64> = BTreeMap::new();
    progress.insert("samples_skipped".into(), done.len() as u64);
    let mut failures: Vec<SampleFailure> = Vec::new();
    let mut fatal: Option<String> = None;
    let mut store_error: Option<StoreError> = None;
    let mut interrupted = false;
    let mut written = 0usize;

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<(usize, Result<Vec<RecordEnvelope>, SampleError>)>();
        for _ in 0..config.parallelism.min(todo.len()) {
            let tx = tx.clone();
            let (worker, todo, next, stop) = (&worker, &todo, &next, &stop);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = todo.get(k) else { break };
                if tx.send((k, worker.process(sample))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // results arrive in completion order; write them in benchmark order
        let mut pending: BTreeMap<usize, Result<Vec<RecordEnvelope>, SampleError>> = BTreeMap::new();
        let mut expect = 0usize;
        for (k, result) in rx {
            pending.insert(k, result);
            while let Some(result) = pending.remove(&expect) {
                let sample = todo[expect];
                expect += 1;
                if stop.load(Ordering::SeqCst) {
                    continue;
                }
                match result {
                    Ok(envelopes) => {
                        for env in envelopes {
                            let w = writers.get_mut(env.record_kind.as_str()).expect("known record kind");
                            if w.contains(&env.key()) {
                                continue;
                            }
                            if let Err(e) = w.append(&env) {
                                store_error = Some(e);
                                stop.store(true, Ordering::SeqCst);
                                break;
                            }
                            *progress.entry(format!("records_{}", env.record_kind)).or_default() += 1;
                        }
                        *progress.entry("samples_completed".into()).or_default() += 1;
                    }
                    Err(e) => {
                        tracing::warn!(sample = %sample.sample_id, error = %e.message, "sample failed");
                        *progress.entry("samples_failed".into()).or_default() += 1;
                        failures.push(SampleFailure { sample_id: sample.sample_id.clone(), error: e.message.clone() });
                        if e.fatal {
                            fatal = Some(e.message);
                            stop.store(true, Ordering::SeqCst);
                        }
                    }
                }
                written += 1;
                if config.stop_after == Some(written) && written < todo.len() {
                    interrupted = true;
                    stop.store(true, Ordering::SeqCst);
                }
            }
        }
    });
    drop(writers);

    let mut timings: BTreeMap<String, f64> =
        worker.timings.into_inner().unwrap().into_iter().map(|(k, v)| (k.to_string(), v.as_secs_f64())).collect();
    let mut manifest = RunManifest {
        run_id: config.run_id.clone(),
        config: config.clone(),
        status: RunStatus::Completed,
        samples_total: samples.len(),
        progress,
        traffic: stats.snapshot(),
        timings: BTreeMap::new(),
        failures,
        report_digest: None,
        started_at,
        finished_at: String::new(),
    };
    let finish = |mut manifest: RunManifest, mut timings: BTreeMap<String, f64>| -> Result<RunManifest, RunError> {
        timings.insert("total".into(), wall.elapsed().as_secs_f64());
        manifest.timings = timings;
        manifest.traffic = stats.snapshot();
        manifest.finished_at = now();
        write_manifest(&dir, &manifest)?;
        Ok(manifest)
    };

    if let Some(e) = store_error {
        manifest.status = RunStatus::Failed;
        finish(manifest, timings)?;
        return Err(e.into());
    }
    if let Some(message) = fatal {
        manifest.status = RunStatus::Failed;
        finish(manifest, timings)?;
        return Err(RunError::Aborted(message));
    }
    if interrupted {
        manifest.status = RunStatus::Interrupted;
        return finish(manifest, timings);
    }
    let failed = manifest.failures.len();
    if failed > 0 && failed as f64 > config.failure_cap * todo.len() as f64 {
        manifest.status = RunStatus::Failed;
        finish(manifest, timings)?;
        return Err(RunError::FailureCap { failed, attempted: todo.len(), cap: config.failure_cap });
    }
    if failed > 0 {
        manifest.status = RunStatus::Partial;
    }

    let report_start = Instant::now();
    let inputs = load_report_inputs(&dir)?;
    let report = build_report(config, &samples, &inputs)?;
    manifest.report_digest = Some(write_report(&dir, &report)?);
    timings.insert("report".into(), report_start.elapsed().as_secs_f64());
    finish(manifest, timings)
}
