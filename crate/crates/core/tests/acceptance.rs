//! Acceptance checks, one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cfinception::bench::{
    aggregate_generative, compute_binary_metrics, compute_mmvp_accuracy, information_level, BenchmarkKind,
    BenchmarkSample, Extracted, Gold, InformationLevel, JudgeResult, JudgeScale, MmvpMode, PredictionRecord,
    RequestSummary,
};
use cfinception::dvp::{
    linguistic_filter, select_optimal, trim_count, visual_filter, DvpConfig, ScoredCandidate, VisualMode,
};
use cfinception::gateway::mock::MockTransport;
use cfinception::gateway::{GatewayError, ImageRef, NliModel, NliScores, VisualScorer};
use cfinception::inception::build_inception_prompt;
use cfinception::keywordgen::{
    build_iterative_prompt, build_simple_prompt, mix_keywords, parse_keyword_lists, serialize_keyword_lists,
    KeywordError, KeywordRecord,
};
use cfinception::runner::{execute, execute_with_transport, RunConfig, RunStatus};
use common::{fixtures, mock_config, mock_responses};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

fn candidate(keyword: String, index: usize, visual: f64, contradiction: f64) -> ScoredCandidate {
    let rest = 1.0 - contradiction;
    ScoredCandidate {
        keyword,
        iteration: 1,
        position: index,
        visual_score: visual,
        nli: NliScores::new(rest / 2.0, rest - rest / 2.0, contradiction).unwrap(),
        premise_used: String::new(),
    }
}

/// Scores quantized to hundredths, so ties and exact band edges are common.
fn hundredths(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    rng.random_range(lo..=hi) as f64 / 100.0
}

/// Brute-force percentile trim: rank by (score, input index), drop the
/// bottom and top `floor(k*n/100)` ranks, report survivors by input index.
fn percentile_oracle(scores: &[f64], k: u32) -> Vec<usize> {
    let n = scores.len();
    let t = (k as usize * n) / 100;
    let mut kept = Vec::new();
    for i in 0..n {
        let rank = (0..n).filter(|&j| scores[j] < scores[i] || (scores[j] == scores[i] && j < i)).count();
        if rank >= t && rank + t < n {
            kept.push(i);
        }
    }
    kept
}

struct TableScorer(HashMap<String, f64>);

impl VisualScorer for TableScorer {
    fn clip_score(&self, _: &ImageRef, text: &str) -> Result<f64, GatewayError> {
        Ok(self.0[text])
    }
}

struct TableNli(HashMap<String, f64>);

impl NliModel for TableNli {
    fn nli(&self, _: &str, hypothesis: &str) -> Result<NliScores, GatewayError> {
        let c = self.0[hypothesis];
        let rest = 1.0 - c;
        NliScores::new(rest / 2.0, rest - rest / 2.0, c)
    }
}

fn dvp_oracle_equivalence() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let image = ImageRef::new(fixtures().join("images/img01.png"));
    let mut fallbacks = 0;
    for trial in 0..1000 {
        let n = rng.random_range(0..=200usize);

        // percentile mode against the rank oracle
        let k = [10u32, 20, 30][trial % 3];
        let scores: Vec<f64> = (0..n).map(|_| hundredths(&mut rng, -30, 60)).collect();
        let cands: Vec<ScoredCandidate> =
            scores.iter().enumerate().map(|(i, &s)| candidate(format!("k{i}"), i, s, 0.5)).collect();
        let config = DvpConfig { visual_mode: VisualMode::Percentile { k: k as f64 }, ..DvpConfig::main_profile() };
        let got: Vec<usize> = visual_filter(&cands, &config).iter().map(|c| c.position).collect();
        let want = percentile_oracle(&scores, k);
        ensure(got == want, || format!("trial {trial}: percentile K={k} n={n} kept {got:?}, oracle {want:?}"))?;

        // absolute mode end to end, with case-variant duplicates in the pool
        let config = DvpConfig::appendix_profile();
        let (low, high, tau) = (0.2, 0.8, config.tau);
        let vocab = n / 2 + 1;
        let mut visual = HashMap::new();
        let mut contradiction = HashMap::new();
        let mut sets: Vec<Vec<String>> = vec![Vec::new(); config.n_iterations];
        for i in 0..n {
            let stem = format!("word{}", rng.random_range(0..vocab));
            let keyword = if rng.random_bool(0.3) { stem.to_uppercase() } else { stem };
            visual.entry(keyword.clone()).or_insert_with(|| hundredths(&mut rng, -10, 100));
            contradiction.entry(keyword.clone()).or_insert_with(|| hundredths(&mut rng, 50, 100));
            sets[i % config.n_iterations].push(keyword);
        }
        let record = KeywordRecord {
            image_ref: image.clone(),
            factual: vec!["scene".into()],
            counterfactual_sets: sets.clone(),
            generation_temperature: 0.8,
            raw_response: String::new(),
        };
        let mut seen = HashSet::new();
        let want: Vec<String> = sets
            .iter()
            .flatten()
            .filter(|k| (low..=high).contains(&visual[*k]) && contradiction[*k] >= tau)
            .filter(|k| seen.insert(k.to_lowercase()))
            .cloned()
            .collect();
        let (optimal, _) = select_optimal(&record, &image, &config, &TableScorer(visual), &TableNli(contradiction))
            .map_err(|e| format!("trial {trial}: {e}"))?;
        ensure(optimal.keywords == want, || {
            format!("trial {trial}: selected {:?}, oracle {want:?}", optimal.keywords)
        })?;
        ensure(optimal.fallback_used == want.is_empty(), || format!("trial {trial}: fallback flag"))?;
        fallbacks += usize::from(want.is_empty());
    }
    let took = within(Duration::from_secs(5), started)?;
    Ok(format!("1000 random pools in both modes, {fallbacks} empty selections, {took:.2?}"))
}

fn trim_size_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut checked = 0;
    for n in 0..=200usize {
        for k in [10usize, 20, 30] {
            let expected = n - 2 * (k * n / 100);
            ensure(trim_count(k as f64, n) == k * n / 100, || format!("trim_count({k}, {n})"))?;
            let cands: Vec<ScoredCandidate> =
                (0..n).map(|i| candidate(format!("k{i}"), i, hundredths(&mut rng, -100, 100), 0.5)).collect();
            let config = DvpConfig { visual_mode: VisualMode::Percentile { k: k as f64 }, ..DvpConfig::main_profile() };
            let got = visual_filter(&cands, &config).len();
            ensure(got == expected, || format!("n={n} K={k}: kept {got}, expected {expected}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (n, K) pairs"))
}

fn prediction(id: &str, extracted: Extracted) -> PredictionRecord {
    PredictionRecord {
        sample_id: id.into(),
        condition: "baseline".into(),
        raw_answer: String::new(),
        extracted,
        keywords_used: Vec::new(),
        fallback_used: false,
        request: RequestSummary { model_id: "m".into(), temperature: 0.0, max_tokens: 8, prompt: String::new() },
    }
}

fn metric_fixtures() -> Check {
    // tp 3, fp 1, fn 1, tn 5
    let cases = [
        (true, true),
        (true, true),
        (true, true),
        (false, true),
        (true, false),
        (false, false),
        (false, false),
        (false, false),
        (false, false),
        (false, false),
    ];
    let mut golds = HashMap::new();
    let mut preds = Vec::new();
    for (i, (gold, said_yes)) in cases.iter().enumerate() {
        golds.insert(i.to_string(), *gold);
        preds.push(prediction(&i.to_string(), if *said_yes { Extracted::Yes } else { Extracted::No }));
    }
    let m = compute_binary_metrics(&preds, &golds).map_err(|e| e.to_string())?;
    let got = (m.accuracy, m.precision, m.recall, m.f1);
    ensure(got == (0.8, 0.75, 0.75, 0.75), || format!("binary metrics {got:?}"))?;

    let image = ImageRef::new(fixtures().join("images/img01.png"));
    let sample = |id: &str, pair: &str| BenchmarkSample {
        sample_id: id.into(),
        benchmark: BenchmarkKind::Mmvp,
        image_ref: image.clone(),
        question: format!("question {id}"),
        gold: Gold::Option { label: "a".into(), choices: vec![("a".into(), "x".into()), ("b".into(), "y".into())] },
        metadata: BTreeMap::from([("pair_id".into(), pair.into()), ("pattern".into(), "Color and Appearance".into())]),
    };
    let samples = vec![sample("1", "p1"), sample("2", "p1"), sample("3", "p2"), sample("4", "p2")];
    let answers = ["a", "b", "b", "a"];
    let preds: Vec<PredictionRecord> =
        samples.iter().zip(answers).map(|(s, a)| prediction(&s.sample_id, Extracted::Option(a.into()))).collect();
    let per_pair = compute_mmvp_accuracy(&preds, &samples, MmvpMode::PerPair).map_err(|e| e.to_string())?;
    ensure(per_pair.overall.accuracy == 0.0, || format!("per-pair accuracy {}", per_pair.overall.accuracy))?;

    let judged: Vec<JudgeResult> = ["l1", "l2"]
        .iter()
        .map(|id| JudgeResult {
            sample_id: id.to_string(),
            scale: JudgeScale::OneToTen,
            reference_score: Some(8.0),
            candidate_score: 6.0,
            rationale_text: String::new(),
        })
        .collect();
    let report =
        aggregate_generative(&judged, &HashMap::new(), BenchmarkKind::LlavaWild, 3.0).map_err(|e| e.to_string())?;
    let relative = report.overall.relative_score.ok_or("no relative score")?;
    ensure((relative - 75.0).abs() < 1e-9, || format!("relative score {relative}"))?;
    Ok("confusion 3/1/1/5, pair scoring, relative score".into())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn golden_prompts() -> Check {
    let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("prompts");
    let pinned = [
        ("inception.txt", "e8c7df543e8250f48c5603c2df0dd95ff6a3cf9143d82cbb42d78f5b6dbf7f9d"),
        ("iterative_keywords.txt", "570a62d9685a6317dcdb42b5b0331009c39f3d34dc507d9860b9dd8579a0163d"),
        ("simple_keywords.txt", "9b4775463699d690aaf5fe10d900ad7ea5fbc69ae92967f5d346d9589bf0e79c"),
        ("judge_llava.txt", "671c5187bb7da477bfa0c85b78e0c977a457abc09322581abc5c064cf565bc9a"),
        ("judge_mmhal.txt", "d8ea9721a55adaebda5a5b86c106b4396db1b99ed5fc8421b6fae0fe1559a27b"),
    ];
    let mut files = HashMap::new();
    for (name, digest) in pinned {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(sha256_hex(&bytes) == digest, || format!("{name} digest changed"))?;
        files.insert(name, String::from_utf8(bytes).map_err(|e| e.to_string())?);
    }
    ensure(build_simple_prompt() == files["simple_keywords.txt"], || "simple prompt differs from file".into())?;
    let iterative = build_iterative_prompt();
    ensure(iterative == files["iterative_keywords.txt"], || "iterative prompt differs from file".into())?;
    for i in 1..=5 {
        let scaffold = format!("Counterfactual Keywords {i}:");
        ensure(iterative.contains(&scaffold), || format!("iterative prompt lacks `{scaffold}`"))?;
    }
    ensure(!iterative.contains("Counterfactual Keywords 6:"), || "iterative prompt asks for a sixth set".into())?;

    let keywords = vec!["red umbrella".to_string(), "snowy street".to_string()];
    let p = build_inception_prompt(&keywords, "Is there a dog in the image?").map_err(|e| e.to_string())?;
    ensure(!p.rendered.contains('{') && !p.rendered.contains('}'), || "rendered prompt keeps a placeholder".into())?;
    ensure(p.rendered.contains("red umbrella, snowy street"), || "keywords not joined into the prompt".into())?;
    let expected = files["inception.txt"]
        .replace("{counterfactual_keyword}", "red umbrella, snowy street")
        .replace("{question}", "Is there a dog in the image?");
    ensure(p.rendered == expected, || "rendered prompt differs from the file template".into())?;
    Ok("5 prompt files pinned, builders byte-equal".into())
}

fn random_keyword(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 12] =
        ["red", "tiny", "glass", "umbrella", "old-fashioned", "dog", "neon", "sign", "x2", "harbor", "snowy", "kite"];
    let n = rng.random_range(1..=3);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn parser_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    for trial in 0..500 {
        let n_sets = rng.random_range(1..=8usize);
        let factual: Vec<String> = (0..rng.random_range(1..=10)).map(|_| random_keyword(&mut rng)).collect();
        let sets: Vec<Vec<String>> =
            (0..n_sets).map(|_| (0..rng.random_range(1..=8)).map(|_| random_keyword(&mut rng)).collect()).collect();
        let text = serialize_keyword_lists(&factual, &sets);
        let (f2, s2) = parse_keyword_lists(&text, n_sets).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure(f2 == factual && s2 == sets, || format!("trial {trial}: parse changed the lists"))?;
        ensure(serialize_keyword_lists(&f2, &s2) == text, || format!("trial {trial}: not a fixed point"))?;

        let lines: Vec<&str> = text.lines().collect();
        let drop = rng.random_range(0..lines.len());
        let damaged: String =
            lines.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, l)| format!("{l}\n")).collect();
        let expected =
            if drop == 0 { "Factual Keywords".to_string() } else { format!("Counterfactual Keywords {drop}") };
        match parse_keyword_lists(&damaged, n_sets) {
            Err(KeywordError::Parse { missing, .. }) if missing == expected => {}
            other => return Err(format!("trial {trial}: dropping line {drop} gave {other:?}, expected {expected}")),
        }
    }
    Ok("500 random blocks, fixed point and named missing sections".into())
}

fn end_to_end_determinism() -> Check {
    let started = Instant::now();
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let kind = BenchmarkKind::PopeAdversarial;
    let first = execute(&mock_config("accept", a.path(), kind, "baseline,inception")).map_err(|e| e.to_string())?;
    let second = execute(&RunConfig { parallelism: 3, ..mock_config("accept", b.path(), kind, "baseline,inception") })
        .map_err(|e| e.to_string())?;
    ensure(first.status == RunStatus::Completed, || format!("status {:?}", first.status))?;
    ensure(first.report_digest.is_some() && first.report_digest == second.report_digest, || {
        format!("digests {:?} vs {:?}", first.report_digest, second.report_digest)
    })?;

    let transport = MockTransport::from_file(&mock_responses()).map_err(|e| e.to_string())?;
    let gauge = transport.gauge();
    let resumed = RunConfig { resume: true, ..mock_config("accept", a.path(), kind, "baseline,inception") };
    let third = execute_with_transport(&resumed, Arc::new(transport)).map_err(|e| e.to_string())?;
    ensure(gauge.calls() == 0, || format!("resume made {} backend calls", gauge.calls()))?;
    ensure(third.report_digest == first.report_digest, || "resume changed the report".into())?;
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("digest {}, resume 0 calls, {took:.2?}", &first.report_digest.unwrap_or_default()[..12]))
}

fn ablation_semantics() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = mock_config("ablate", dir.path(), BenchmarkKind::PopeAdversarial, "vv_only,lv_only");
    execute(&config).map_err(|e| e.to_string())?;
    let rd = config.run_dir();
    let candidates: HashMap<String, cfinception::runner::CandidatesPayload> =
        cfinception::store::read_all(&rd.join("candidates.jsonl"), Some("candidates"))
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|e| (e.sample_id.clone(), e.payload_as().unwrap()))
            .collect();
    let optimal =
        cfinception::store::read_all(&rd.join("optimal.jsonl"), Some("optimal")).map_err(|e| e.to_string())?;
    ensure(!optimal.is_empty(), || "no optimal records".into())?;
    for env in optimal {
        let condition = env.condition.clone().unwrap_or_default();
        let payload: cfinception::runner::OptimalPayload = env.payload_as().map_err(|e| e.to_string())?;
        let cands = &candidates[&env.sample_id].outcome.candidates;
        let single = match condition.as_str() {
            "vv_only" => visual_filter(cands, &config.dvp),
            "lv_only" => linguistic_filter(cands, &config.dvp),
            other => return Err(format!("unexpected condition {other}")),
        };
        let mut seen = HashSet::new();
        let want: Vec<String> =
            single.into_iter().map(|c| c.keyword).filter(|k| seen.insert(k.to_lowercase())).collect();
        ensure(payload.optimal.keywords == want, || format!("{}/{condition}: single-filter mismatch", env.sample_id))?;
    }

    let factual: Vec<String> = (0..40).map(|i| format!("fact{i}")).collect();
    for n in 1..=40usize {
        let counterfactual: Vec<String> = (0..n).map(|i| format!("cf{i}")).collect();
        for (quarters, f) in [(1usize, 0.25), (2, 0.5), (3, 0.75)] {
            // round(quarters * n / 4), halves up
            let expected = (quarters * n + 2) / 4;
            let mixed = mix_keywords(&factual, &counterfactual, f, n as u64).map_err(|e| e.to_string())?;
            ensure(mixed.keywords.len() == n, || format!("n={n} f={f}: size {}", mixed.keywords.len()))?;
            ensure(mixed.factual_count() == expected, || {
                format!("n={n} f={f}: {} factual, expected {expected}", mixed.factual_count())
            })?;
        }
    }
    Ok("single-filter conditions match, mixed shares exact for n<=40".into())
}

fn information_threshold() -> Check {
    ensure(information_level(7) == InformationLevel::Low, || "7 factual keywords not low".into())?;
    ensure(information_level(8) == InformationLevel::High, || "8 factual keywords not high".into())?;
    Ok("7 -> low, 8 -> high".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("dvp_oracle_equivalence", dvp_oracle_equivalence),
        ("percentile_trim_size", trim_size_law),
        ("metric_fixtures", metric_fixtures),
        ("golden_prompts", golden_prompts),
        ("keyword_parser_round_trip", parser_round_trip),
        ("mock_pipeline_determinism", end_to_end_determinism),
        ("ablation_semantics", ablation_semantics),
        ("information_level_threshold", information_threshold),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
