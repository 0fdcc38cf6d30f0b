mod common;

use std::collections::HashMap;

use cfinception::bench::BenchmarkKind;
use cfinception::dvp::{
    aggregate_trends, dedupe_candidates, iteration_trend, linguistic_filter, visual_filter, DvpConfig, ScoredCandidate,
};
use cfinception::keywordgen::{factual_share, KeywordOrigin, KeywordRecord};
use cfinception::runner::{execute, CandidatesPayload, OptimalPayload, RunConfig};
use cfinception::store::read_all;
use common::mock_config;

fn keywords(c: &[ScoredCandidate]) -> Vec<String> {
    c.iter().map(|c| c.keyword.clone()).collect()
}

struct Records {
    config: RunConfig,
    candidates: HashMap<String, CandidatesPayload>,
    /// (image, condition) to selection.
    optimal: HashMap<(String, String), OptimalPayload>,
    keywords: HashMap<String, KeywordRecord>,
    _dir: tempfile::TempDir,
}

fn run(conditions: &str) -> Records {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_config("abl", dir.path(), BenchmarkKind::PopeAdversarial, conditions);
    execute(&config).unwrap();
    let rd = config.run_dir();
    let candidates = read_all(&rd.join("candidates.jsonl"), Some("candidates"))
        .unwrap()
        .into_iter()
        .map(|e| (e.sample_id.clone(), e.payload_as().unwrap()))
        .collect();
    let optimal = read_all(&rd.join("optimal.jsonl"), Some("optimal"))
        .unwrap()
        .into_iter()
        .map(|e| ((e.sample_id.clone(), e.condition.clone().unwrap()), e.payload_as().unwrap()))
        .collect();
    let keywords = read_all(&rd.join("keywords.jsonl"), Some("keywords"))
        .unwrap()
        .into_iter()
        .map(|e| (e.sample_id.clone(), e.payload_as().unwrap()))
        .collect();
    Records { config, candidates, optimal, keywords, _dir: dir }
}

#[test]
fn single_stage_conditions_apply_exactly_one_filter() {
    let r = run("inception,vv_only,lv_only");
    let cfg: &DvpConfig = &r.config.dvp;
    assert_eq!(r.candidates.len(), 5);
    let mut differs = false;
    for (image, payload) in &r.candidates {
        let cands = &payload.outcome.candidates;
        let vv = dedupe_candidates(visual_filter(cands, cfg));
        let lv = dedupe_candidates(linguistic_filter(cands, cfg));
        let both = dedupe_candidates(linguistic_filter(&visual_filter(cands, cfg), cfg));
        let got = |cond: &str| r.optimal[&(image.clone(), cond.to_string())].optimal.keywords.clone();
        assert_eq!(got("vv_only"), keywords(&vv), "{image}");
        assert_eq!(got("lv_only"), keywords(&lv), "{image}");
        assert_eq!(got("inception"), keywords(&both), "{image}");
        differs |= got("vv_only") != got("inception") || got("lv_only") != got("inception");
    }
    assert!(differs, "fixtures should make the ablations observable");
}

#[test]
fn duplicate_candidates_keep_the_first_spelling() {
    let r = run("lv_only");
    let (_, payload) = r.optimal.iter().find(|((img, _), _)| img.ends_with("img02.png")).unwrap();
    let stones: Vec<&String> = payload.optimal.keywords.iter().filter(|k| k.eq_ignore_ascii_case("stone")).collect();
    assert_eq!(stones, ["stone"]);
}

#[test]
fn mixed_factual_replaces_the_rounded_share() {
    let r = run("mixed_factual:0.5:7");
    for ((image, _), payload) in &r.optimal {
        let mixed = payload.mixed.as_ref().expect("non-empty selections are mixed");
        let n = mixed.keywords.len();
        assert_eq!(mixed.factual_count(), factual_share(0.5, n), "{image}");
        let factual = &r.keywords[image].factual;
        for (k, origin) in mixed.keywords.iter().zip(&mixed.origins) {
            assert_eq!(*origin == KeywordOrigin::Factual, factual.contains(k), "{image}: {k}");
        }
        assert_eq!(payload.optimal.keywords, mixed.keywords);
    }
}

#[test]
fn later_iterations_look_more_like_the_image() {
    let r = run("inception");
    let per_image: Vec<_> = r.candidates.values().map(|p| iteration_trend(&p.outcome.candidates)).collect();
    let agg = aggregate_trends(&per_image);
    assert_eq!(agg.len(), 5);
    for w in agg.windows(2) {
        assert!(w[1].mean_visual > w[0].mean_visual);
        assert!(w[1].mean_contradiction < w[0].mean_contradiction);
    }
}
