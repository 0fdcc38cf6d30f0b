//! Dual-modality verification of counterfactual keyword candidates.
//!
//! Every keyword from the N counterfactual sets is scored twice: image-text
//! similarity against the image, and an NLI distribution against a factual
//! premise. The visual filter keeps a similarity band (a count-based trim of
//! both tails, or an absolute `[low, high]` window), the linguistic filter
//! keeps candidates whose contradiction probability reaches `tau`, and the
//! survivors are de-duplicated into the optimal keyword set.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ImageRef, NliModel, NliScores, VisualScorer};
use crate::keywordgen::KeywordRecord;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DvpError {
    #[error("invalid verification config: {0}")]
    InvalidConfig(String),
    #[error("all {attempted} candidates failed to score; first error: {first}")]
    AllScoringFailed { attempted: usize, first: GatewayError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VisualMode {
    /// Drop `floor(k/100 * n)` candidates from each end of the score order.
    Percentile { k: f64 },
    /// Keep `low <= score <= high`.
    Absolute { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremisePolicy {
    /// The factual keyword at the candidate's list position, or the joined
    /// factual list when the position is past its end.
    AlignedThenJoined,
    JoinedOnly,
}

/// Which filters run. The single-filter variants back the VV/LV ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stages {
    #[default]
    Both,
    VisualOnly,
    LinguisticOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Main,
    Appendix,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main" => Ok(Profile::Main),
            "appendix" => Ok(Profile::Appendix),
            other => Err(format!("unknown profile {other:?} (expected main or appendix)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvpConfig {
    pub visual_mode: VisualMode,
    pub tau: f64,
    pub n_iterations: usize,
    pub premise_policy: PremisePolicy,
    pub dedupe: bool,
    #[serde(default)]
    pub stages: Stages,
    /// Wraps premise and hypothesis, e.g. `"The image contains {}."`. Raw keywords when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_template: Option<String>,
    /// Concurrent scoring calls per record.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_parallelism() -> usize {
    1
}

impl Default for DvpConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Main)
    }
}

impl DvpConfig {
    /// K = 20 % percentile trim, tau = 0.9, N = 5.
    pub fn main_profile() -> Self {
        Self {
            visual_mode: VisualMode::Percentile { k: 20.0 },
            tau: 0.9,
            n_iterations: 5,
            premise_policy: PremisePolicy::AlignedThenJoined,
            dedupe: true,
            stages: Stages::Both,
            nli_template: None,
            parallelism: 1,
        }
    }

    /// Absolute similarity band [0.2, 0.8], tau = 0.8, N = 5.
    pub fn appendix_profile() -> Self {
        Self { visual_mode: VisualMode::Absolute { low: 0.2, high: 0.8 }, tau: 0.8, ..Self::main_profile() }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Main => Self::main_profile(),
            Profile::Appendix => Self::appendix_profile(),
        }
    }

    pub fn with_stages(mut self, stages: Stages) -> Self {
        self.stages = stages;
        self
    }

    pub fn validate(&self) -> Result<(), DvpError> {
        match self.visual_mode {
            VisualMode::Percentile { k } if !(k > 0.0 && k < 50.0) => {
                return Err(DvpError::InvalidConfig(format!("percentile K={k} must lie in (0, 50)")))
            }
            // written to also reject NaN bounds
            VisualMode::Absolute { low, high } if low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) => {
                return Err(DvpError::InvalidConfig(format!("absolute band requires low < high, got [{low}, {high}]")))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DvpError::InvalidConfig(format!("tau={} outside [0, 1]", self.tau)));
        }
        if self.n_iterations == 0 {
            return Err(DvpError::InvalidConfig("n_iterations must be at least 1".into()));
        }
        if let Some(t) = &self.nli_template {
            if !t.contains("{}") {
                return Err(DvpError::InvalidConfig("nli_template must contain {}".into()));
            }
        }
        Ok(())
    }

    fn nli_text(&self, s: &str) -> String {
        match &self.nli_template {
            Some(t) => t.replacen("{}", s, 1),
            None => s.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub keyword: String,
    /// 1-based counterfactual set index.
    pub iteration: usize,
    /// 0-based position inside its set.
    pub position: usize,
    pub visual_score: f64,
    pub nli: NliScores,
    pub premise_used: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub keyword: String,
    pub iteration: usize,
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoringOutcome {
    pub candidates: Vec<ScoredCandidate>,
    pub dropped: Vec<DroppedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalKeywords {
    pub keywords: Vec<String>,
    pub provenance: Vec<ScoredCandidate>,
    pub fallback_used: bool,
}

impl OptimalKeywords {
    pub fn fallback() -> Self {
        Self { keywords: Vec::new(), provenance: Vec::new(), fallback_used: true }
    }
}

/// Factual premise for a candidate at `position` under `policy`.
pub fn premise_for(factual: &[String], position: usize, policy: PremisePolicy) -> String {
    match (policy, factual.get(position)) {
        (PremisePolicy::AlignedThenJoined, Some(aligned)) => aligned.clone(),
        _ => factual.join(", "),
    }
}

struct PoolEntry<'a> {
    keyword: &'a str,
    iteration: usize,
    position: usize,
}

/// Scores every keyword of every counterfactual set.
///
/// A candidate whose scoring call fails is logged and reported in
/// `dropped`; it never receives a placeholder score.
pub fn score_candidates(
    record: &KeywordRecord,
    image: &ImageRef,
    config: &DvpConfig,
    visual: &dyn VisualScorer,
    nli: &dyn NliModel,
) -> ScoringOutcome {
    let pool: Vec<PoolEntry<'_>> = record
        .counterfactual_sets
        .iter()
        .enumerate()
        .flat_map(|(i, set)| {
            set.iter().enumerate().map(move |(p, k)| PoolEntry { keyword: k, iteration: i + 1, position: p })
        })
        .collect();

    let score_one = |e: &PoolEntry<'_>| -> Result<ScoredCandidate, DroppedCandidate> {
        let premise = premise_for(&record.factual, e.position, config.premise_policy);
        let scored = visual.clip_score(image, e.keyword).and_then(|visual_score| {
            let scores = nli.nli(&config.nli_text(&premise), &config.nli_text(e.keyword))?;
            Ok((visual_score, scores))
        });
        match scored {
            Ok((visual_score, nli)) => Ok(ScoredCandidate {
                keyword: e.keyword.to_string(),
                iteration: e.iteration,
                position: e.position,
                visual_score,
                nli,
                premise_used: premise,
            }),
            Err(err) => {
                tracing::warn!(keyword = e.keyword, iteration = e.iteration, error = %err, "dropping unscorable candidate");
                Err(DroppedCandidate {
                    keyword: e.keyword.to_string(),
                    iteration: e.iteration,
                    position: e.position,
                    reason: err.to_string(),
                })
            }
        }
    };

    let workers = config.parallelism.max(1).min(pool.len().max(1));
    let results: Vec<Result<ScoredCandidate, DroppedCandidate>> = if workers <= 1 {
        pool.iter().map(score_one).collect()
    } else {
        let slots: Vec<Mutex<Option<Result<ScoredCandidate, DroppedCandidate>>>> =
            pool.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(entry) = pool.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(score_one(entry));
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot filled")).collect()
    };

    let mut outcome = ScoringOutcome::default();
    for r in results {
        match r {
            Ok(c) => outcome.candidates.push(c),
            Err(d) => outcome.dropped.push(d),
        }
    }
    outcome
}

/// Number of candidates removed from each tail in percentile mode.
pub fn trim_count(k_percent: f64, n: usize) -> usize {
    (k_percent * n as f64 / 100.0).floor() as usize
}

/// Keeps the visual-similarity band; output keeps the input order.
pub fn visual_filter(cands: &[ScoredCandidate], config: &DvpConfig) -> Vec<ScoredCandidate> {
    match config.visual_mode {
        VisualMode::Percentile { k } => {
            let n = cands.len();
            let t = trim_count(k, n);
            if 2 * t >= n {
                return Vec::new();
            }
            let mut order: Vec<usize> = (0..n).collect();
            // stable: ties keep input order
            order.sort_by(|&a, &b| cands[a].visual_score.total_cmp(&cands[b].visual_score));
            let mut kept: Vec<usize> = order[t..n - t].to_vec();
            kept.sort_unstable();
            kept.into_iter().map(|i| cands[i].clone()).collect()
        }
        VisualMode::Absolute { low, high } => {
            cands.iter().filter(|c| low <= c.visual_score && c.visual_score <= high).cloned().collect()
        }
    }
}

/// Keeps candidates whose contradiction probability is at least `tau`.
pub fn linguistic_filter(cands: &[ScoredCandidate], config: &DvpConfig) -> Vec<ScoredCandidate> {
    cands.iter().filter(|c| c.nli.contradiction() >= config.tau).cloned().collect()
}

/// Case-insensitive de-duplication, first occurrence wins.
pub fn dedupe_candidates(cands: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    let mut seen = HashSet::new();
    cands.into_iter().filter(|c| seen.insert(c.keyword.to_lowercase())).collect()
}

/// Filters already-scored candidates into the optimal keyword set.
pub fn select_from_candidates(cands: &[ScoredCandidate], config: &DvpConfig) -> OptimalKeywords {
    let after_visual = match config.stages {
        Stages::LinguisticOnly => cands.to_vec(),
        _ => visual_filter(cands, config),
    };
    let after_linguistic = match config.stages {
        Stages::VisualOnly => after_visual,
        _ => linguistic_filter(&after_visual, config),
    };
    let survivors = if config.dedupe { dedupe_candidates(after_linguistic) } else { after_linguistic };
    if survivors.is_empty() {
        return OptimalKeywords::fallback();
    }
    OptimalKeywords {
        keywords: survivors.iter().map(|c| c.keyword.clone()).collect(),
        provenance: survivors,
        fallback_used: false,
    }
}

/// Scores a record and selects its optimal counterfactual keywords.
///
/// Fails only when there were candidates and none could be scored.
pub fn select_optimal(
    record: &KeywordRecord,
    image: &ImageRef,
    config: &DvpConfig,
    visual: &dyn VisualScorer,
    nli: &dyn NliModel,
) -> Result<(OptimalKeywords, ScoringOutcome), DvpError> {
    config.validate()?;
    let outcome = score_candidates(record, image, config, visual, nli);
    if outcome.candidates.is_empty() && !outcome.dropped.is_empty() {
        return Err(DvpError::AllScoringFailed {
            attempted: outcome.dropped.len(),
            first: GatewayError::Transport(outcome.dropped[0].reason.clone()),
        });
    }
    Ok((select_from_candidates(&outcome.candidates, config), outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub iteration: usize,
    pub count: usize,
    pub mean_visual: f64,
    pub mean_contradiction: f64,
}

/// Per-iteration mean similarity and contradiction, ascending by iteration.
pub fn iteration_trend(cands: &[ScoredCandidate]) -> Vec<TrendRow> {
    let mut groups: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for c in cands {
        let g = groups.entry(c.iteration).or_default();
        g.0 += 1;
        g.1 += c.visual_score;
        g.2 += c.nli.contradiction();
    }
    groups
        .into_iter()
        .map(|(iteration, (count, v, k))| TrendRow {
            iteration,
            count,
            mean_visual: v / count as f64,
            mean_contradiction: k / count as f64,
        })
        .collect()
}

/// Mean of per-image trend rows, per iteration. `count` sums the images' counts.
pub fn aggregate_trends(per_image: &[Vec<TrendRow>]) -> Vec<TrendRow> {
    let mut groups: BTreeMap<usize, (usize, usize, f64, f64)> = BTreeMap::new();
    for rows in per_image {
        for r in rows {
            let g = groups.entry(r.iteration).or_default();
            g.0 += 1;
            g.1 += r.count;
            g.2 += r.mean_visual;
            g.3 += r.mean_contradiction;
        }
    }
    groups
        .into_iter()
        .map(|(iteration, (images, count, v, k))| TrendRow {
            iteration,
            count,
            mean_visual: v / images as f64,
            mean_contradiction: k / images as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn cand(keyword: &str, visual: f64, contradiction: f64) -> ScoredCandidate {
        let rest = (1.0 - contradiction) / 2.0;
        ScoredCandidate {
            keyword: keyword.into(),
            iteration: 1,
            position: 0,
            visual_score: visual,
            nli: NliScores::new(rest, rest, contradiction).unwrap(),
            premise_used: "p".into(),
        }
    }

    fn scores(cs: &[ScoredCandidate]) -> Vec<f64> {
        cs.iter().map(|c| c.visual_score).collect()
    }

    #[test]
    fn percentile_trim_ten_scores() {
        let vals = [0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55];
        // shuffled input order, output must keep it
        let order = [7, 2, 9, 0, 5, 3, 8, 1, 6, 4];
        let cs: Vec<_> = order.iter().map(|&i| cand(&format!("k{i}"), vals[i], 1.0)).collect();
        let out = visual_filter(&cs, &DvpConfig::main_profile());
        assert_eq!(out.len(), 6);
        let mut got = scores(&out);
        let expected_order: Vec<f64> = order.iter().map(|&i| vals[i]).filter(|v| (0.20..=0.45).contains(v)).collect();
        assert_eq!(got, expected_order);
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.20, 0.25, 0.30, 0.35, 0.40, 0.45]);
    }

    #[test]
    fn absolute_band_inclusive() {
        let cs: Vec<_> = [0.1, 0.2, 0.5, 0.8, 0.9].iter().map(|&v| cand("k", v, 1.0)).collect();
        let out = visual_filter(&cs, &DvpConfig::appendix_profile());
        assert_eq!(scores(&out), vec![0.2, 0.5, 0.8]);
    }

    #[test]
    fn empty_input_empty_output() {
        assert!(visual_filter(&[], &DvpConfig::main_profile()).is_empty());
        assert!(visual_filter(&[], &DvpConfig::appendix_profile()).is_empty());
        assert!(linguistic_filter(&[], &DvpConfig::main_profile()).is_empty());
    }

    #[test]
    fn ties_broken_by_input_order() {
        let cs: Vec<_> = (0..5).map(|i| cand(&format!("k{i}"), 0.5, 1.0)).collect();
        let cfg = DvpConfig { visual_mode: VisualMode::Percentile { k: 20.0 }, ..DvpConfig::main_profile() };
        let kept: Vec<_> = visual_filter(&cs, &cfg).into_iter().map(|c| c.keyword).collect();
        assert_eq!(kept, ["k1", "k2", "k3"]);
    }

    #[test]
    fn linguistic_threshold() {
        let cs = vec![cand("a", 0.3, 0.95), cand("b", 0.3, 0.91), cand("c", 0.3, 0.85)];
        let kept: Vec<_> = linguistic_filter(&cs, &DvpConfig::main_profile()).into_iter().map(|c| c.keyword).collect();
        assert_eq!(kept, ["a", "b"]);
        let zero = DvpConfig { tau: 0.0, ..DvpConfig::main_profile() };
        assert_eq!(linguistic_filter(&cs, &zero), cs);
        let all_below = vec![cand("a", 0.3, 0.5), cand("b", 0.3, 0.2)];
        assert!(linguistic_filter(&all_below, &DvpConfig::main_profile()).is_empty());
    }

    #[test]
    fn fallback_when_nothing_survives() {
        let cs = vec![cand("a", 0.3, 0.1), cand("b", 0.4, 0.2)];
        let out = select_from_candidates(&cs, &DvpConfig::appendix_profile());
        assert!(out.fallback_used);
        assert!(out.keywords.is_empty());
    }

    #[test]
    fn dedupe_case_insensitive_first_wins() {
        let cs = vec![cand("Bus", 0.3, 0.95), cand("bus", 0.4, 0.95), cand("tram", 0.5, 0.95)];
        let out = select_from_candidates(&cs, &DvpConfig::appendix_profile());
        assert_eq!(out.keywords, ["Bus", "tram"]);
        assert_eq!(out.provenance[0].visual_score, 0.3);
        let no_dedupe = DvpConfig { dedupe: false, ..DvpConfig::appendix_profile() };
        assert_eq!(select_from_candidates(&cs, &no_dedupe).keywords.len(), 3);
    }

    #[test]
    fn single_stage_toggles() {
        let cs = vec![cand("a", 0.1, 0.95), cand("b", 0.5, 0.5), cand("c", 0.5, 0.95)];
        let cfg = DvpConfig::appendix_profile();
        let vv = select_from_candidates(&cs, &cfg.clone().with_stages(Stages::VisualOnly));
        assert_eq!(vv.keywords, ["b", "c"]);
        let lv = select_from_candidates(&cs, &cfg.clone().with_stages(Stages::LinguisticOnly));
        assert_eq!(lv.keywords, ["a", "c"]);
        assert_eq!(select_from_candidates(&cs, &cfg).keywords, ["c"]);
    }

    #[test]
    fn premise_policy() {
        let factual = vec!["a".to_string(), "b".to_string()];
        assert_eq!(premise_for(&factual, 0, PremisePolicy::AlignedThenJoined), "a");
        assert_eq!(premise_for(&factual, 2, PremisePolicy::AlignedThenJoined), "a, b");
        assert_eq!(premise_for(&factual, 0, PremisePolicy::JoinedOnly), "a, b");
    }

    #[test]
    fn config_validation() {
        assert!(DvpConfig::main_profile().validate().is_ok());
        assert!(DvpConfig::appendix_profile().validate().is_ok());
        let bad_k = DvpConfig { visual_mode: VisualMode::Percentile { k: 50.0 }, ..DvpConfig::main_profile() };
        assert!(bad_k.validate().is_err());
        let bad_band =
            DvpConfig { visual_mode: VisualMode::Absolute { low: 0.8, high: 0.2 }, ..DvpConfig::main_profile() };
        assert!(bad_band.validate().is_err());
        let bad_tau = DvpConfig { tau: 1.5, ..DvpConfig::main_profile() };
        assert!(bad_tau.validate().is_err());
    }

    #[test]
    fn trend_single_iteration_and_empty() {
        assert!(iteration_trend(&[]).is_empty());
        let cs = vec![cand("a", 0.2, 0.9), cand("b", 0.4, 0.7)];
        let rows = iteration_trend(&cs);
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_visual - 0.3).abs() < 1e-12);
        assert!((rows[0].mean_contradiction - 0.8).abs() < 1e-12);
    }

    #[test]
    fn trend_omits_empty_iterations_and_sorts() {
        let mut a = cand("a", 0.2, 0.9);
        a.iteration = 5;
        let mut b = cand("b", 0.4, 0.7);
        b.iteration = 2;
        let rows = iteration_trend(&[a, b]);
        assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), [2, 5]);
    }

    #[test]
    fn aggregate_is_mean_of_image_rows() {
        let img1 = vec![TrendRow { iteration: 1, count: 3, mean_visual: 0.2, mean_contradiction: 0.9 }];
        let img2 = vec![TrendRow { iteration: 1, count: 1, mean_visual: 0.4, mean_contradiction: 0.5 }];
        let agg = aggregate_trends(&[img1, img2]);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].count, 4);
        assert!((agg[0].mean_visual - 0.3).abs() < 1e-12);
        assert!((agg[0].mean_contradiction - 0.7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn tau_monotonicity(contras in prop::collection::vec(0.0f64..=1.0, 0..40), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let cs: Vec<_> = contras.iter().enumerate().map(|(i, &c)| cand(&format!("k{i}"), 0.3, c)).collect();
            let loose: Vec<String> = linguistic_filter(&cs, &DvpConfig { tau: lo, ..DvpConfig::main_profile() }).into_iter().map(|c| c.keyword).collect();
            let strict = linguistic_filter(&cs, &DvpConfig { tau: hi, ..DvpConfig::main_profile() });
            for c in strict {
                prop_assert!(loose.contains(&c.keyword));
            }
        }

        #[test]
        fn percentile_trim_size_law(n in 0usize..200, k in prop::sample::select(vec![10.0, 20.0, 30.0])) {
            // distinct scores, permuted by a stride coprime with most n
            let cs: Vec<_> = (0..n).map(|i| cand(&format!("k{i}"), ((i * 37) % 1009) as f64 / 1009.0, 1.0)).collect();
            let cfg = DvpConfig { visual_mode: VisualMode::Percentile { k }, ..DvpConfig::main_profile() };
            let t = (k as usize * n) / 100;
            prop_assert_eq!(visual_filter(&cs, &cfg).len(), n - 2 * t);
        }

        #[test]
        fn percentile_matches_sort_and_trim(scores in prop::collection::vec(-1.0f64..=1.0, 0..200)) {
            let cs: Vec<_> = scores.iter().enumerate().map(|(i, &v)| cand(&format!("k{i}"), v, 1.0)).collect();
            let got: Vec<usize> = visual_filter(&cs, &DvpConfig::main_profile())
                .iter()
                .map(|c| c.keyword[1..].parse().unwrap())
                .collect();
            // oracle: selection-by-rank with index tiebreak, integer trim
            let n = scores.len();
            let t = 20 * n / 100;
            let mut expected: Vec<usize> = (0..n)
                .filter(|&i| {
                    let rank = (0..n)
                        .filter(|&j| scores[j] < scores[i] || (scores[j] == scores[i] && j < i))
                        .count();
                    rank >= t && rank < n - t
                })
                .collect();
            expected.sort_unstable();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn absolute_mode_factorizes(vals in prop::collection::vec((0usize..12, -1.0f64..=1.0, 0.0f64..=1.0), 0..60)) {
            let cs: Vec<_> = vals.iter().map(|&(w, v, c)| cand(&format!("W{w}"), v, c)).collect();
            let cfg = DvpConfig::appendix_profile();
            let got: HashSet<String> = select_from_candidates(&cs, &cfg).keywords.iter().map(|k| k.to_lowercase()).collect();
            let vv: HashSet<usize> = (0..cs.len()).filter(|&i| (0.2..=0.8).contains(&cs[i].visual_score)).collect();
            let lv: HashSet<usize> = (0..cs.len()).filter(|&i| cs[i].nli.contradiction() >= 0.8).collect();
            let expected: HashSet<String> = vv.intersection(&lv).map(|&i| cs[i].keyword.to_lowercase()).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn selection_is_deterministic(vals in prop::collection::vec((-1.0f64..=1.0, 0.0f64..=1.0), 0..60)) {
            let cs: Vec<_> = vals.iter().enumerate().map(|(i, &(v, c))| cand(&format!("k{}", i % 7), v, c)).collect();
            let cfg = DvpConfig::main_profile();
            prop_assert_eq!(select_from_candidates(&cs, &cfg), select_from_candidates(&cs, &cfg));
        }
    }
}
