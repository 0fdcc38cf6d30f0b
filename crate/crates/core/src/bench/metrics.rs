use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{BenchError, BenchmarkSample, Extracted, Gold, PredictionRecord};
use crate::keywordgen::KeywordRecord;

/// Confusion counts with "yes" as the positive class.
///
/// An unparseable answer is wrong: it lands in `fn_` when the gold answer is
/// yes and in `fp` when it is no, and never counts toward `yes_ratio`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub unparseable: u64,
    pub yes_answers: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_ratio: f64,
}

impl BinaryMetrics {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Derives the rates from raw counts. Empty denominators give 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64, unparseable: u64, yes_answers: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let total = tp + fp + fn_ + tn;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self {
            tp,
            fp,
            fn_,
            tn,
            unparseable,
            yes_answers,
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
            yes_ratio: ratio(yes_answers, total),
        }
    }
}

pub fn compute_binary_metrics(
    preds: &[PredictionRecord],
    golds: &HashMap<String, bool>,
) -> Result<BinaryMetrics, BenchError> {
    let (mut tp, mut fp, mut fn_, mut tn, mut unparseable, mut yes) = (0, 0, 0, 0, 0, 0);
    for p in preds {
        let gold = *golds.get(&p.sample_id).ok_or_else(|| BenchError::MissingGold(p.sample_id.clone()))?;
        match (&p.extracted, gold) {
            (Extracted::Yes, true) => tp += 1,
            (Extracted::Yes, false) => fp += 1,
            (Extracted::No, true) => fn_ += 1,
            (Extracted::No, false) => tn += 1,
            (_, true) => {
                unparseable += 1;
                fn_ += 1
            }
            (_, false) => {
                unparseable += 1;
                fp += 1
            }
        }
        if p.extracted == Extracted::Yes {
            yes += 1;
        }
    }
    Ok(BinaryMetrics::from_counts(tp, fp, fn_, tn, unparseable, yes))
}

/// Whether an extracted answer matches a discriminative gold.
pub fn is_correct(extracted: &Extracted, gold: &Gold) -> bool {
    match (extracted, gold) {
        (Extracted::Yes, Gold::YesNo { yes }) => *yes,
        (Extracted::No, Gold::YesNo { yes }) => !*yes,
        (Extracted::Option(got), Gold::Option { label, .. }) => got.eq_ignore_ascii_case(label),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmvpMode {
    #[default]
    PerQuestion,
    PerPair,
}

impl MmvpMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MmvpMode::PerQuestion => "per_question",
            MmvpMode::PerPair => "per_pair",
        }
    }
}

impl std::str::FromStr for MmvpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_question" => Ok(MmvpMode::PerQuestion),
            "per_pair" => Ok(MmvpMode::PerPair),
            other => Err(format!("unknown MMVP mode {other:?} (expected per_question or per_pair)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternAccuracy {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

impl PatternAccuracy {
    fn new(correct: u64, total: u64) -> Self {
        Self { correct, total, accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 } }
    }
}

/// Units are questions in per-question mode and pairs in per-pair mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmvpAccuracy {
    pub mode: MmvpMode,
    pub overall: PatternAccuracy,
    pub per_pattern: BTreeMap<String, PatternAccuracy>,
}

/// Per-pattern and overall MMVP accuracy. A pair scores only when both of
/// its questions are answered correctly; a pair takes its first question's
/// pattern.
pub fn compute_mmvp_accuracy(
    preds: &[PredictionRecord],
    samples: &[BenchmarkSample],
    mode: MmvpMode,
) -> Result<MmvpAccuracy, BenchError> {
    let by_id: HashMap<&str, &BenchmarkSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    // unit key -> (pattern, correctness of each question), in first-seen order
    let mut units: Vec<(String, String, Vec<bool>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for p in preds {
        let s = by_id.get(p.sample_id.as_str()).ok_or_else(|| BenchError::MissingGold(p.sample_id.clone()))?;
        let unit = match mode {
            MmvpMode::PerQuestion => s.sample_id.clone(),
            MmvpMode::PerPair => s.pair_id().ok_or_else(|| BenchError::MissingPairId(s.sample_id.clone()))?.to_string(),
        };
        let i = *index.entry(unit.clone()).or_insert_with(|| {
            units.push((unit, s.pattern().unwrap_or("").to_string(), Vec::new()));
            units.len() - 1
        });
        units[i].2.push(is_correct(&p.extracted, &s.gold));
    }

    let mut per_pattern: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for (unit, pattern, results) in &units {
        if mode == MmvpMode::PerPair && results.len() != 2 {
            return Err(BenchError::MalformedPair { pair_id: unit.clone(), size: results.len() });
        }
        let entry = per_pattern.entry(pattern.clone()).or_default();
        entry.1 += 1;
        if results.iter().all(|&c| c) {
            entry.0 += 1;
        }
    }
    let (correct, total) = per_pattern.values().fold((0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(MmvpAccuracy {
        mode,
        overall: PatternAccuracy::new(correct, total),
        per_pattern: per_pattern.into_iter().map(|(k, (c, t))| (k, PatternAccuracy::new(c, t))).collect(),
    })
}

/// Largest factual-keyword count that still counts as low information.
pub const LOW_INFORMATION_MAX_KEYWORDS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationLevel {
    Low,
    High,
}

impl InformationLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            InformationLevel::Low => "low",
            InformationLevel::High => "high",
        }
    }
}

pub fn information_level(n_factual: usize) -> InformationLevel {
    if n_factual <= LOW_INFORMATION_MAX_KEYWORDS {
        InformationLevel::Low
    } else {
        InformationLevel::High
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InformationSplit {
    pub low: Vec<String>,
    pub high: Vec<String>,
}

/// Partitions ids by the factual-keyword count of their record.
pub fn split_by_information_level<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a KeywordRecord)>,
) -> InformationSplit {
    let mut split = InformationSplit::default();
    for (id, rec) in records {
        match information_level(rec.factual.len()) {
            InformationLevel::Low => split.low.push(id.to_string()),
            InformationLevel::High => split.high.push(id.to_string()),
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{BenchmarkKind, RequestSummary};
    use crate::gateway::ImageRef;
    use proptest::prelude::*;

    fn pred(id: &str, extracted: Extracted) -> PredictionRecord {
        PredictionRecord {
            sample_id: id.into(),
            condition: "baseline".into(),
            raw_answer: String::new(),
            extracted,
            keywords_used: vec![],
            fallback_used: false,
            request: RequestSummary { model_id: "m".into(), temperature: 0.0, max_tokens: 64, prompt: String::new() },
        }
    }

    fn confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<PredictionRecord>, HashMap<String, bool>) {
        let mut preds = Vec::new();
        let mut golds = HashMap::new();
        let groups = [
            (tp, Extracted::Yes, true),
            (fp, Extracted::Yes, false),
            (fn_, Extracted::No, true),
            (tn, Extracted::No, false),
        ];
        for (g, (n, ex, gold)) in groups.into_iter().enumerate() {
            for i in 0..n {
                let id = format!("{g}-{i}");
                golds.insert(id.clone(), gold);
                preds.push(pred(&id, ex.clone()));
            }
        }
        (preds, golds)
    }

    #[test]
    fn confusion_fixture() {
        let (p, g) = confusion(3, 1, 1, 5);
        let m = compute_binary_metrics(&p, &g).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 1, 5));
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.f1, 0.75);
        assert_eq!(m.yes_ratio, 0.4);
    }

    #[test]
    fn perfect_and_all_yes() {
        let (p, g) = confusion(4, 0, 0, 6);
        let m = compute_binary_metrics(&p, &g).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        let (p, g) = confusion(5, 5, 0, 0);
        let m = compute_binary_metrics(&p, &g).unwrap();
        assert_eq!((m.yes_ratio, m.recall, m.precision), (1.0, 1.0, 0.5));
    }

    #[test]
    fn unparseable_is_wrong_and_not_yes() {
        let mut golds = HashMap::new();
        golds.insert("a".to_string(), true);
        golds.insert("b".to_string(), false);
        let preds = vec![pred("a", Extracted::Unparseable), pred("b", Extracted::Unparseable)];
        let m = compute_binary_metrics(&preds, &golds).unwrap();
        assert_eq!((m.fn_, m.fp, m.unparseable, m.accuracy, m.yes_ratio), (1, 1, 2, 0.0, 0.0));
    }

    #[test]
    fn missing_gold() {
        assert_eq!(
            compute_binary_metrics(&[pred("x", Extracted::Yes)], &HashMap::new()),
            Err(BenchError::MissingGold("x".into()))
        );
    }

    #[test]
    fn f1_zero_when_no_positives_found() {
        let (p, g) = confusion(0, 0, 3, 2);
        assert_eq!(compute_binary_metrics(&p, &g).unwrap().f1, 0.0);
    }

    fn mmvp_sample(id: &str, pair: Option<&str>, pattern: &str, label: &str) -> BenchmarkSample {
        let mut metadata = BTreeMap::new();
        metadata.insert("pattern".to_string(), pattern.to_string());
        if let Some(p) = pair {
            metadata.insert("pair_id".to_string(), p.to_string());
        }
        BenchmarkSample {
            sample_id: id.into(),
            benchmark: BenchmarkKind::Mmvp,
            image_ref: ImageRef::new(format!("{id}.jpg")),
            question: "q".into(),
            gold: Gold::Option {
                label: label.into(),
                choices: vec![("a".into(), "x".into()), ("b".into(), "y".into())],
            },
            metadata,
        }
    }

    fn opt(l: &str) -> Extracted {
        Extracted::Option(l.into())
    }

    #[test]
    fn mmvp_modes() {
        let samples = vec![
            mmvp_sample("1", Some("p1"), "Text", "a"),
            mmvp_sample("2", Some("p1"), "Text", "b"),
            mmvp_sample("3", Some("p2"), "Quantity and Count", "a"),
            mmvp_sample("4", Some("p2"), "Quantity and Count", "b"),
        ];
        let preds = vec![pred("1", opt("a")), pred("2", opt("a")), pred("3", opt("a")), pred("4", opt("a"))];
        let q = compute_mmvp_accuracy(&preds, &samples, MmvpMode::PerQuestion).unwrap();
        assert_eq!(q.overall.accuracy, 0.5);
        let p = compute_mmvp_accuracy(&preds, &samples, MmvpMode::PerPair).unwrap();
        assert_eq!(p.overall.accuracy, 0.0);
        assert_eq!(p.overall.total, 2);
        let all = vec![pred("1", opt("a")), pred("2", opt("b")), pred("3", opt("a")), pred("4", opt("b"))];
        assert_eq!(compute_mmvp_accuracy(&all, &samples, MmvpMode::PerQuestion).unwrap().overall.accuracy, 1.0);
        assert_eq!(compute_mmvp_accuracy(&all, &samples, MmvpMode::PerPair).unwrap().overall.accuracy, 1.0);
    }

    #[test]
    fn mmvp_missing_pair_id() {
        let samples = vec![mmvp_sample("1", None, "Text", "a")];
        assert_eq!(
            compute_mmvp_accuracy(&[pred("1", opt("a"))], &samples, MmvpMode::PerPair),
            Err(BenchError::MissingPairId("1".into()))
        );
    }

    #[test]
    fn information_boundary() {
        assert_eq!(information_level(7), InformationLevel::Low);
        assert_eq!(information_level(8), InformationLevel::High);
        assert_eq!(information_level(0), InformationLevel::Low);
        let rec = |n: usize| KeywordRecord {
            image_ref: ImageRef::new("i.png"),
            factual: (0..n).map(|i| format!("f{i}")).collect(),
            counterfactual_sets: vec![vec!["c".into()]],
            generation_temperature: 0.8,
            raw_response: String::new(),
        };
        let (a, b, c) = (rec(7), rec(8), rec(0));
        let split = split_by_information_level([("a", &a), ("b", &b), ("c", &c)]);
        assert_eq!(split.low, ["a", "c"]);
        assert_eq!(split.high, ["b"]);
    }

    proptest! {
        #[test]
        fn pair_accuracy_bounded_and_patterns_recompose(
            pairs in prop::collection::vec((0usize..9, any::<bool>(), any::<bool>()), 1..40)
        ) {
            let mut samples = Vec::new();
            let mut preds = Vec::new();
            for (i, &(pat, c1, c2)) in pairs.iter().enumerate() {
                let pattern = crate::bench::MMVP_PATTERNS[pat];
                for (j, correct) in [c1, c2].into_iter().enumerate() {
                    let id = format!("{i}-{j}");
                    samples.push(mmvp_sample(&id, Some(&format!("p{i}")), pattern, "a"));
                    preds.push(pred(&id, opt(if correct { "a" } else { "b" })));
                }
            }
            let q = compute_mmvp_accuracy(&preds, &samples, MmvpMode::PerQuestion).unwrap();
            let p = compute_mmvp_accuracy(&preds, &samples, MmvpMode::PerPair).unwrap();
            prop_assert!(p.overall.accuracy <= q.overall.accuracy);
            for acc in [&q, &p] {
                let weighted: f64 = acc.per_pattern.values().map(|v| v.accuracy * v.total as f64).sum::<f64>()
                    / acc.overall.total as f64;
                prop_assert!((weighted - acc.overall.accuracy).abs() <= 1e-12);
            }
        }
    }
}
