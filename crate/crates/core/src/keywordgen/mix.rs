use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KeywordError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordOrigin {
    Factual,
    Counterfactual,
}

/// Counterfactual set contaminated with a fixed share of factual keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedKeywordSet {
    pub keywords: Vec<String>,
    pub origins: Vec<KeywordOrigin>,
    pub factual_fraction: f64,
    pub seed: u64,
}

impl MixedKeywordSet {
    pub fn factual_count(&self) -> usize {
        self.origins.iter().filter(|o| **o == KeywordOrigin::Factual).count()
    }
}

/// `round(fraction * total)` with halves rounded up.
pub fn factual_share(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64) + 0.5).floor() as usize
}

/// Replaces a share of `counterfactual` with factual keywords.
///
/// The output has `counterfactual.len()` entries, `factual_share(fraction, n)`
/// of them drawn from `factual` (without replacement, cycling when `factual`
/// is too small) and the rest drawn without replacement from
/// `counterfactual`, shuffled by a seeded RNG.
pub fn mix_keywords(
    factual: &[String],
    counterfactual: &[String],
    fraction: f64,
    seed: u64,
) -> Result<MixedKeywordSet, KeywordError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(KeywordError::InvalidFraction(fraction));
    }
    if counterfactual.is_empty() {
        return Err(KeywordError::EmptyPool("counterfactual"));
    }
    let total = counterfactual.len();
    let n_factual = factual_share(fraction, total);
    if n_factual > 0 && factual.is_empty() {
        return Err(KeywordError::EmptyPool("factual"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factual_pool: Vec<&String> = factual.iter().collect();
    factual_pool.shuffle(&mut rng);
    let mut cf_pool: Vec<&String> = counterfactual.iter().collect();
    cf_pool.shuffle(&mut rng);

    let mut picked: Vec<(String, KeywordOrigin)> = Vec::with_capacity(total);
    picked.extend(factual_pool.iter().cycle().take(n_factual).map(|k| ((*k).clone(), KeywordOrigin::Factual)));
    picked.extend(cf_pool.iter().take(total - n_factual).map(|k| ((*k).clone(), KeywordOrigin::Counterfactual)));
    picked.shuffle(&mut rng);

    let (keywords, origins) = picked.into_iter().unzip();
    Ok(MixedKeywordSet { keywords, origins, factual_fraction: fraction, seed })
}
