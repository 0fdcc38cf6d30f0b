//! Factual and counterfactual keyword generation.

mod mix;
mod parse;
mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatModel, ChatRequest, GatewayError, ImageRef};

pub use mix::{factual_share, mix_keywords, KeywordOrigin, MixedKeywordSet};
pub use parse::{parse_keyword_lists, serialize_keyword_lists};
pub use prompts::{build_iterative_prompt, build_simple_prompt, prompt_for_iterations, ITERATIVE_PROMPT_SETS};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KeywordError {
    #[error("keyword reply is missing section \"{missing}\"")]
    Parse { missing: String, raw: String },
    #[error("invalid keyword record: {0}")]
    InvalidRecord(String),
    #[error("{0} keyword pool is empty")]
    EmptyPool(&'static str),
    #[error("factual fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Factual keywords and N iterated counterfactual sets for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRecord {
    pub image_ref: ImageRef,
    pub factual: Vec<String>,
    pub counterfactual_sets: Vec<Vec<String>>,
    pub generation_temperature: f64,
    pub raw_response: String,
}

impl KeywordRecord {
    pub fn n_iterations(&self) -> usize {
        self.counterfactual_sets.len()
    }

    pub fn validate(&self, n_expected: usize) -> Result<(), KeywordError> {
        if self.counterfactual_sets.is_empty() {
            return Err(KeywordError::InvalidRecord("no counterfactual sets".into()));
        }
        if self.counterfactual_sets.len() != n_expected {
            return Err(KeywordError::InvalidRecord(format!(
                "expected {n_expected} counterfactual sets, found {}",
                self.counterfactual_sets.len()
            )));
        }
        if self.factual.is_empty() {
            return Err(KeywordError::InvalidRecord("factual keyword list is empty".into()));
        }
        let all = self.factual.iter().chain(self.counterfactual_sets.iter().flatten());
        if all.into_iter().any(|k| k.trim().is_empty()) {
            return Err(KeywordError::InvalidRecord("blank keyword".into()));
        }
        Ok(())
    }
}

/// Decoding settings for the keyword-generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerationSettings {
    /// Sampling temperature used for keyword generation.
    pub const DEFAULT_TEMPERATURE: f64 = 0.8;

    pub fn new(model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), temperature: Self::DEFAULT_TEMPERATURE, max_tokens: 1024, seed: None }
    }
}

/// The single chat request issued for one image.
pub fn keyword_request(image: &ImageRef, n_iterations: usize, settings: &GenerationSettings) -> ChatRequest {
    ChatRequest {
        model_id: settings.model_id.clone(),
        messages: vec![ChatMessage::user_with_image(prompt_for_iterations(n_iterations), image.clone())],
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        seed: settings.seed,
    }
}

/// Asks the chat backend for keywords (one call) and parses the reply.
pub fn generate_keywords(
    chat: &dyn ChatModel,
    image: &ImageRef,
    n_iterations: usize,
    settings: &GenerationSettings,
) -> Result<KeywordRecord, KeywordError> {
    if n_iterations == 0 {
        return Err(KeywordError::InvalidRecord("n_iterations must be at least 1".into()));
    }
    let reply = chat.chat(&keyword_request(image, n_iterations, settings))?;
    let (factual, counterfactual_sets) = parse_keyword_lists(&reply.text, n_iterations)?;
    if factual.is_empty() {
        return Err(KeywordError::Parse { missing: "Factual Keywords (empty list)".into(), raw: reply.text });
    }
    let record = KeywordRecord {
        image_ref: image.clone(),
        factual,
        counterfactual_sets,
        generation_temperature: settings.temperature,
        raw_response: reply.text,
    };
    record.validate(n_iterations)?;
    Ok(record)
}
