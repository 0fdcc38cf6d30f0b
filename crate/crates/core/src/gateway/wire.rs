//! Request and response bodies for the chat-completions and scorer-service endpoints.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::types::{ChatRequest, ImageData, NliScores, TokenCounts};
use super::GatewayError;

pub const CHAT_PATH: &str = "/chat/completions";
pub const CLIP_SCORE_PATH: &str = "/clip_score";
pub const NLI_PATH: &str = "/nli";

pub fn join_url(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

/// Chat-completions body; the image travels as a base64 data URL.
pub fn chat_body(req: &ChatRequest, image: Option<&ImageData>) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| match (&m.image, image) {
            (Some(_), Some(img)) => json!({
                "role": m.role.as_str(),
                "content": [
                    { "type": "text", "text": m.text },
                    { "type": "image_url", "image_url": {
                        "url": format!("data:{};base64,{}", img.mime, BASE64.encode(&img.bytes))
                    }},
                ],
            }),
            _ => json!({ "role": m.role.as_str(), "content": m.text }),
        })
        .collect();
    let mut body = json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Text, token counts and model name from a chat-completions reply.
pub fn parse_chat_body(v: &Value) -> Result<(String, TokenCounts, Option<String>), GatewayError> {
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => {
            parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect::<Vec<_>>().join("")
        }
        _ => return Err(GatewayError::MalformedResponse("missing choices[0].message.content".into())),
    };
    if text.trim().is_empty() {
        return Err(GatewayError::MalformedResponse("empty completion text".into()));
    }
    let usage = TokenCounts {
        input: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        output: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok((text, usage, v["model"].as_str().map(str::to_string)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScoreRequest {
    /// Base64 image bytes or an http(s) URL.
    pub image: String,
    pub texts: Vec<String>,
}

impl ClipScoreRequest {
    pub fn new(image: &ImageData, texts: Vec<String>) -> Self {
        Self { image: BASE64.encode(&image.bytes), texts }
    }
}

/// Either server-side similarities or raw embeddings to compare locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub model_id: String,
}

impl ClipScoreResponse {
    pub fn into_scores(self, n_texts: usize) -> Result<Vec<f64>, GatewayError> {
        let scores = match (self.scores, self.image_embedding, self.text_embeddings) {
            (Some(scores), _, _) => scores,
            (None, Some(img), Some(texts)) => texts.iter().map(|t| cosine_similarity(&img, t)).collect(),
            _ => {
                return Err(GatewayError::MalformedResponse(
                    "clip_score reply has neither scores nor embeddings".into(),
                ))
            }
        };
        if scores.len() != n_texts {
            return Err(GatewayError::MalformedResponse(format!("expected {n_texts} scores, got {}", scores.len())));
        }
        for &s in &scores {
            if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
                return Err(GatewayError::ScoreOutOfRange(s));
            }
        }
        Ok(scores)
    }
}

/// Cosine of the angle between two vectors. NaN for zero or mismatched vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::NAN;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    // One square root over the product keeps identical vectors at exactly 1.
    (dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliRequest {
    pub pairs: Vec<(String, String)>,
}

/// A triple on the wire may be an object or an `[e, n, c]` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireTriple {
    Object { entailment: f64, neutral: f64, contradiction: f64 },
    Array([f64; 3]),
}

impl WireTriple {
    pub fn into_scores(self) -> Result<NliScores, GatewayError> {
        match self {
            WireTriple::Object { entailment, neutral, contradiction } => {
                NliScores::new(entailment, neutral, contradiction)
            }
            WireTriple::Array([e, n, c]) => NliScores::new(e, n, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliResponse {
    pub scores: Vec<WireTriple>,
    #[serde(default)]
    pub model_id: String,
}
