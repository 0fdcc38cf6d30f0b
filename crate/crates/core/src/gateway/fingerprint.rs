//! Content-addressed request keys.
//!
//! A request is reduced to a canonical JSON value (object keys sorted, image
//! bytes replaced by their SHA-256) and the SHA-256 of its serialized bytes
//! is the fingerprint. Fingerprints key both the response cache and mock
//! fixtures, so the endpoint URL is deliberately not part of them.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::types::{ChatRequest, ImageRef};
use super::GatewayError;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendRequest {
    Chat(ChatRequest),
    ClipScore { model_id: String, image: ImageRef, text: String },
    Nli { model_id: String, premise: String, hypothesis: String },
}

impl BackendRequest {
    /// Canonical form given the SHA-256 of the attached image, if any.
    pub fn canonical(&self, image_sha256: Option<&str>) -> Value {
        match self {
            BackendRequest::Chat(req) => {
                let messages: Vec<Value> = req
                    .messages
                    .iter()
                    .map(|m| {
                        let mut v = json!({ "role": m.role.as_str(), "text": m.text });
                        if m.image.is_some() {
                            v["image_sha256"] = json!(image_sha256);
                        }
                        v
                    })
                    .collect();
                json!({
                    "kind": "chat",
                    "model_id": req.model_id,
                    "messages": messages,
                    "temperature": req.temperature,
                    "max_tokens": req.max_tokens,
                    "seed": req.seed,
                })
            }
            BackendRequest::ClipScore { model_id, text, .. } => json!({
                "kind": "clip_score",
                "model_id": model_id,
                "image_sha256": image_sha256,
                "text": text,
            }),
            BackendRequest::Nli { model_id, premise, hypothesis } => json!({
                "kind": "nli",
                "model_id": model_id,
                "premise": premise,
                "hypothesis": hypothesis,
            }),
        }
    }

    pub fn image(&self) -> Option<&ImageRef> {
        match self {
            BackendRequest::Chat(req) => req.image(),
            BackendRequest::ClipScore { image, .. } => Some(image),
            BackendRequest::Nli { .. } => None,
        }
    }
}

pub fn digest_canonical(canonical: &Value) -> String {
    // serde_json's default map is ordered, so serialization is canonical.
    let bytes = serde_json::to_vec(canonical).expect("json values always serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Stable 256-bit hex digest of a backend request. Reads the attached image, if any.
pub fn request_fingerprint(req: &BackendRequest) -> Result<String, GatewayError> {
    let sha = match req.image() {
        Some(img) => Some(img.load()?.sha256),
        None => None,
    };
    Ok(digest_canonical(&req.canonical(sha.as_deref())))
}
