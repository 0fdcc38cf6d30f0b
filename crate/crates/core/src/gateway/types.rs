use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Path to an image on local disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(PathBuf);

impl ImageRef {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self(path.into())
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    /// Reads the file and checks that it carries a known image signature.
    pub fn load(&self) -> Result<ImageData, GatewayError> {
        let bytes = std::fs::read(&self.0)
            .map_err(|e| GatewayError::ImageUnreadable { path: self.0.display().to_string(), reason: e.to_string() })?;
        let mime = sniff_mime(&bytes).ok_or_else(|| GatewayError::ImageUnreadable {
            path: self.0.display().to_string(),
            reason: "unrecognized image format".into(),
        })?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        Ok(ImageData { bytes, mime, sha256 })
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone)]
pub struct ImageData {
    pub bytes: Vec<u8>,
    pub mime: &'static str,
    pub sha256: String,
}

fn sniff_mime(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some("image/png")
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        Some("image/jpeg")
    } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
        Some("image/gif")
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        Some("image/webp")
    } else if bytes.starts_with(b"BM") {
        Some("image/bmp")
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into(), image: None }
    }

    pub fn user_with_image(text: impl Into<String>, image: ImageRef) -> Self {
        Self { role: Role::User, text: text.into(), image: Some(image) }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), image: None }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), image: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("at least one user message is required".into()));
        }
        if self.messages.iter().filter(|m| m.image.is_some()).count() > 1 {
            return Err(GatewayError::InvalidRequest("at most one image per request".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn image(&self) -> Option<&ImageRef> {
        self.messages.iter().find_map(|m| m.image.as_ref())
    }

    /// Text of the last user message.
    pub fn prompt_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.text.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenCounts {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub token_counts: TokenCounts,
    pub cached: bool,
}

/// Ternary NLI distribution. Construction enforces the sum-to-one invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NliScores {
    entailment: f64,
    neutral: f64,
    contradiction: f64,
}

/// Sum drift tolerated before renormalization is refused.
pub const NLI_RENORMALIZE_TOLERANCE: f64 = 1e-4;

impl NliScores {
    /// Validates and, when the sum drifts by at most [`NLI_RENORMALIZE_TOLERANCE`], renormalizes.
    pub fn new(entailment: f64, neutral: f64, contradiction: f64) -> Result<Self, GatewayError> {
        let parts = [entailment, neutral, contradiction];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(GatewayError::MalformedScores(format!(
                "component outside [0,1]: ({entailment}, {neutral}, {contradiction})"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > NLI_RENORMALIZE_TOLERANCE {
            return Err(GatewayError::MalformedScores(format!(
                "components sum to {sum}: ({entailment}, {neutral}, {contradiction})"
            )));
        }
        Ok(Self { entailment: entailment / sum, neutral: neutral / sum, contradiction: contradiction / sum })
    }

    pub fn entailment(&self) -> f64 {
        self.entailment
    }

    pub fn neutral(&self) -> f64 {
        self.neutral
    }

    pub fn contradiction(&self) -> f64 {
        self.contradiction
    }
}

impl<'de> Deserialize<'de> for NliScores {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entailment: f64,
            neutral: f64,
            contradiction: f64,
        }
        let raw = Raw::deserialize(d)?;
        NliScores::new(raw.entailment, raw.neutral, raw.contradiction).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Chat,
    VisualScorer,
    NliScorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BackendMode {
    Live,
    Mock { fixture_path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub mode: BackendMode,
}

impl BackendConfig {
    pub fn live(kind: BackendKind, endpoint_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            kind,
            model_id: model_id.into(),
            endpoint_url: endpoint_url.into(),
            auth_env_var: String::new(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            mode: BackendMode::Live,
        }
    }

    pub fn mock(kind: BackendKind, fixture_path: impl Into<PathBuf>, model_id: impl Into<String>) -> Self {
        Self {
            kind,
            model_id: model_id.into(),
            endpoint_url: String::new(),
            auth_env_var: String::new(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            mode: BackendMode::Mock { fixture_path: fixture_path.into() },
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match &self.mode {
            BackendMode::Live if self.endpoint_url.trim().is_empty() => {
                Err(GatewayError::InvalidConfig(format!("{:?} backend in live mode requires endpoint_url", self.kind)))
            }
            BackendMode::Mock { fixture_path } if !fixture_path.is_file() => {
                Err(GatewayError::InvalidConfig(format!("fixture file {} does not exist", fixture_path.display())))
            }
            _ => Ok(()),
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.mode, BackendMode::Mock { .. })
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
