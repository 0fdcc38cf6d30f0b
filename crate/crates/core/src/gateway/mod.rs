//! Model backends: chat completion with image input, image-text similarity
//! and NLI classification, behind live HTTP clients or fixture-backed mocks,
//! with a shared content-addressed response cache.

mod backend;
mod cache;
mod fingerprint;
pub mod mock;
mod transport;
mod types;
pub mod wire;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use backend::{Backend, GatewayStats, StatsSnapshot};
pub use cache::{read_fixture_file, FixtureRecord, ResponseCache};
pub use fingerprint::{digest_canonical, request_fingerprint, BackendRequest};
pub use transport::{HttpTransport, Limiter, RetryPolicy, Transport, TransportError, WireRequest};
pub use types::{
    BackendConfig, BackendKind, BackendMode, ChatMessage, ChatRequest, ChatResponse, ImageData, ImageRef, NliScores,
    Role, TokenCounts, NLI_RENORMALIZE_TOLERANCE,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("cannot read image {path}: {reason}")]
    ImageUnreadable { path: String, reason: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no fixture for request fingerprint {fingerprint}")]
    FixtureMiss { fingerprint: String },
    #[error("malformed NLI scores: {0}")]
    MalformedScores(String),
    #[error("similarity score {0} outside [-1, 1]")]
    ScoreOutOfRange(f64),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("io error: {0}")]
    Io(String),
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

pub trait VisualScorer: Send + Sync {
    /// Cosine similarity between the image and text embeddings, in [-1, 1].
    fn clip_score(&self, image: &ImageRef, text: &str) -> Result<f64, GatewayError>;
}

pub trait NliModel: Send + Sync {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, GatewayError>;
}

impl<T: ChatModel + ?Sized> ChatModel for Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).chat(req)
    }
}

impl<T: VisualScorer + ?Sized> VisualScorer for Arc<T> {
    fn clip_score(&self, image: &ImageRef, text: &str) -> Result<f64, GatewayError> {
        (**self).clip_score(image, text)
    }
}

impl<T: NliModel + ?Sized> NliModel for Arc<T> {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, GatewayError> {
        (**self).nli(premise, hypothesis)
    }
}

/// The backend roles a pipeline run needs.
#[derive(Clone)]
pub struct Backends {
    /// Model under evaluation.
    pub chat: Arc<dyn ChatModel>,
    /// Keyword generator; the evaluated model when no separate one is configured.
    pub keyword: Arc<dyn ChatModel>,
    pub visual: Arc<dyn VisualScorer>,
    pub nli: Arc<dyn NliModel>,
    pub judge: Option<Arc<dyn ChatModel>>,
}

/// Serializable description of the backend roles.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackendSet {
    pub chat: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<BackendConfig>,
    pub visual: BackendConfig,
    pub nli: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendConfig>,
}

impl BackendSet {
    /// Every role served from one fixture file.
    pub fn mock(fixture_path: &Path, chat_model: &str) -> Self {
        Self {
            chat: BackendConfig::mock(BackendKind::Chat, fixture_path, chat_model),
            keyword: Some(BackendConfig::mock(BackendKind::Chat, fixture_path, "keyword")),
            visual: BackendConfig::mock(BackendKind::VisualScorer, fixture_path, "clip"),
            nli: BackendConfig::mock(BackendKind::NliScorer, fixture_path, "nli"),
            judge: Some(BackendConfig::mock(BackendKind::Chat, fixture_path, "judge")),
        }
    }

    fn all(&self) -> impl Iterator<Item = &BackendConfig> {
        [Some(&self.chat), self.keyword.as_ref(), Some(&self.visual), Some(&self.nli), self.judge.as_ref()]
            .into_iter()
            .flatten()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        self.all().try_for_each(BackendConfig::validate)
    }

    pub fn all_mock(&self) -> bool {
        self.all().all(BackendConfig::is_mock)
    }

    /// Model id used for keyword generation.
    pub fn keyword_model_id(&self) -> &str {
        &self.keyword.as_ref().unwrap_or(&self.chat).model_id
    }

    /// Builds every role over one cache, stats counter and limiter. With
    /// `transport` set, it replaces the transport each config implies.
    pub fn build(
        &self,
        cache: Arc<ResponseCache>,
        stats: Arc<GatewayStats>,
        limiter: Arc<Limiter>,
        transport: Option<Arc<dyn Transport>>,
    ) -> Result<Backends, GatewayError> {
        let make = |cfg: &BackendConfig| -> Result<Arc<Backend>, GatewayError> {
            let backend = match &transport {
                Some(t) => Backend::with_transport(cfg.clone(), t.clone(), cache.clone()),
                None => Backend::from_config(cfg.clone(), cache.clone())?,
            };
            Ok(Arc::new(backend.with_stats(stats.clone()).with_limiter(limiter.clone())))
        };
        let chat = make(&self.chat)?;
        Ok(Backends {
            keyword: match &self.keyword {
                Some(k) => make(k)?,
                None => chat.clone(),
            },
            chat,
            visual: make(&self.visual)?,
            nli: make(&self.nli)?,
            judge: match &self.judge {
                Some(j) => Some(make(j)? as Arc<dyn ChatModel>),
                None => None,
            },
        })
    }
}
