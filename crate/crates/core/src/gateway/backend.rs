use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cache::ResponseCache;
use super::fingerprint::{digest_canonical, BackendRequest};
use super::mock::MockTransport;
use super::transport::{HttpTransport, Limiter, RetryPolicy, Transport, TransportError, WireRequest};
use super::types::{BackendConfig, BackendMode, ChatRequest, ChatResponse, ImageRef, NliScores};
use super::wire::{self, ClipScoreRequest, ClipScoreResponse, NliRequest, NliResponse};
use super::{ChatModel, GatewayError, NliModel, VisualScorer};

/// Backend traffic counters.
#[derive(Debug, Default)]
pub struct GatewayStats {
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

impl GatewayStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }
}

/// One configured backend: transport, cache, retry and concurrency bound.
pub struct Backend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    limiter: Option<Arc<Limiter>>,
    stats: Arc<GatewayStats>,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Backend {
    /// Builds the transport implied by the config's mode.
    pub fn from_config(config: BackendConfig, cache: Arc<ResponseCache>) -> Result<Self, GatewayError> {
        config.validate()?;
        let transport: Arc<dyn Transport> = match &config.mode {
            BackendMode::Live => Arc::new(HttpTransport::new().map_err(|e| GatewayError::Transport(e.to_string()))?),
            BackendMode::Mock { fixture_path } => Arc::new(MockTransport::from_file(fixture_path)?),
        };
        Ok(Self::with_transport(config, transport, cache))
    }

    pub fn with_transport(config: BackendConfig, transport: Arc<dyn Transport>, cache: Arc<ResponseCache>) -> Self {
        let retry = RetryPolicy { max_retries: config.max_retries, ..RetryPolicy::default() };
        Self { config, transport, cache, retry, limiter: None, stats: Arc::new(GatewayStats::default()) }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<Limiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_stats(mut self, stats: Arc<GatewayStats>) -> Self {
        self.stats = stats;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    fn bearer_token(&self) -> Result<Option<String>, GatewayError> {
        if !matches!(self.config.mode, BackendMode::Live) || self.config.auth_env_var.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.config.auth_env_var) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(GatewayError::Auth(format!("environment variable {} is not set", self.config.auth_env_var))),
        }
    }

    /// Fingerprints `req`, then serves it from cache or the transport.
    /// `parse` validates the reply before it is cached.
    fn execute<T>(
        &self,
        req: &BackendRequest,
        path: &str,
        build_body: impl FnOnce(Option<&super::types::ImageData>) -> Value,
        parse: impl Fn(&Value) -> Result<T, GatewayError>,
    ) -> Result<(T, bool), GatewayError> {
        let image = req.image().map(ImageRef::load).transpose()?;
        let fingerprint = digest_canonical(&req.canonical(image.as_ref().map(|i| i.sha256.as_str())));
        let (value, cached) = self.cache.get_or_insert_with(&fingerprint, || {
            let bearer_token = self.bearer_token()?;
            let wire = WireRequest {
                fingerprint: fingerprint.clone(),
                url: wire::join_url(&self.config.endpoint_url, path),
                body: build_body(image.as_ref()),
                bearer_token,
                timeout: self.config.timeout,
            };
            let _permit = self.limiter.as_ref().map(|l| l.acquire());
            self.stats.backend_calls.fetch_add(1, Ordering::SeqCst);
            let value = self.retry.run(|| self.transport.send(&wire)).map_err(map_transport_error)?;
            parse(&value)?;
            Ok(value)
        })?;
        if cached {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
        }
        Ok((parse(&value)?, cached))
    }
}

fn map_transport_error(e: TransportError) -> GatewayError {
    match e {
        TransportError::FixtureMiss { fingerprint } => GatewayError::FixtureMiss { fingerprint },
        e if e.is_auth() => GatewayError::Auth(e.to_string()),
        TransportError::Decode(msg) => GatewayError::MalformedResponse(msg),
        e => GatewayError::Transport(e.to_string()),
    }
}

impl ChatModel for Backend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let backend_req = BackendRequest::Chat(req.clone());
        let ((text, token_counts, model), cached) =
            self.execute(&backend_req, wire::CHAT_PATH, |img| wire::chat_body(req, img), wire::parse_chat_body)?;
        Ok(ChatResponse { text, backend_id: model.unwrap_or_else(|| req.model_id.clone()), token_counts, cached })
    }
}

impl VisualScorer for Backend {
    fn clip_score(&self, image: &ImageRef, text: &str) -> Result<f64, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("clip_score text must be non-empty".into()));
        }
        let req = BackendRequest::ClipScore {
            model_id: self.config.model_id.clone(),
            image: image.clone(),
            text: text.to_string(),
        };
        let (scores, _) = self.execute(
            &req,
            wire::CLIP_SCORE_PATH,
            |img| {
                let img = img.expect("clip requests always carry an image");
                serde_json::to_value(ClipScoreRequest::new(img, vec![text.to_string()])).expect("serializable")
            },
            |v| {
                let resp: ClipScoreResponse =
                    serde_json::from_value(v.clone()).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
                resp.into_scores(1)
            },
        )?;
        Ok(scores[0])
    }
}

impl NliModel for Backend {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, GatewayError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("nli premise and hypothesis must be non-empty".into()));
        }
        let req = BackendRequest::Nli {
            model_id: self.config.model_id.clone(),
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
        };
        let (scores, _) = self.execute(
            &req,
            wire::NLI_PATH,
            |_| {
                serde_json::to_value(NliRequest { pairs: vec![(premise.to_string(), hypothesis.to_string())] })
                    .expect("serializable")
            },
            |v| {
                let resp: NliResponse =
                    serde_json::from_value(v.clone()).map_err(|e| GatewayError::MalformedScores(e.to_string()))?;
                match resp.scores.into_iter().next() {
                    Some(t) => t.into_scores(),
                    None => Err(GatewayError::MalformedScores("empty scores list".into())),
                }
            },
        )?;
        Ok(scores)
    }
}
