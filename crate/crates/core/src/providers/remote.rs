//! HTTP clients for remote embedding and reasoning services.
//!
//! Wire protocol, one JSON document each way:
//!
//! | capability     | endpoint               | request                          | reply                |
//! |----------------|------------------------|----------------------------------|----------------------|
//! | text embedding | `$HMSG_EMBED_URL/text`  | `{"text": ..}`                   | `{"embedding": [..]}` |
//! | image embedding| `$HMSG_EMBED_URL/image` | `{"image_ref": ..}`              | `{"embedding": [..]}` |
//! | text reasoner  | `$HMSG_LLM_URL`         | `{"prompt": ..}`                 | `{"text": ..}`        |
//! | image reasoner | `$HMSG_VLM_URL`         | `{"prompt": .., "image_refs": []}` | `{"text": ..}`      |
//!
//! `Authorization: Bearer $HMSG_API_TOKEN` is sent when the token is set.

use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{
    check_prompt, ImageEmbedder, ImageReasoner, ProviderError, ProviderLimits, ProviderSuite, TextEmbedder,
    TextReasoner,
};
use crate::model::Embedding;

pub const ENV_EMBED_URL: &str = "HMSG_EMBED_URL";
pub const ENV_LLM_URL: &str = "HMSG_LLM_URL";
pub const ENV_VLM_URL: &str = "HMSG_VLM_URL";
pub const ENV_API_TOKEN: &str = "HMSG_API_TOKEN";
pub const ENV_OFFLINE: &str = "HMSG_OFFLINE";

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    /// Connection-level failure; retried.
    Network(String),
    Status { status: u16, body: String },
    Decode(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status >= 500 || *status == 429,
            TransportError::Decode(_) => false,
        }
    }
}

/// One JSON POST. Implementations must not retry on their own.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, token: Option<&str>, timeout: Duration)
        -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &Value,
        token: Option<&str>,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let result = req.config().timeout_global(Some(timeout)).build().send_json(body);
        let mut resp = match result {
            Ok(resp) => resp,
            Err(ureq::Error::Timeout(_)) => return Err(TransportError::Timeout),
            Err(ureq::Error::Json(e)) => return Err(TransportError::Decode(e.to_string())),
            Err(e) => return Err(TransportError::Network(e.to_string())),
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Status { status, body });
        }
        match resp.body_mut().read_json::<Value>() {
            Ok(v) => Ok(v),
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Decode(e.to_string())),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self { max: max.max(1), current: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut current = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *current >= self.max {
            current = self.freed.wait(current).unwrap_or_else(|e| e.into_inner());
        }
        *current += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut current = self.0.current.lock().unwrap_or_else(|e| e.into_inner());
        *current -= 1;
        self.0.freed.notify_one();
    }
}

/// Shared plumbing of all remote capabilities: retry, in-flight bound, auth.
#[derive(Clone)]
pub struct RemoteEndpoint {
    url: String,
    token: Option<String>,
    limits: ProviderLimits,
    transport: Arc<dyn Transport>,
    limiter: Arc<InFlightLimiter>,
}

impl RemoteEndpoint {
    pub fn new(
        url: impl Into<String>,
        token: Option<String>,
        limits: ProviderLimits,
        transport: Arc<dyn Transport>,
        limiter: Arc<InFlightLimiter>,
    ) -> Self {
        Self { url: url.into(), token, limits, transport, limiter }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Posts with at most `1 + max_retries` attempts.
    pub fn call(&self, body: &Value) -> Result<Value, ProviderError> {
        let attempts_allowed = 1 + self.limits.max_retries;
        let mut attempt = 1;
        loop {
            let outcome = {
                let _slot = self.limiter.acquire();
                self.transport.post_json(&self.url, body, self.token.as_deref(), self.limits.timeout)
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < attempts_allowed => {
                    debug!(url = %self.url, attempt, error = ?e, "retrying request");
                    attempt += 1;
                }
                Err(e) => {
                    if e.retryable() {
                        warn!(url = %self.url, attempt, "giving up after retries");
                    }
                    return Err(to_provider_error(e, attempt));
                }
            }
        }
    }
}

fn to_provider_error(e: TransportError, attempts: u32) -> ProviderError {
    match e {
        TransportError::Timeout => ProviderError::Timeout { attempts },
        TransportError::Network(message) => ProviderError::Transport { attempts, message },
        TransportError::Status { status, body } => ProviderError::Status { status, body },
        TransportError::Decode(m) => ProviderError::BadReply(m),
    }
}

fn reply_embedding(reply: &Value) -> Result<Embedding, ProviderError> {
    let values = reply
        .get("embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::BadReply("missing `embedding` array".into()))?;
    let values = values
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| ProviderError::BadReply("non-numeric embedding entry".into())))
        .collect::<Result<Vec<_>, _>>()?;
    let e = Embedding::new(values);
    if e.dim() == 0 || !e.is_finite() {
        return Err(ProviderError::BadReply("empty or non-finite embedding".into()));
    }
    Ok(e)
}

fn reply_text(reply: &Value) -> Result<String, ProviderError> {
    reply
        .get("text")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::BadReply("missing `text` field".into()))
}

/// Remote embedder for one modality. The dimension is either configured or
/// pinned by the first successful reply; later replies must match it.
pub struct RemoteEmbedder {
    endpoint: RemoteEndpoint,
    dim: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: RemoteEndpoint, dim: Option<usize>) -> Self {
        let cell = OnceLock::new();
        if let Some(d) = dim {
            let _ = cell.set(d);
        }
        Self { endpoint, dim: cell }
    }

    fn checked(&self, e: Embedding) -> Result<Embedding, ProviderError> {
        let expected = *self.dim.get_or_init(|| e.dim());
        if e.dim() != expected {
            return Err(ProviderError::DimMismatch { expected, found: e.dim() });
        }
        Ok(e)
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let reply = self.endpoint.call(&json!({ "text": text }))?;
        self.checked(reply_embedding(&reply)?)
    }
}

impl ImageEmbedder for RemoteEmbedder {
    fn embed_image(&self, image_ref: &str) -> Result<Embedding, ProviderError> {
        if image_ref.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let reply = self.endpoint.call(&json!({ "image_ref": image_ref }))?;
        self.checked(reply_embedding(&reply)?)
    }
}

pub struct RemoteReasoner {
    endpoint: RemoteEndpoint,
}

impl RemoteReasoner {
    pub fn new(endpoint: RemoteEndpoint) -> Self {
        Self { endpoint }
    }
}

impl TextReasoner for RemoteReasoner {
    fn ask_text(&self, prompt: &str) -> Result<String, ProviderError> {
        check_prompt(prompt, &[])?;
        reply_text(&self.endpoint.call(&json!({ "prompt": prompt }))?)
    }
}

impl ImageReasoner for RemoteReasoner {
    fn ask_image(&self, prompt: &str, image_refs: &[&str]) -> Result<String, ProviderError> {
        check_prompt(prompt, image_refs)?;
        reply_text(&self.endpoint.call(&json!({ "prompt": prompt, "image_refs": image_refs }))?)
    }
}

/// Service locations for a remote suite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RemoteConfig {
    pub embed_url: String,
    pub llm_url: String,
    pub vlm_url: String,
    pub token: Option<String>,
    pub embedding_dim: Option<usize>,
}

impl RemoteConfig {
    /// Reads the `HMSG_*` variables through `lookup` (normally `std::env::var`).
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ProviderError> {
        let need = |key: &str| {
            lookup(key).filter(|v| !v.trim().is_empty()).ok_or_else(|| ProviderError::NotConfigured(format!("{key} is not set")))
        };
        Ok(Self {
            embed_url: need(ENV_EMBED_URL)?,
            llm_url: need(ENV_LLM_URL)?,
            vlm_url: need(ENV_VLM_URL)?,
            token: lookup(ENV_API_TOKEN).filter(|t| !t.is_empty()),
            embedding_dim: None,
        })
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }
}

impl ProviderSuite {
    /// Remote suite; all four capabilities share one in-flight bound.
    pub fn remote(config: &RemoteConfig, limits: ProviderLimits, transport: Arc<dyn Transport>) -> Self {
        let limiter = Arc::new(InFlightLimiter::new(limits.max_in_flight));
        let endpoint = |url: String| {
            RemoteEndpoint::new(url, config.token.clone(), limits, transport.clone(), limiter.clone())
        };
        let base = config.embed_url.trim_end_matches('/');
        Self {
            text_embedder: Arc::new(RemoteEmbedder::new(endpoint(format!("{base}/text")), config.embedding_dim)),
            image_embedder: Arc::new(RemoteEmbedder::new(endpoint(format!("{base}/image")), config.embedding_dim)),
            text_reasoner: Arc::new(RemoteReasoner::new(endpoint(config.llm_url.clone()))),
            image_reasoner: Arc::new(RemoteReasoner::new(endpoint(config.vlm_url.clone()))),
            limits,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    /// Scripted transport recording attempts and peak concurrency.
    struct Fake {
        replies: Mutex<Vec<Result<Value, TransportError>>>,
        calls: AtomicUsize,
        active: AtomicUsize,
        peak: AtomicUsize,
        auth: Mutex<Vec<Option<String>>>,
        delay: Duration,
    }

    impl Fake {
        fn new(replies: Vec<Result<Value, TransportError>>) -> Self {
            Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
                active: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                auth: Mutex::new(Vec::new()),
                delay: Duration::ZERO,
            }
        }
    }

    impl Transport for Fake {
        fn post_json(&self, _: &str, _: &Value, token: Option<&str>, _: Duration) -> Result<Value, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            self.auth.lock().unwrap().push(token.map(str::to_owned));
            std::thread::sleep(self.delay);
            self.active.fetch_sub(1, Ordering::SeqCst);
            let mut replies = self.replies.lock().unwrap();
            if replies.is_empty() {
                Ok(json!({"text": "ok", "embedding": [1.0, 0.0]}))
            } else {
                replies.remove(0)
            }
        }
    }

    fn endpoint(fake: Arc<Fake>, max_retries: u32, max_in_flight: usize) -> RemoteEndpoint {
        let limits = ProviderLimits { max_retries, timeout: Duration::from_millis(10), max_in_flight };
        RemoteEndpoint::new("http://fake", Some("tok".into()), limits, fake, Arc::new(InFlightLimiter::new(max_in_flight)))
    }

    #[test]
    fn timeouts_stop_after_max_retries() {
        let fake = Arc::new(Fake::new(vec![Err(TransportError::Timeout); 10]));
        let r = RemoteReasoner::new(endpoint(fake.clone(), 2, 1));
        assert_eq!(r.ask_text("hi"), Err(ProviderError::Timeout { attempts: 3 }));
        assert_eq!(fake.calls.load(Ordering::SeqCst), 3);
        assert!(fake.auth.lock().unwrap().iter().all(|t| t.as_deref() == Some("tok")));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let fake = Arc::new(Fake::new(vec![Err(TransportError::Status { status: 400, body: "bad".into() })]));
        let r = RemoteReasoner::new(endpoint(fake.clone(), 5, 1));
        assert!(matches!(r.ask_text("hi"), Err(ProviderError::Status { status: 400, .. })));
        assert_eq!(fake.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transient_failure_then_success() {
        let fake = Arc::new(Fake::new(vec![
            Err(TransportError::Network("reset".into())),
            Ok(json!({"text": "yes"})),
        ]));
        let r = RemoteReasoner::new(endpoint(fake.clone(), 1, 1));
        assert_eq!(r.ask_image("p", &["a", "b"]).unwrap(), "yes");
        assert_eq!(fake.calls.load(Ordering::SeqCst), 2);
        assert_eq!(r.ask_image("p", &["a", "b", "c"]), Err(ProviderError::TooManyImages(3)));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let fake = Arc::new(Fake::new(vec![Ok(json!({"embedding": [1.0, 2.0, 3.0]}))]));
        let e = RemoteEmbedder::new(endpoint(fake, 0, 1), Some(2));
        assert_eq!(e.embed_text("chair"), Err(ProviderError::DimMismatch { expected: 2, found: 3 }));

        let fake = Arc::new(Fake::new(vec![Ok(json!({"embedding": [1.0, 2.0]})), Ok(json!({"embedding": [1.0]}))]));
        let e = RemoteEmbedder::new(endpoint(fake, 0, 1), None);
        assert_eq!(e.embed_text("a").unwrap().dim(), 2);
        assert_eq!(e.embed_text("b"), Err(ProviderError::DimMismatch { expected: 2, found: 1 }));
    }

    #[test]
    fn in_flight_bound_holds_under_contention() {
        let mut fake = Fake::new(vec![]);
        fake.delay = Duration::from_millis(5);
        let fake = Arc::new(fake);
        let r = Arc::new(RemoteReasoner::new(endpoint(fake.clone(), 0, 3)));
        std::thread::scope(|s| {
            for _ in 0..12 {
                let r = r.clone();
                s.spawn(move || r.ask_text("x").unwrap());
            }
        });
        assert_eq!(fake.calls.load(Ordering::SeqCst), 12);
        assert!(fake.peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn config_requires_urls() {
        let env = |k: &str| match k {
            ENV_EMBED_URL => Some("http://e/".into()),
            ENV_LLM_URL => Some("http://l".into()),
            _ => None,
        };
        assert!(matches!(RemoteConfig::from_lookup(env), Err(ProviderError::NotConfigured(_))));
        let env = |k: &str| (k != ENV_API_TOKEN).then(|| format!("http://{k}"));
        let c = RemoteConfig::from_lookup(env).unwrap();
        assert_eq!(c.token, None);
    }
}
