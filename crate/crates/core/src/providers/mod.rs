//! Model capabilities used by the builder and the retrieval pipeline.
//!
//! Each capability is a trait object so the remote clients and the offline
//! oracles are interchangeable. All implementations must be callable from many
//! threads at once.

pub mod offline;
pub mod remote;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::model::Embedding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed service reply: {0}")]
    BadReply(String),
    #[error("embedding has dimension {found}, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("at most 2 images per request, got {0}")]
    TooManyImages(usize),
    #[error("unknown image reference `{0}`")]
    UnknownImage(String),
    #[error("provider not configured: {0}")]
    NotConfigured(String),
}

pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
}

pub trait ImageEmbedder: Send + Sync {
    fn embed_image(&self, image_ref: &str) -> Result<Embedding, ProviderError>;
}

pub trait TextReasoner: Send + Sync {
    fn ask_text(&self, prompt: &str) -> Result<String, ProviderError>;
}

pub trait ImageReasoner: Send + Sync {
    fn ask_image(&self, prompt: &str, image_refs: &[&str]) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProviderLimits {
    pub max_retries: u32,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for ProviderLimits {
    fn default() -> Self {
        Self { max_retries: 2, timeout: Duration::from_secs(30), max_in_flight: 8 }
    }
}

#[derive(Clone)]
pub struct ProviderSuite {
    pub text_embedder: Arc<dyn TextEmbedder>,
    pub image_embedder: Arc<dyn ImageEmbedder>,
    pub text_reasoner: Arc<dyn TextReasoner>,
    pub image_reasoner: Arc<dyn ImageReasoner>,
    pub limits: ProviderLimits,
}

impl std::fmt::Debug for ProviderSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSuite").field("limits", &self.limits).finish_non_exhaustive()
    }
}

pub(crate) fn check_prompt(prompt: &str, image_refs: &[&str]) -> Result<(), ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    if image_refs.len() > 2 {
        return Err(ProviderError::TooManyImages(image_refs.len()));
    }
    Ok(())
}

/// Counts reasoner calls made through it.
pub struct Counted<'a, T: ?Sized> {
    inner: &'a T,
    calls: &'a std::sync::atomic::AtomicU32,
}

impl<'a, T: ?Sized> Counted<'a, T> {
    pub fn new(inner: &'a T, calls: &'a std::sync::atomic::AtomicU32) -> Self {
        Self { inner, calls }
    }

    fn tick(&self) {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    }
}

impl TextReasoner for Counted<'_, dyn TextReasoner> {
    fn ask_text(&self, prompt: &str) -> Result<String, ProviderError> {
        self.tick();
        self.inner.ask_text(prompt)
    }
}

impl ImageReasoner for Counted<'_, dyn ImageReasoner> {
    fn ask_image(&self, prompt: &str, image_refs: &[&str]) -> Result<String, ProviderError> {
        self.tick();
        self.inner.ask_image(prompt, image_refs)
    }
}
