//! Chat-completion backends: a live OpenAI-compatible client and a scripted
//! mock. Both report per-call token counts so costs can be summed exactly.

mod http;
mod mock;

use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::protocol::{ImageRef, Role};

pub use http::{HttpBackend, LiveConfig};
pub use mock::{ScriptEntry, ScriptFile, ScriptedBackend};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transport,
    Auth,
    Quota,
    Timeout,
    /// The endpoint answered, but not with a usable completion.
    BadResponse,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Transport => "transport",
            FailureKind::Auth => "auth",
            FailureKind::Quota => "quota",
            FailureKind::Timeout => "timeout",
            FailureKind::BadResponse => "bad response",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{kind} failure after {attempts} attempt(s): {detail}")]
    Failure {
        kind: FailureKind,
        attempts: u32,
        detail: String,
    },
    #[error("script exhausted: no reply #{occurrence} for role {role} (record {record:?})")]
    ScriptExhausted {
        role: Role,
        occurrence: usize,
        record: Option<String>,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub role: Role,
    pub prompt: String,
    pub image_ref: Option<ImageRef>,
    pub max_output_tokens: u32,
    pub temperature: f64,
    /// Dataset record this call belongs to; lets the mock script several
    /// questions in one file. Ignored by live backends.
    pub record_id: Option<String>,
}

impl BackendRequest {
    pub fn new(role: Role, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            image_ref: None,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            record_id: None,
        }
    }

    pub fn with_image(mut self, image: Option<ImageRef>) -> Self {
        self.image_ref = image;
        self
    }

    pub fn with_record(mut self, record_id: Option<String>) -> Self {
        self.record_id = record_id;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    /// True when the counts came from [`count_tokens_fallback`].
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_total: u64,
    pub output_total: u64,
    pub calls: u64,
    /// Set once any contributing count was approximate.
    pub approximate: bool,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input_total + self.output_total
    }

    pub fn record(&mut self, response: &BackendResponse) {
        self.input_total += response.input_tokens;
        self.output_total += response.output_tokens;
        self.calls += 1;
        self.approximate |= response.approximate;
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_total += rhs.input_total;
        self.output_total += rhs.output_total;
        self.calls += rhs.calls;
        self.approximate |= rhs.approximate;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = TokenUsage::default();
        for u in iter {
            acc += u;
        }
        acc
    }
}

/// A chat endpoint. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Approximate token count when the endpoint reports none: one token per
/// four characters, rounded up.
pub fn count_tokens_fallback(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
