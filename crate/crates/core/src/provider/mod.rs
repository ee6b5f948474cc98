//! Generation and judging providers.
//!
//! The loop only sees the traits here. Shipped implementations are
//! deterministic mocks, an HTTP client, and a transcript layer that records
//! any provider's traffic and replays it offline.

mod config;
pub mod http;
pub mod mock;
pub mod transcript;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use config::{
    HttpSettings, MockSettings, ProviderConfig, ProviderKind, ProviderSet, TranscriptMode, COT_GENERATOR, JUDGE,
    PROMPT_GENERATOR,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "error", content = "detail")]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("remote returned status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("no recorded response for request: {0}")]
    ReplayMiss(String),
    #[error("credentials missing: {0}")]
    Credentials(String),
}

/// Inputs of one prompt-generator call paired with the expert's rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub video_id: String,
    pub qa_id: String,
    pub description: String,
    pub question: String,
    pub answer: String,
    pub refined_cot: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateAck {
    pub accepted: usize,
}

/// Summarizes a sample into the prompt handed to the rationale generator.
pub trait PromptGenerator: Send + Sync {
    fn summarize(&self, description: &str, question: &str, answer: &str) -> Result<String, ProviderError>;

    /// Learns from expert-refined rationales.
    fn update(&mut self, pairs: &[TrainingPair]) -> Result<UpdateAck, ProviderError>;
}

pub trait CotGenerator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Decides whether a model output answers the question correctly.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, gold_answer: &str, output: &str) -> Result<bool, ProviderError>;
}

impl<T: PromptGenerator + ?Sized> PromptGenerator for Box<T> {
    fn summarize(&self, d: &str, q: &str, a: &str) -> Result<String, ProviderError> {
        (**self).summarize(d, q, a)
    }
    fn update(&mut self, pairs: &[TrainingPair]) -> Result<UpdateAck, ProviderError> {
        (**self).update(pairs)
    }
}

impl<T: CotGenerator + ?Sized> CotGenerator for Box<T> {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).generate(prompt)
    }
}

impl<T: Judge + ?Sized> Judge for Box<T> {
    fn judge(&self, q: &str, g: &str, o: &str) -> Result<bool, ProviderError> {
        (**self).judge(q, g, o)
    }
}

/// Retry with exponential backoff: delays are `base, 2*base, 4*base, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempted<T> {
    pub result: Result<T, ProviderError>,
    pub retries: u32,
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, base_delay_ms: 0 }
    }

    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Attempted<T> {
        let mut retries = 0;
        loop {
            match call() {
                Ok(v) => return Attempted { result: Ok(v), retries },
                Err(e) if retries >= self.max_retries => return Attempted { result: Err(e), retries },
                Err(e) => {
                    tracing::debug!(error = %e, retries, "provider call failed, retrying");
                    if self.base_delay_ms > 0 {
                        let factor = 1u64.checked_shl(retries).unwrap_or(u64::MAX);
                        thread::sleep(Duration::from_millis(self.base_delay_ms.saturating_mul(factor)));
                    }
                    retries += 1;
                }
            }
        }
    }
}

/// Deterministic 64-bit FNV-1a, used to derive per-request seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}
