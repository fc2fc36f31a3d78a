//! Prompt rendering, provider invocation with retries, and response
//! filtering.

pub mod filter;
pub mod template;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genes::GenePartition;
use crate::providers::{CompletionRequest, GenerationProvider, ProviderError, RequestContext};
use crate::selection::ParentPair;

pub use filter::{default_refusal_patterns, filter_response, split_summary, DEFAULT_REFUSAL_PATTERNS};
pub use template::{
    render_genetic_prompt, render_simprompt, BoundTemplate, PromptTemplate, TemplateError,
};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
}

/// Sampling settings sent with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn one() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    512
}

impl GenerationSettings {
    pub fn new(model: impl Into<String>) -> Self {
        GenerationSettings {
            model: model.into(),
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: default_max_tokens(),
        }
    }
}

/// Exponential backoff for transient provider failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for tests and mocks.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Sends `prompt` and returns the first completion verbatim. Transient
/// failures are retried per `retry`; anything else fails immediately.
pub fn generate(
    prompt: &str,
    settings: &GenerationSettings,
    provider: &dyn GenerationProvider,
    context: &RequestContext,
    retry: &RetryPolicy,
) -> Result<String, GenerationError> {
    if prompt.trim().is_empty() {
        return Err(GenerationError::EmptyPrompt);
    }
    let request = CompletionRequest {
        prompt,
        settings,
        context,
    };
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match provider.complete(&request) {
            Ok(text) if text.trim().is_empty() => return Err(GenerationError::EmptyCompletion),
            Ok(text) => return Ok(text),
            Err(e) if e.is_transient() && attempt <= retry.max_retries => {
                let delay = retry.delay_for(attempt - 1);
                log::debug!(
                    "transient failure on {}#{} (attempt {attempt}): {e}; retrying in {delay:?}",
                    context.stream,
                    context.index
                );
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            Err(source) => {
                return Err(GenerationError::Provider {
                    attempts: attempt,
                    source,
                })
            }
        }
    }
}

/// A generated child that passed filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct Offspring {
    pub text: String,
    pub raw_response: String,
    pub parent_pair: ParentPair,
    pub partition: GenePartition,
}
