//! Text-generation and embedding providers.
//!
//! Two transports back each trait: an OpenAI-compatible HTTP client and an
//! offline mock. The mock generation provider answers from a script that
//! maps `(stream, request index)` to a completion; the caller supplies the
//! index, so a resumed run replays the same script positions as an
//! uninterrupted one.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generation::GenerationSettings;

/// Environment variable holding the bearer token for both providers.
pub const API_KEY_ENV: &str = "GENETIC_PROMPT_API_KEY";
pub const DEFAULT_CHAT_PATH: &str = "/v1/chat/completions";
pub const DEFAULT_EMBEDDINGS_PATH: &str = "/v1/embeddings";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    /// Worth retrying: transport failures, 429 and 5xx responses.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

/// Identifies a request within a run. HTTP providers ignore it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestContext {
    pub stream: String,
    pub index: u64,
}

impl RequestContext {
    pub fn new(stream: impl Into<String>, index: u64) -> Self {
        RequestContext {
            stream: stream.into(),
            index,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub settings: &'a GenerationSettings,
    pub context: &'a RequestContext,
}

pub trait GenerationProvider: Send + Sync {
    /// Returns the text of the first completion choice.
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

impl<T: GenerationProvider + ?Sized> GenerationProvider for &T {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for &T {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed_batch(texts)
    }
}

/// Embedding provider backed by a plain function of the text.
pub struct FnEmbedder<F>(pub F);

impl<F> EmbeddingProvider for FnEmbedder<F>
where
    F: Fn(&str) -> Vec<f64> + Send + Sync,
{
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| (self.0)(t)).collect())
    }
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub path: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpEndpoint {
    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn post_json<B: Serialize>(
        &self,
        agent: &ureq::Agent,
        body: &B,
    ) -> Result<serde_json::Value, ProviderError> {
        let mut request = agent.post(self.url());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(classify_transport)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(classify_transport)?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| ProviderError::Malformed(format!("invalid JSON body: {e}"))),
            429 | 500..=599 => Err(ProviderError::Transient(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            ))),
            _ => Err(ProviderError::Fatal(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            ))),
        }
    }
}

fn truncate(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

fn classify_transport(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::BadUri(_) | ureq::Error::InvalidProxyUrl => {
            ProviderError::Fatal(err.to_string())
        }
        other => ProviderError::Transient(other.to_string()),
    }
}

/// OpenAI-compatible `/v1/chat/completions` client.
pub struct ChatCompletionsProvider {
    endpoint: HttpEndpoint,
    agent: ureq::Agent,
}

impl ChatCompletionsProvider {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        let agent = endpoint.agent();
        ChatCompletionsProvider { endpoint, agent }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

pub(crate) fn chat_request_body(prompt: &str, settings: &GenerationSettings) -> serde_json::Value {
    serde_json::to_value(ChatRequestBody {
        model: &settings.model,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: settings.temperature,
        top_p: settings.top_p,
        max_tokens: settings.max_tokens,
    })
    .expect("request body serializes")
}

pub(crate) fn parse_chat_response(body: &serde_json::Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
}

impl GenerationProvider for ChatCompletionsProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let body = chat_request_body(request.prompt, request.settings);
        let response = self.endpoint.post_json(&self.agent, &body)?;
        parse_chat_response(&response)
    }
}

/// OpenAI-compatible `/v1/embeddings` client.
pub struct EmbeddingsHttpProvider {
    endpoint: HttpEndpoint,
    model: String,
    agent: ureq::Agent,
}

impl EmbeddingsHttpProvider {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        let agent = endpoint.agent();
        EmbeddingsHttpProvider {
            endpoint,
            model: model.into(),
            agent,
        }
    }
}

/// Accepts either `{"data": [{"index": i, "embedding": [...]}, ...]}` or
/// `{"embeddings": [[...], ...]}`.
pub(crate) fn parse_embedding_response(
    body: &serde_json::Value,
    expected: usize,
) -> Result<Vec<Vec<f64>>, ProviderError> {
    fn as_vector(v: &serde_json::Value) -> Result<Vec<f64>, ProviderError> {
        v.as_array()
            .ok_or_else(|| ProviderError::Malformed("embedding is not an array".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| ProviderError::Malformed("non-numeric embedding component".into()))
            })
            .collect()
    }

    let vectors = if let Some(data) = body.get("data").and_then(|d| d.as_array()) {
        let mut indexed = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(|i| i.as_u64())
                .map(|i| i as usize)
                .unwrap_or(pos);
            let embedding = item
                .get("embedding")
                .ok_or_else(|| ProviderError::Malformed("data item without embedding".into()))?;
            indexed.push((index, as_vector(embedding)?));
        }
        indexed.sort_by_key(|(i, _)| *i);
        indexed.into_iter().map(|(_, v)| v).collect::<Vec<_>>()
    } else if let Some(list) = body.get("embeddings").and_then(|d| d.as_array()) {
        list.iter().map(as_vector).collect::<Result<Vec<_>, _>>()?
    } else {
        return Err(ProviderError::Malformed(
            "response has neither `data` nor `embeddings`".into(),
        ));
    };
    if vectors.len() != expected {
        return Err(ProviderError::Malformed(format!(
            "expected {expected} embeddings, got {}",
            vectors.len()
        )));
    }
    Ok(vectors)
}

impl EmbeddingProvider for EmbeddingsHttpProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let response = self.endpoint.post_json(&self.agent, &body)?;
        parse_embedding_response(&response, texts.len())
    }
}

// ---------------------------------------------------------------------------
// Mocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text(String),
    Scripted {
        #[serde(default)]
        text: Option<String>,
        /// Number of transient failures served before `text`.
        #[serde(default)]
        transient_failures: u32,
        /// Served instead of any text when present.
        #[serde(default)]
        fatal: Option<String>,
    },
}

/// Script for [`MockGenerationProvider`].
///
/// `completions` applies to every stream without an entry in `streams`.
/// Requests past the end of a list use `fallback`, in which `{stream}` and
/// `{index}` are substituted; without a fallback they fail.
#[derive(Debug, Clone, Default, Deserialize, Serialize, PartialEq)]
pub struct MockScript {
    #[serde(default)]
    pub completions: Vec<ScriptEntry>,
    #[serde(default)]
    pub streams: HashMap<String, Vec<ScriptEntry>>,
    #[serde(default)]
    pub fallback: Option<String>,
}

pub struct MockGenerationProvider {
    script: MockScript,
    served_failures: Mutex<HashMap<RequestContext, u32>>,
    log: Mutex<Vec<(RequestContext, String)>>,
}

impl MockGenerationProvider {
    pub fn new(script: MockScript) -> Self {
        MockGenerationProvider {
            script,
            served_failures: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Fatal(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&body)
            .map_err(|e| ProviderError::Fatal(format!("invalid mock script {}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    /// Every request seen so far, with its prompt.
    pub fn requests(&self) -> Vec<(RequestContext, String)> {
        self.log.lock().expect("mock log poisoned").clone()
    }
}

impl GenerationProvider for MockGenerationProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let ctx = request.context;
        self.log
            .lock()
            .expect("mock log poisoned")
            .push((ctx.clone(), request.prompt.to_owned()));
        let entries = self
            .script
            .streams
            .get(&ctx.stream)
            .unwrap_or(&self.script.completions);
        match entries.get(ctx.index as usize) {
            Some(ScriptEntry::Text(text)) => Ok(text.clone()),
            Some(ScriptEntry::Scripted {
                text,
                transient_failures,
                fatal,
            }) => {
                if let Some(message) = fatal {
                    return Err(ProviderError::Fatal(message.clone()));
                }
                let mut served = self.served_failures.lock().expect("mock state poisoned");
                let count = served.entry(ctx.clone()).or_insert(0);
                if *count < *transient_failures {
                    *count += 1;
                    return Err(ProviderError::Transient(format!(
                        "scripted transient failure {} at {}#{}",
                        count, ctx.stream, ctx.index
                    )));
                }
                Ok(text.clone().unwrap_or_default())
            }
            None => match &self.script.fallback {
                Some(template) => Ok(template
                    .replace("{stream}", &ctx.stream)
                    .replace("{index}", &ctx.index.to_string())),
                None => Err(ProviderError::Fatal(format!(
                    "mock script exhausted at {}#{}",
                    ctx.stream, ctx.index
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
pub struct MockEmbeddingScript {
    pub dim: usize,
    /// Fixed vectors for exact texts; other texts are feature-hashed.
    #[serde(default)]
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Deterministic offline embedder: fixed vectors where scripted, otherwise
/// the sum of pseudo-random per-token vectors (feature hashing), so texts
/// sharing words land near each other.
pub struct MockEmbeddingProvider {
    script: MockEmbeddingScript,
}

impl MockEmbeddingProvider {
    pub fn new(script: MockEmbeddingScript) -> Self {
        MockEmbeddingProvider { script }
    }

    pub fn hashing(dim: usize) -> Self {
        Self::new(MockEmbeddingScript {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Fatal(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: MockEmbeddingScript = serde_json::from_str(&body)
            .map_err(|e| ProviderError::Fatal(format!("invalid mock script {}: {e}", path.display())))?;
        if script.dim == 0 {
            return Err(ProviderError::Fatal("mock embedding dim must be positive".into()));
        }
        Ok(Self::new(script))
    }

    fn hashed(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.script.dim];
        let mut tokens = 0usize;
        for token in text.split_whitespace() {
            let token = token
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if token.is_empty() {
                continue;
            }
            tokens += 1;
            let digest = Sha256::digest(token.as_bytes());
            let mut seed = [0u8; 32];
            seed.copy_from_slice(&digest);
            let mut rng = ChaCha8Rng::from_seed(seed);
            for slot in acc.iter_mut() {
                *slot += rng.random_range(-1.0..1.0);
            }
        }
        if tokens == 0 {
            // Symbol-only text still gets a non-zero, text-specific vector.
            let digest = Sha256::digest(text.as_bytes());
            let mut seed = [0u8; 32];
            seed.copy_from_slice(&digest);
            let mut rng = ChaCha8Rng::from_seed(seed);
            for slot in acc.iter_mut() {
                *slot = rng.random_range(-1.0..1.0);
            }
        }
        acc
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| {
                self.script
                    .vectors
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| self.hashed(t))
            })
            .collect())
    }
}
