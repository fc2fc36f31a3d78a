//! TOML run configuration.
//!
//! Relative paths (template files, mock scripts, gold data) resolve against
//! the directory holding the config file. Secrets never live here: HTTP
//! providers read their bearer token from `GENETIC_PROMPT_API_KEY`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use genetic_prompt_core::generation::default_refusal_patterns;
use genetic_prompt_core::providers::{
    ChatCompletionsProvider, EmbeddingsHttpProvider, HttpEndpoint, API_KEY_ENV, DEFAULT_CHAT_PATH,
    DEFAULT_EMBEDDINGS_PATH,
};
use genetic_prompt_core::{
    BoundTemplate, DatasetMetadata, EmbeddingProvider, GeneSet, GenerationProvider, GenerationSettings, Label,
    LabelSet, MockEmbeddingProvider, MockGenerationProvider, PromptTemplate, RetryPolicy, RunConfig, Strategy,
    TaskKind,
};
use serde::Deserialize;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} problem(s) in {}:\n{}", .diagnostics.len(), .path.display(), .diagnostics.join("\n"))]
    Invalid { path: PathBuf, diagnostics: Vec<String> },
    #[error("{API_KEY_ENV} is not set; the {role} provider at {url} needs it")]
    MissingApiKey { role: &'static str, url: String },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub schema_version: u32,
    #[serde(default = "default_refusal_patterns")]
    pub refusal_patterns: Vec<String>,
    pub dataset: DatasetSection,
    pub run: RunConfig,
    pub providers: ProvidersSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    pub domain: String,
    pub task_kind: TaskKind,
    pub task_description: String,
    /// Name of a bundled template.
    #[serde(default)]
    pub template: Option<String>,
    /// Template file; its task kind is `task_kind`.
    #[serde(default)]
    pub template_path: Option<PathBuf>,
    #[serde(default)]
    pub genes: Vec<String>,
    /// Default for `--gold`.
    #[serde(default)]
    pub gold: Option<PathBuf>,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersSection {
    pub generation: GenerationSection,
    pub embedding: EmbeddingSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub base_url: String,
    #[serde(default)]
    pub path: Option<String>,
    pub model: String,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub base_url: String,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_max_tokens() -> u32 {
    512
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    60
}

/// Where a provider lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Mock(PathBuf),
    Http { base_url: String, path: String },
}

impl Endpoint {
    fn parse(base_url: &str, path: Option<&str>, default_path: &str, base_dir: &Path) -> Result<Self, String> {
        if let Some(script) = base_url.strip_prefix("mock:") {
            if script.is_empty() {
                return Err("mock: needs a script path".into());
            }
            return Ok(Endpoint::Mock(base_dir.join(script)));
        }
        let rest = base_url
            .strip_prefix("https://")
            .or_else(|| base_url.strip_prefix("http://"))
            .ok_or_else(|| format!("{base_url:?} is neither an http(s) URL nor mock:<script-path>"))?;
        let host = rest.split(['/', '?', '#']).next().unwrap_or("");
        if host.is_empty() || host.chars().any(char::is_whitespace) {
            return Err(format!("{base_url:?} has no host"));
        }
        Ok(Endpoint::Http {
            base_url: base_url.to_string(),
            path: path.unwrap_or(default_path).to_string(),
        })
    }

    pub fn describe(&self) -> String {
        match self {
            Endpoint::Mock(p) => format!("mock:{}", p.display()),
            Endpoint::Http { base_url, path } => format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/')),
        }
    }
}

/// A config that passed validation, with every path resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub metadata: DatasetMetadata,
    pub label_set: LabelSet,
    pub template: Option<BoundTemplate>,
    pub run: RunConfig,
    pub settings: GenerationSettings,
    pub retry: RetryPolicy,
    pub refusal_patterns: Vec<String>,
    pub generation: Endpoint,
    pub generation_timeout: Duration,
    pub embedding: Endpoint,
    pub embedding_model: String,
    pub embedding_timeout: Duration,
    pub normalize_embeddings: bool,
    pub gold: Option<PathBuf>,
}

/// Reads and parses a config file. Parse errors come back as a single
/// diagnostic.
pub fn load(path: &Path) -> Result<AppConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&raw).map_err(|e| ConfigError::Invalid {
        path: path.to_path_buf(),
        diagnostics: vec![format!("parse error: {}", e.message())],
    })
}

pub fn base_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn load_template(dataset: &DatasetSection, base_dir: &Path, diags: &mut Vec<String>) -> Option<PromptTemplate> {
    match (&dataset.template, &dataset.template_path) {
        (Some(_), Some(_)) => {
            diags.push("dataset: set either template or template_path, not both".into());
            None
        }
        (None, None) => None,
        (Some(name), None) => match PromptTemplate::builtin(name) {
            Ok(t) if t.task_kind != dataset.task_kind => {
                diags.push(format!(
                    "dataset.template: bundled template {name:?} is for {:?} tasks but task_kind is {:?}",
                    t.task_kind, dataset.task_kind
                ));
                None
            }
            Ok(t) => Some(t),
            Err(e) => {
                let known: Vec<&str> = PromptTemplate::builtin_names().collect();
                diags.push(format!("dataset.template: {e} (bundled: {})", known.join(", ")));
                None
            }
        },
        (None, Some(rel)) => {
            let path = base_dir.join(rel);
            match std::fs::read_to_string(&path) {
                Ok(body) => {
                    let body = body.strip_suffix('\n').unwrap_or(&body).to_string();
                    Some(PromptTemplate::new(dataset.name.clone(), dataset.task_kind, body))
                }
                Err(e) => {
                    diags.push(format!("dataset.template_path: cannot read {}: {e}", path.display()));
                    None
                }
            }
        }
    }
}

fn check_exists(field: &str, path: &Path, diags: &mut Vec<String>) {
    if !path.is_file() {
        diags.push(format!("{field}: {} does not exist", path.display()));
    }
}

/// Checks everything that can be checked without the network and returns
/// the resolved config, or one diagnostic per violation.
pub fn resolve(config: &AppConfig, base_dir: &Path) -> Result<Resolved, Vec<String>> {
    let mut diags = Vec::new();
    if config.schema_version != SCHEMA_VERSION {
        diags.push(format!(
            "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
            config.schema_version
        ));
    }
    let dataset = &config.dataset;
    let label_set = LabelSet::new(dataset.labels.clone(), dataset.task_kind)
        .map_err(|e| diags.push(format!("dataset.labels: {e}")))
        .ok();

    let genes = if dataset.genes.is_empty() {
        None
    } else {
        GeneSet::from_names(&dataset.genes)
            .map_err(|e| diags.push(format!("dataset.genes: {e}")))
            .ok()
    };
    let run = &config.run;
    if let Err(e) = run.validate() {
        diags.push(format!("run: {e}"));
    }
    if let Some(genes) = &genes {
        if run.mutate_count > 0 && genes.len() < run.mutate_count + 2 {
            diags.push(format!(
                "run.mutate_count: {} genes with mutate_count {} breaks the partition rule |genes| - mutate_count >= 2 \
                 (each parent must contribute at least one gene)",
                genes.len(),
                run.mutate_count
            ));
        }
    }

    let template = load_template(dataset, base_dir, &mut diags);
    let mut bound = None;
    match (&template, &genes) {
        (Some(t), Some(g)) => {
            let problems = t.diagnose(g);
            for p in &problems {
                diags.push(format!("template {}: {p}", t.name));
            }
            if problems.is_empty() {
                bound = t.clone().bind(g.clone()).ok();
            }
        }
        (Some(_), None) => diags.push("dataset.genes: a template needs a non-empty gene list".into()),
        (None, _) if run.strategy == Strategy::Genetic => {
            diags.push("dataset: the genetic strategy needs template or template_path".into())
        }
        _ => {}
    }

    let gen = &config.providers.generation;
    let generation = Endpoint::parse(&gen.base_url, gen.path.as_deref(), DEFAULT_CHAT_PATH, base_dir)
        .map_err(|e| diags.push(format!("providers.generation.base_url: {e}")))
        .ok();
    if gen.model.trim().is_empty() {
        diags.push("providers.generation.model: must not be empty".into());
    }
    for (field, v) in [("temperature", gen.temperature), ("top_p", gen.top_p)] {
        if !v.is_finite() || v < 0.0 {
            diags.push(format!("providers.generation.{field}: must be a non-negative number"));
        }
    }
    let emb = &config.providers.embedding;
    let embedding = Endpoint::parse(&emb.base_url, emb.path.as_deref(), DEFAULT_EMBEDDINGS_PATH, base_dir)
        .map_err(|e| diags.push(format!("providers.embedding.base_url: {e}")))
        .ok();
    if matches!(embedding, Some(Endpoint::Http { .. })) && emb.model.as_deref().is_none_or(|m| m.trim().is_empty()) {
        diags.push("providers.embedding.model: required for an HTTP provider".into());
    }
    for (field, endpoint) in [("generation", &generation), ("embedding", &embedding)] {
        if let Some(Endpoint::Mock(script)) = endpoint {
            check_exists(&format!("providers.{field}.base_url"), script, &mut diags);
        }
    }

    let gold = dataset.gold.as_ref().map(|g| base_dir.join(g));
    if let Some(g) = &gold {
        check_exists("dataset.gold", g, &mut diags);
    }

    if !diags.is_empty() {
        return Err(diags);
    }
    let (Some(label_set), Some(generation), Some(embedding)) = (label_set, generation, embedding) else {
        unreachable!("missing pieces are diagnosed above");
    };
    Ok(Resolved {
        metadata: DatasetMetadata {
            name: dataset.name.clone(),
            domain: dataset.domain.clone(),
            task_description: dataset.task_description.clone(),
        },
        label_set,
        template: bound,
        run: run.clone(),
        settings: GenerationSettings {
            model: gen.model.clone(),
            temperature: gen.temperature,
            top_p: gen.top_p,
            max_tokens: gen.max_tokens,
        },
        retry: RetryPolicy {
            max_retries: gen.max_retries,
            ..RetryPolicy::default()
        },
        refusal_patterns: config.refusal_patterns.clone(),
        generation,
        generation_timeout: Duration::from_secs(gen.timeout_secs),
        embedding,
        embedding_model: emb.model.clone().unwrap_or_default(),
        embedding_timeout: Duration::from_secs(emb.timeout_secs),
        normalize_embeddings: emb.normalize,
        gold,
    })
}

/// Loads and validates in one step.
pub fn load_resolved(path: &Path) -> Result<Resolved, ConfigError> {
    let config = load(path)?;
    resolve(&config, &base_dir(path)).map_err(|diagnostics| ConfigError::Invalid {
        path: path.to_path_buf(),
        diagnostics,
    })
}

fn api_key(role: &'static str, url: String) -> Result<String, ConfigError> {
    match std::env::var(API_KEY_ENV) {
        Ok(key) if !key.trim().is_empty() => Ok(key),
        _ => Err(ConfigError::MissingApiKey { role, url }),
    }
}

impl Resolved {
    /// Fails before any request when an HTTP provider has no API key.
    pub fn generation_provider(&self) -> anyhow::Result<Box<dyn GenerationProvider>> {
        Ok(match &self.generation {
            Endpoint::Mock(script) => Box::new(MockGenerationProvider::from_path(script)?),
            Endpoint::Http { base_url, path } => {
                let key = api_key("generation", self.generation.describe())?;
                Box::new(ChatCompletionsProvider::new(HttpEndpoint {
                    base_url: base_url.clone(),
                    path: path.clone(),
                    api_key: Some(key),
                    timeout: self.generation_timeout,
                }))
            }
        })
    }

    pub fn embedding_provider(&self) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
        Ok(match &self.embedding {
            Endpoint::Mock(script) => Box::new(MockEmbeddingProvider::from_path(script)?),
            Endpoint::Http { base_url, path } => {
                let key = api_key("embedding", self.embedding.describe())?;
                Box::new(EmbeddingsHttpProvider::new(
                    HttpEndpoint {
                        base_url: base_url.clone(),
                        path: path.clone(),
                        api_key: Some(key),
                        timeout: self.embedding_timeout,
                    },
                    self.embedding_model.clone(),
                ))
            }
        })
    }
}
