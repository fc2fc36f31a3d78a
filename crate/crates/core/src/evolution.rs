//! Per-label evolution loop, run orchestration, and checkpoint/resume.
//!
//! Randomness is stateless: every draw is seeded from the run seed, the
//! label's position and the label's attempt counter, and the mock provider
//! is keyed by the same counter. A run resumed from a checkpoint therefore
//! replays exactly the requests the uninterrupted run would have made.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Label, LabelSet, Origin, Sample, TaskKind};
use crate::genes::{partition, GeneError, PartitionStrategy};
use crate::generation::filter::{filter_response, join_summary, split_summary};
use crate::generation::{
    generate, render_genetic_prompt, render_simprompt, BoundTemplate, GenerationError,
    GenerationSettings, RetryPolicy, TemplateError,
};
use crate::metrics::{aps, EmbeddedCorpus};
use crate::providers::{EmbeddingProvider, GenerationProvider, RequestContext};
use crate::selection::{embed, ParentPair, Pool, PoolSnapshot, SelectionError};

const CHECKPOINT_RECORD: &str = "run_state";
const CHECKPOINT_VERSION: u32 = 1;

// Domain tags mixed into per-attempt seeds.
const SEED_POOL: u64 = 1;
const SEED_PARTITION: u64 = 2;
const SEED_EXAMPLES: u64 = 3;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("label {label:?} has {found} gold sample(s); at least 2 are needed")]
    InsufficientGold { label: String, found: usize },
    #[error("label {label:?}: {rejections} rejected completions with {accepted} accepted; rejection budget exhausted")]
    RejectionBudgetExceeded {
        label: String,
        rejections: usize,
        accepted: usize,
    },
    #[error("label {label:?}: {source}")]
    Selection {
        label: String,
        #[source]
        source: SelectionError,
    },
    #[error("label {label:?}: {source}")]
    Generation {
        label: String,
        #[source]
        source: GenerationError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gene(#[from] GeneError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("checkpoint does not match the current configuration (differs in: {0})")]
    ConfigMismatch(String),
    #[error("checkpoint is corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("run halted after {accepted} accepted sample(s)")]
    Halted { accepted: usize },
    #[error("run stopped because another label failed")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Genetic,
    #[serde(rename = "simprompt")]
    SimPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target_per_label: usize,
    #[serde(default = "default_init")]
    pub init_per_label: usize,
    #[serde(default)]
    pub partition_strategy: PartitionStrategy,
    #[serde(default = "default_mutate")]
    pub mutate_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_budget")]
    pub rejection_budget_factor: usize,
    /// Accepted for compatibility; the loop does not read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Prefix of generated sample ids.
    #[serde(default = "default_run_id")]
    pub run_id: String,
}

fn default_init() -> usize {
    50
}

fn default_mutate() -> usize {
    1
}

fn default_budget() -> usize {
    5
}

fn default_run_id() -> String {
    "syn".into()
}

impl RunConfig {
    pub fn new(target_per_label: usize) -> Self {
        RunConfig {
            target_per_label,
            init_per_label: default_init(),
            partition_strategy: PartitionStrategy::default(),
            mutate_count: default_mutate(),
            seed: 0,
            strategy: Strategy::default(),
            rejection_budget_factor: default_budget(),
            alpha: None,
            run_id: default_run_id(),
        }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let fail = |m: &str| Err(EvolutionError::InvalidConfig(m.to_string()));
        if self.target_per_label == 0 {
            return fail("target_per_label must be at least 1");
        }
        if self.init_per_label < 2 {
            return fail("init_per_label must be at least 2");
        }
        if self.mutate_count == 0 {
            return fail("mutate_count must be at least 1");
        }
        if self.rejection_budget_factor == 0 {
            return fail("rejection_budget_factor must be at least 1");
        }
        if self.run_id.is_empty() || self.run_id.chars().any(char::is_whitespace) {
            return fail("run_id must be non-empty and contain no whitespace");
        }
        if self.alpha.is_some_and(|a| !a.is_finite()) {
            return fail("alpha must be finite");
        }
        Ok(())
    }

    pub fn rejection_budget(&self) -> usize {
        self.rejection_budget_factor.saturating_mul(self.target_per_label)
    }
}

/// Everything a run reads besides the gold data.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub config: &'a RunConfig,
    pub label_set: &'a LabelSet,
    /// Required for the genetic strategy.
    pub template: Option<&'a BoundTemplate>,
    pub settings: &'a GenerationSettings,
    pub retry: &'a RetryPolicy,
    pub refusal_patterns: &'a [String],
    pub normalize_embeddings: bool,
    pub generation: &'a dyn GenerationProvider,
    pub embedding: &'a dyn EmbeddingProvider,
}

/// Per-label counters persisted in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelProgress {
    pub label: String,
    pub produced: usize,
    /// Completion requests issued, accepted or not.
    pub attempts: u64,
    pub rejections: usize,
    pub initial_ids: Vec<String>,
    pub used_pairs: Vec<(String, String)>,
}

impl LabelProgress {
    fn new(label: &str, pool: &Pool) -> Self {
        LabelProgress {
            label: label.to_string(),
            produced: 0,
            attempts: 0,
            rejections: 0,
            initial_ids: pool.initial_ids().map(str::to_owned).collect(),
            used_pairs: Vec::new(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one draw, derived from the run seed and a coordinate tuple.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

fn label_slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn offspring_id(run_id: &str, label: &str, generation_index: usize) -> String {
    format!("{run_id}-{}-{generation_index:05}", label_slug(label))
}

/// Per-label gold pools of min(init_per_label, available) members, drawn
/// without replacement and kept in gold-file order.
pub fn seed_pools(gold: &[Sample], ctx: &RunContext<'_>) -> Result<Vec<Pool>, EvolutionError> {
    let config = ctx.config;
    let buckets = corpus::stratify_by_label(gold, ctx.label_set);
    let mut pools = Vec::with_capacity(ctx.label_set.len());
    for (label_index, label) in ctx.label_set.labels().iter().enumerate() {
        let available: Vec<&Sample> = buckets
            .iter()
            .find(|(name, _)| *name == label.name)
            .map(|(_, s)| s.clone())
            .unwrap_or_default();
        if available.len() < 2 {
            return Err(EvolutionError::InsufficientGold {
                label: label.name.clone(),
                found: available.len(),
            });
        }
        let take = config.init_per_label.min(available.len());
        if take < config.init_per_label {
            log::warn!(
                "label {:?}: only {} gold samples available, seeding {} instead of {}",
                label.name,
                available.len(),
                take,
                config.init_per_label
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SEED_POOL, label_index as u64]));
        let mut chosen = sample_indices(&mut rng, available.len(), take).into_vec();
        chosen.sort_unstable();
        let members: Vec<Sample> = chosen.iter().map(|&i| available[i].clone()).collect();
        let texts: Vec<String> = members.iter().map(|s| s.text.clone()).collect();
        let vectors = embed(&texts, ctx.embedding, ctx.normalize_embeddings).map_err(|source| {
            EvolutionError::Selection {
                label: label.name.clone(),
                source,
            }
        })?;

        let gold_corpus = EmbeddedCorpus::new(
            "gold",
            vectors.iter().map(|v| (label.name.clone(), v.clone())).collect(),
        );
        match gold_corpus.as_ref().map(aps) {
            Ok(Ok(score)) => log::info!("label {:?}: seed pool of {take}, gold APS {score:.4}", label.name),
            _ => log::info!("label {:?}: seed pool of {take}, gold APS unavailable", label.name),
        }

        let mut pool = Pool::new(label.name.clone());
        for (sample, vector) in members.into_iter().zip(vectors) {
            pool.seed(sample, vector).map_err(|source| EvolutionError::Selection {
                label: label.name.clone(),
                source,
            })?;
        }
        pools.push(pool);
    }
    Ok(pools)
}

/// Receives each accepted offspring. The loop stops when either method says
/// so.
pub trait ProgressSink: Sync {
    fn accepted(&self, label_index: usize, pool: &Pool, progress: &LabelProgress, sample: &Sample) -> Result<(), EvolutionError>;

    fn should_stop(&self) -> bool {
        false
    }
}

/// Sink that ignores progress.
pub struct NoCheckpoint;

impl ProgressSink for NoCheckpoint {
    fn accepted(&self, _: usize, _: &Pool, _: &LabelProgress, _: &Sample) -> Result<(), EvolutionError> {
        Ok(())
    }
}

struct Attempt {
    prompt: String,
    parents: ParentPair,
    partition: Option<crate::genes::GenePartition>,
}

fn genetic_attempt(
    pool: &mut Pool,
    label: &Label,
    label_index: usize,
    attempt: u64,
    ctx: &RunContext<'_>,
) -> Result<Attempt, EvolutionError> {
    let template = ctx.template.ok_or_else(|| {
        EvolutionError::InvalidConfig("the genetic strategy needs a prompt template".into())
    })?;
    let selection_err = |source| EvolutionError::Selection {
        label: label.name.clone(),
        source,
    };
    let parents = pool.select_parents().map_err(selection_err)?;
    let seed = derive_seed(ctx.config.seed, &[SEED_PARTITION, label_index as u64, attempt]);
    let part = partition(ctx.config.partition_strategy, template.genes(), ctx.config.mutate_count, seed)?;
    let (p1, _) = pool.get(&parents.first).expect("selected ids are members");
    let (p2, _) = pool.get(&parents.second).expect("selected ids are members");
    let prompt = render_genetic_prompt(template, p1, p2, &part, label)?;
    Ok(Attempt {
        prompt,
        parents,
        partition: Some(part),
    })
}

fn simprompt_attempt(
    pool: &Pool,
    label: &Label,
    label_index: usize,
    attempt: u64,
    ctx: &RunContext<'_>,
) -> Result<Attempt, EvolutionError> {
    let seeds: Vec<&Sample> = pool
        .initial_ids()
        .map(|id| pool.get(id).expect("initial ids are members").0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.config.seed, &[SEED_EXAMPLES, label_index as u64, attempt]));
    let a = rng.random_range(0..seeds.len());
    let mut b = rng.random_range(0..seeds.len() - 1);
    if b >= a {
        b += 1;
    }
    let prompt = render_simprompt(label, seeds[a], seeds[b], ctx.label_set.task_kind())?;
    Ok(Attempt {
        prompt,
        parents: ParentPair {
            first: seeds[a].id.clone(),
            second: seeds[b].id.clone(),
            distance: 0.0,
        },
        partition: None,
    })
}

/// Turns a raw completion into sample text, or `None` if it is rejected.
fn accept_text(raw: &str, ctx: &RunContext<'_>) -> Option<String> {
    let text = filter_response(raw, ctx.refusal_patterns)?;
    match ctx.label_set.task_kind() {
        TaskKind::Summarization => split_summary(&text).map(|(doc, summary)| join_summary(&doc, &summary)),
        _ => Some(text),
    }
}

/// Generates offspring for one label until `progress.produced` reaches the
/// target. Genetic offspring are embedded and admitted to `pool` as they
/// are accepted. Returns the samples accepted by this call.
pub fn evolve_label(
    pool: &mut Pool,
    label_index: usize,
    progress: &mut LabelProgress,
    ctx: &RunContext<'_>,
    sink: &dyn ProgressSink,
) -> Result<Vec<Sample>, EvolutionError> {
    let config = ctx.config;
    let label = &ctx.label_set.labels()[label_index];
    let budget = config.rejection_budget();
    let mut accepted = Vec::new();
    while progress.produced < config.target_per_label {
        if sink.should_stop() {
            return Err(EvolutionError::Cancelled);
        }
        let attempt_index = progress.attempts;
        progress.attempts += 1;
        let attempt = match config.strategy {
            Strategy::Genetic => genetic_attempt(pool, label, label_index, attempt_index, ctx)?,
            Strategy::SimPrompt => simprompt_attempt(pool, label, label_index, attempt_index, ctx)?,
        };
        let request = RequestContext::new(label.name.clone(), attempt_index);
        let raw = match generate(&attempt.prompt, ctx.settings, ctx.generation, &request, ctx.retry) {
            Ok(raw) => Some(raw),
            Err(GenerationError::EmptyCompletion) => None,
            Err(source) => {
                return Err(EvolutionError::Generation {
                    label: label.name.clone(),
                    source,
                })
            }
        };
        let Some(text) = raw.as_deref().and_then(|r| accept_text(r, ctx)) else {
            progress.rejections += 1;
            log::debug!(
                "label {:?} attempt {attempt_index}: completion rejected ({} of {budget})",
                label.name,
                progress.rejections
            );
            if progress.rejections >= budget {
                return Err(EvolutionError::RejectionBudgetExceeded {
                    label: label.name.clone(),
                    rejections: progress.rejections,
                    accepted: progress.produced,
                });
            }
            continue;
        };

        let sample = Sample {
            id: offspring_id(&config.run_id, &label.name, progress.produced),
            text,
            label: label.name.clone(),
            origin: Origin::Synthetic,
            parent_ids: Some((attempt.parents.first, attempt.parents.second)),
            partition_record: attempt.partition,
            generation_index: Some(progress.produced as u64),
            extra: Default::default(),
        };
        if config.strategy == Strategy::Genetic {
            let selection_err = |source| EvolutionError::Selection {
                label: label.name.clone(),
                source,
            };
            let vector = embed(std::slice::from_ref(&sample.text), ctx.embedding, ctx.normalize_embeddings)
                .map_err(selection_err)?
                .pop()
                .expect("one text gives one vector");
            pool.admit(sample.clone(), vector).map_err(selection_err)?;
        }
        progress.produced += 1;
        progress.used_pairs = pool.snapshot().used_pairs;
        sink.accepted(label_index, pool, progress, &sample)?;
        accepted.push(sample);
    }
    Ok(accepted)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_path: Option<PathBuf>,
    /// Continue from `checkpoint_path` instead of starting over.
    pub resume: bool,
    /// Worker threads; 0 means one per label.
    pub max_concurrency: usize,
    /// Stop with [`EvolutionError::Halted`] once this many samples have been
    /// accepted in this invocation. Simulates a crash.
    pub halt_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Synthetic samples in label order, then generation order.
    pub samples: Vec<Sample>,
    pub progress: Vec<LabelProgress>,
    /// True when the checkpoint already recorded a finished run.
    pub already_complete: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    record: String,
    version: u32,
    fingerprint: String,
    spec: Value,
    complete: bool,
    labels: Vec<LabelProgress>,
}

/// Canonical description of everything that affects the output.
fn run_spec(gold: &[Sample], ctx: &RunContext<'_>) -> Value {
    let mut gold_hash = Sha256::new();
    for s in gold {
        for field in [&s.id, &s.label, &s.text] {
            gold_hash.update((field.len() as u64).to_le_bytes());
            gold_hash.update(field.as_bytes());
        }
    }
    serde_json::json!({
        "config": ctx.config,
        "task_kind": ctx.label_set.task_kind(),
        "labels": ctx.label_set.labels(),
        "template": ctx.template.map(|t| &t.template().body),
        "genes": ctx.template.map(|t| t.genes().names().collect::<Vec<_>>()),
        "settings": ctx.settings,
        "refusal_patterns": ctx.refusal_patterns,
        "normalize_embeddings": ctx.normalize_embeddings,
        "gold": hex::encode(gold_hash.finalize()),
    })
}

fn fingerprint(spec: &Value) -> String {
    hex::encode(Sha256::digest(spec.to_string().as_bytes()))
}

fn differing_keys(a: &Value, b: &Value) -> String {
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return "spec".into();
    };
    let mut keys: Vec<&str> = a
        .keys()
        .chain(b.keys())
        .map(String::as_str)
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    if keys.is_empty() {
        "spec".into()
    } else {
        keys.join(", ")
    }
}

struct Checkpoint {
    header: CheckpointHeader,
    samples: Vec<Sample>,
}

fn corrupt(message: impl Into<String>) -> EvolutionError {
    EvolutionError::CheckpointCorrupt(message.into())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, EvolutionError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| corrupt("file is empty"))?
        .map_err(|e| CorpusError::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(&first).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.record != CHECKPOINT_RECORD || header.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unexpected header record {:?} version {}",
            header.record, header.version
        )));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = corpus::parse_record(&line, i + 2, i).map_err(|e| corrupt(e.to_string()))?;
        samples.push(sample);
    }
    Ok(Checkpoint { header, samples })
}

fn write_checkpoint(path: &Path, header: &CheckpointHeader, samples: &[&Sample]) -> Result<(), EvolutionError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io = |e: std::io::Error| EvolutionError::Corpus(CorpusError::io(&tmp, e));
    {
        let file = File::create(&tmp).map_err(io)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, header).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
        corpus::write_records(samples.iter().copied(), &mut w).map_err(io)?;
        let file = w.into_inner().map_err(|e| io(e.into_error()))?;
        file.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(|e| EvolutionError::Corpus(CorpusError::io(path, e)))?;
    Ok(())
}

/// Shared checkpoint state. Workers report here after every acceptance.
struct Recorder<'p> {
    path: Option<&'p Path>,
    fingerprint: String,
    spec: Value,
    halt_after: Option<usize>,
    stop: AtomicBool,
    state: Mutex<RecorderState>,
}

struct RecorderState {
    progress: Vec<LabelProgress>,
    offspring: Vec<Vec<Sample>>,
    accepted_this_run: usize,
    halted: bool,
}

impl Recorder<'_> {
    fn header(&self, state: &RecorderState, complete: bool) -> CheckpointHeader {
        CheckpointHeader {
            record: CHECKPOINT_RECORD.into(),
            version: CHECKPOINT_VERSION,
            fingerprint: self.fingerprint.clone(),
            spec: self.spec.clone(),
            complete,
            labels: state.progress.clone(),
        }
    }

    fn flush(&self, state: &RecorderState, complete: bool) -> Result<(), EvolutionError> {
        if let Some(path) = self.path {
            let samples: Vec<&Sample> = state.offspring.iter().flatten().collect();
            write_checkpoint(path, &self.header(state, complete), &samples)?;
        }
        Ok(())
    }
}

impl ProgressSink for Recorder<'_> {
    fn accepted(&self, label_index: usize, _: &Pool, progress: &LabelProgress, sample: &Sample) -> Result<(), EvolutionError> {
        let mut state = self.state.lock().expect("recorder poisoned");
        if state.halted {
            return Err(EvolutionError::Halted {
                accepted: state.accepted_this_run,
            });
        }
        state.progress[label_index] = progress.clone();
        state.offspring[label_index].push(sample.clone());
        state.accepted_this_run += 1;
        self.flush(&state, false)?;
        if self.halt_after == Some(state.accepted_this_run) {
            state.halted = true;
            self.stop.store(true, Ordering::SeqCst);
            return Err(EvolutionError::Halted {
                accepted: state.accepted_this_run,
            });
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

/// Rebuilds each label's pool from a fresh seeding plus the checkpointed
/// offspring and used pairs.
fn restore_pools(
    mut pools: Vec<Pool>,
    checkpoint: &Checkpoint,
    ctx: &RunContext<'_>,
) -> Result<(Vec<Pool>, Vec<Vec<Sample>>), EvolutionError> {
    let labels = ctx.label_set.labels();
    if checkpoint.header.labels.len() != labels.len() {
        return Err(corrupt("label count differs from the configuration"));
    }
    let mut by_label: HashMap<&str, Vec<Sample>> = HashMap::new();
    for s in &checkpoint.samples {
        if s.origin != Origin::Synthetic {
            return Err(corrupt(format!("record {:?} is not synthetic", s.id)));
        }
        by_label.entry(s.label.as_str()).or_default().push(s.clone());
    }
    let mut offspring = Vec::with_capacity(labels.len());
    for ((label, progress), pool) in labels.iter().zip(&checkpoint.header.labels).zip(pools.iter_mut()) {
        if progress.label != label.name {
            return Err(corrupt(format!("expected label {:?}, found {:?}", label.name, progress.label)));
        }
        let seeded: Vec<String> = pool.initial_ids().map(str::to_owned).collect();
        if seeded != progress.initial_ids {
            return Err(corrupt(format!("seed pool of {:?} differs from the recorded one", label.name)));
        }
        let mut children = by_label.remove(label.name.as_str()).unwrap_or_default();
        children.sort_by_key(|s| s.generation_index);
        let indices: Vec<Option<u64>> = children.iter().map(|s| s.generation_index).collect();
        let expected: Vec<Option<u64>> = (0..progress.produced as u64).map(Some).collect();
        if indices != expected {
            return Err(corrupt(format!(
                "label {:?} records {} sample(s) but {} were expected",
                label.name,
                children.len(),
                progress.produced
            )));
        }
        if progress.produced > ctx.config.target_per_label {
            return Err(corrupt(format!("label {:?} exceeds its target", label.name)));
        }
        let selection_err = |source| EvolutionError::Selection {
            label: label.name.clone(),
            source,
        };
        let mut members: Vec<_> = pool.members().map(|(s, v)| (s.clone(), v.clone())).collect();
        if ctx.config.strategy == Strategy::Genetic && !children.is_empty() {
            let texts: Vec<String> = children.iter().map(|s| s.text.clone()).collect();
            let vectors = embed(&texts, ctx.embedding, ctx.normalize_embeddings).map_err(selection_err)?;
            members.extend(children.iter().cloned().zip(vectors));
        }
        let snapshot = PoolSnapshot {
            label: label.name.clone(),
            initial_ids: progress.initial_ids.clone(),
            used_pairs: progress.used_pairs.clone(),
        };
        *pool = Pool::restore(&snapshot, members).map_err(|e| corrupt(e.to_string()))?;
        offspring.push(children);
    }
    if let Some(label) = by_label.keys().next() {
        return Err(corrupt(format!("record for unknown label {label:?}")));
    }
    Ok((pools, offspring))
}

/// Runs every label to its target, checkpointing after each acceptance.
pub fn run(gold: &[Sample], ctx: &RunContext<'_>, options: &RunOptions) -> Result<RunOutcome, EvolutionError> {
    let config = ctx.config;
    config.validate()?;
    let mut slugs: Vec<String> = ctx.label_set.labels().iter().map(|l| label_slug(&l.name)).collect();
    slugs.sort();
    if slugs.windows(2).any(|w| w[0] == w[1]) {
        return Err(EvolutionError::InvalidConfig(
            "two labels map to the same sample-id prefix".into(),
        ));
    }
    if config.strategy == Strategy::Genetic {
        let template = ctx.template.ok_or_else(|| {
            EvolutionError::InvalidConfig("the genetic strategy needs a prompt template".into())
        })?;
        // Surfaces gene-count problems before any request is made.
        partition(config.partition_strategy, template.genes(), config.mutate_count, config.seed)?;
    }
    if config.alpha.is_some() {
        log::info!("alpha is accepted but has no effect on generation");
    }

    let spec = run_spec(gold, ctx);
    let print = fingerprint(&spec);
    let checkpoint = match (&options.checkpoint_path, options.resume) {
        (Some(path), true) => Some(read_checkpoint(path)?),
        (None, true) => {
            return Err(EvolutionError::InvalidConfig("resume needs a checkpoint path".into()))
        }
        _ => None,
    };
    if let Some(cp) = &checkpoint {
        if cp.header.fingerprint != print {
            return Err(EvolutionError::ConfigMismatch(differing_keys(&cp.header.spec, &spec)));
        }
        if cp.header.complete {
            log::info!("checkpoint records a completed run; nothing to do");
            return Ok(RunOutcome {
                samples: cp.samples.clone(),
                progress: cp.header.labels.clone(),
                already_complete: true,
            });
        }
    }

    let pools = seed_pools(gold, ctx)?;
    let (pools, offspring, progress) = match &checkpoint {
        Some(cp) => {
            let (pools, offspring) = restore_pools(pools, cp, ctx)?;
            (pools, offspring, cp.header.labels.clone())
        }
        None => {
            let progress: Vec<LabelProgress> = ctx
                .label_set
                .labels()
                .iter()
                .zip(&pools)
                .map(|(l, p)| LabelProgress::new(&l.name, p))
                .collect();
            let offspring = vec![Vec::new(); pools.len()];
            (pools, offspring, progress)
        }
    };

    let recorder = Recorder {
        path: options.checkpoint_path.as_deref(),
        fingerprint: print,
        spec,
        halt_after: options.halt_after,
        stop: AtomicBool::new(false),
        state: Mutex::new(RecorderState {
            progress: progress.clone(),
            offspring,
            accepted_this_run: 0,
            halted: false,
        }),
    };
    if options.halt_after == Some(0) {
        return Err(EvolutionError::Halted { accepted: 0 });
    }
    if checkpoint.is_none() {
        recorder.flush(&recorder.state.lock().expect("recorder poisoned"), false)?;
    }

    let workers = match options.max_concurrency {
        0 => pools.len(),
        n => n.min(pools.len()),
    }
    .max(1);
    let jobs: Vec<Mutex<(Pool, LabelProgress)>> = pools.into_iter().zip(progress).map(Mutex::new).collect();
    let next = AtomicUsize::new(0);
    let errors: Mutex<Vec<(usize, EvolutionError)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || recorder.should_stop() {
                    break;
                }
                let mut job = jobs[i].lock().expect("job poisoned");
                let (pool, progress) = &mut *job;
                if let Err(e) = evolve_label(pool, i, progress, ctx, &recorder) {
                    recorder.stop.store(true, Ordering::SeqCst);
                    errors.lock().expect("errors poisoned").push((i, e));
                }
            });
        }
    });

    let mut errors = errors.into_inner().expect("errors poisoned");
    if !errors.is_empty() {
        // Prefer the root cause over the cancellations it triggered.
        errors.sort_by_key(|(i, e)| (matches!(e, EvolutionError::Cancelled | EvolutionError::Halted { .. }), *i));
        return Err(errors.remove(0).1);
    }

    recorder.flush(&recorder.state.lock().expect("recorder poisoned"), true)?;
    let state = recorder.state.into_inner().expect("recorder poisoned");
    Ok(RunOutcome {
        samples: state.offspring.into_iter().flatten().collect(),
        progress: state.progress,
        already_complete: false,
    })
}
