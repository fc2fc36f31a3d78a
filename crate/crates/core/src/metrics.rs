//! Intrinsic diversity metrics: average pairwise similarity (overall,
//! intra-class, inter-class), central moment discrepancy against a reference
//! corpus, and vocabulary size.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::numeric::NeumaierSum;
use crate::providers::EmbeddingProvider;
use crate::selection::{embed, EmbeddingVector, SelectionError};

/// Allowed overshoot of the [-1, 1] support before CMD refuses a corpus.
pub const SUPPORT_SLACK: f64 = 1e-6;
pub const DEFAULT_CMD_ORDER: u32 = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 samples, got {found}")]
    TooFewSamples { found: usize },
    #[error("entry {index} has a zero embedding")]
    ZeroVector { index: usize },
    #[error("no pair of samples shares a label")]
    NoIntraPairs,
    #[error("no pair of samples has different labels")]
    NoInterPairs,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("entry {index} component {component} = {value} lies outside [-1, 1]")]
    OutOfSupport {
        index: usize,
        component: usize,
        value: f64,
    },
    #[error("moment order must be at least 1")]
    ZeroOrder,
    #[error(transparent)]
    Embedding(#[from] SelectionError),
}

/// Labelled embeddings of one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedCorpus {
    pub source_tag: String,
    entries: Vec<(String, EmbeddingVector)>,
}

impl EmbeddedCorpus {
    pub fn new(
        source_tag: impl Into<String>,
        entries: Vec<(String, EmbeddingVector)>,
    ) -> Result<Self, MetricsError> {
        if let Some((_, first)) = entries.first() {
            let expected = first.dim();
            if let Some((_, bad)) = entries.iter().find(|(_, v)| v.dim() != expected) {
                return Err(MetricsError::DimensionMismatch {
                    expected,
                    found: bad.dim(),
                });
            }
        }
        Ok(EmbeddedCorpus {
            source_tag: source_tag.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|(_, v)| v.dim())
    }
}

/// Number of unordered pairs and the sum of their cosines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub count: u64,
    pub sum: f64,
}

impl PairStats {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseSummary {
    pub all: PairStats,
    pub intra: PairStats,
    pub inter: PairStats,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine sums over every unordered pair, split by whether labels match.
pub fn pairwise_cosines(corpus: &EmbeddedCorpus) -> Result<PairwiseSummary, MetricsError> {
    let n = corpus.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { found: n });
    }
    let mut norms = Vec::with_capacity(n);
    for (index, (_, v)) in corpus.entries.iter().enumerate() {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(MetricsError::ZeroVector { index });
        }
        norms.push(norm);
    }
    let (mut all, mut intra, mut inter) = (NeumaierSum::new(), NeumaierSum::new(), NeumaierSum::new());
    let (mut intra_count, mut inter_count) = (0u64, 0u64);
    for i in 0..n {
        let (label_i, vi) = &corpus.entries[i];
        for j in i + 1..n {
            let (label_j, vj) = &corpus.entries[j];
            let cos = dot(vi.values(), vj.values()) / (norms[i] * norms[j]);
            all.add(cos);
            if label_i == label_j {
                intra.add(cos);
                intra_count += 1;
            } else {
                inter.add(cos);
                inter_count += 1;
            }
        }
    }
    Ok(PairwiseSummary {
        all: PairStats {
            count: intra_count + inter_count,
            sum: all.value(),
        },
        intra: PairStats {
            count: intra_count,
            sum: intra.value(),
        },
        inter: PairStats {
            count: inter_count,
            sum: inter.value(),
        },
    })
}

/// Mean cosine similarity over all pairs i ≠ j. The ordered-pair sum is
/// twice the unordered one, as is the count, so the unordered mean is used.
pub fn aps(corpus: &EmbeddedCorpus) -> Result<f64, MetricsError> {
    let summary = pairwise_cosines(corpus)?;
    Ok(summary.all.mean().expect("n >= 2 gives at least one pair"))
}

pub type SplitMeans = (Result<f64, MetricsError>, Result<f64, MetricsError>);

/// Mean cosine over same-label pairs and over cross-label pairs. Each half
/// fails independently.
pub fn intra_inter_aps(corpus: &EmbeddedCorpus) -> Result<SplitMeans, MetricsError> {
    let summary = pairwise_cosines(corpus)?;
    Ok((
        summary.intra.mean().ok_or(MetricsError::NoIntraPairs),
        summary.inter.mean().ok_or(MetricsError::NoInterPairs),
    ))
}

fn check_support(corpus: &EmbeddedCorpus) -> Result<(), MetricsError> {
    for (index, (_, v)) in corpus.entries.iter().enumerate() {
        if let Some((component, &value)) = v
            .values()
            .iter()
            .enumerate()
            .find(|(_, x)| x.abs() > 1.0 + SUPPORT_SLACK)
        {
            return Err(MetricsError::OutOfSupport {
                index,
                component,
                value,
            });
        }
    }
    Ok(())
}

/// Per-dimension mean followed by per-dimension central moments of orders
/// 2..=order, all population (divide-by-n) moments.
pub fn central_moments(corpus: &EmbeddedCorpus, order: u32) -> Result<Vec<Vec<f64>>, MetricsError> {
    let dim = corpus.dim().ok_or(MetricsError::EmptyCorpus)?;
    let n = corpus.len() as f64;
    let mut mean = vec![NeumaierSum::new(); dim];
    for (_, v) in &corpus.entries {
        for (acc, x) in mean.iter_mut().zip(v.values()) {
            acc.add(*x);
        }
    }
    let mean: Vec<f64> = mean.iter().map(|s| s.value() / n).collect();
    let mut moments = vec![mean.clone()];
    for k in 2..=order {
        let mut acc = vec![NeumaierSum::new(); dim];
        for (_, v) in &corpus.entries {
            for ((a, x), m) in acc.iter_mut().zip(v.values()).zip(&mean) {
                a.add((x - m).powi(k as i32));
            }
        }
        moments.push(acc.iter().map(|s| s.value() / n).collect());
    }
    Ok(moments)
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Central moment discrepancy on [-1, 1]:
/// ½‖E(X)−E(Y)‖ + Σ_{k=2..order} 2^{-k}‖c_k(X)−c_k(Y)‖.
pub fn cmd(x: &EmbeddedCorpus, y: &EmbeddedCorpus, order: u32) -> Result<f64, MetricsError> {
    if order == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let (dx, dy) = match (x.dim(), y.dim()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(MetricsError::EmptyCorpus),
    };
    if dx != dy {
        return Err(MetricsError::DimensionMismatch {
            expected: dx,
            found: dy,
        });
    }
    check_support(x)?;
    check_support(y)?;
    let mx = central_moments(x, order)?;
    let my = central_moments(y, order)?;
    let mut total = 0.0;
    for (k, (a, b)) in (1..=order).zip(mx.iter().zip(&my)) {
        total += l2_diff(a, b) / 2f64.powi(k as i32);
    }
    Ok(total)
}

/// Characters stripped from token edges besides ASCII punctuation.
const EXTRA_PUNCTUATION: &[char] = &[
    '“', '”', '‘', '’', '«', '»', '…', '–', '—', '‹', '›', '„', '¿', '¡', '·',
];

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCTUATION.contains(&c)
}

/// Lowercased whitespace tokens with edge punctuation removed.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let t = raw.trim_matches(is_edge_punctuation).to_lowercase();
        (!t.is_empty()).then_some(t)
    })
}

pub fn vocabulary_size<'a, I>(texts: I) -> usize
where
    I: IntoIterator<Item = &'a str>,
{
    let mut vocab = HashSet::new();
    for text in texts {
        vocab.extend(tokens(text));
    }
    vocab.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub all: u64,
    pub intra: u64,
    pub inter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: String,
    pub samples: usize,
    pub aps: f64,
    /// Absent when no two samples share a label.
    pub intra_aps: Option<f64>,
    /// Absent for single-label corpora.
    pub inter_aps: Option<f64>,
    pub cmd_vs_reference: Option<f64>,
    pub vocabulary_size: usize,
    pub pair_counts: PairCounts,
}

/// Embeds `samples` after sorting them by (label, text, id), so results do
/// not depend on record order.
pub fn embed_corpus(
    source_tag: &str,
    samples: &[Sample],
    provider: &dyn EmbeddingProvider,
    normalize: bool,
) -> Result<EmbeddedCorpus, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| (&a.label, &a.text, &a.id).cmp(&(&b.label, &b.text, &b.id)));
    let texts: Vec<String> = sorted.iter().map(|s| s.text.clone()).collect();
    let vectors = embed(&texts, provider, normalize)?;
    let entries = sorted.iter().map(|s| s.label.clone()).zip(vectors).collect();
    EmbeddedCorpus::new(source_tag, entries)
}

/// Computes every metric for an embedded corpus. `reference` enables CMD.
pub fn summarize(
    corpus: &EmbeddedCorpus,
    vocabulary_size: usize,
    reference: Option<&EmbeddedCorpus>,
) -> Result<MetricsReport, MetricsError> {
    let pairs = pairwise_cosines(corpus)?;
    let cmd_vs_reference = reference
        .map(|r| cmd(corpus, r, DEFAULT_CMD_ORDER))
        .transpose()?;
    Ok(MetricsReport {
        source: corpus.source_tag.clone(),
        samples: corpus.len(),
        aps: pairs.all.mean().expect("n >= 2"),
        intra_aps: pairs.intra.mean(),
        inter_aps: pairs.inter.mean(),
        cmd_vs_reference,
        vocabulary_size,
        pair_counts: PairCounts {
            all: pairs.all.count,
            intra: pairs.intra.count,
            inter: pairs.inter.count,
        },
    })
}

/// Reports on `synthetic`, with CMD against `reference` when given. Vectors
/// are unit-normalized so they lie in the CMD support.
pub fn report(
    synthetic: &[Sample],
    reference: Option<&[Sample]>,
    provider: &dyn EmbeddingProvider,
) -> Result<MetricsReport, MetricsError> {
    let corpus = embed_corpus("synthetic", synthetic, provider, true)?;
    let reference = reference
        .map(|r| embed_corpus("gold", r, provider, true))
        .transpose()?;
    let vocab = vocabulary_size(synthetic.iter().map(|s| s.text.as_str()));
    summarize(&corpus, vocab, reference.as_ref())
}

fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Plain-text table with columns APS, Intra APS, Inter APS, CMD, Vocab.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.source.len())
        .chain(["Data".len()])
        .max()
        .unwrap_or(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>9}  {:>9}  {:>6}  {:>7}",
        "Data", "APS", "Intra APS", "Inter APS", "CMD", "Vocab."
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>9}  {:>9}  {:>6}  {:>7}",
            r.source,
            cell(Some(r.aps)),
            cell(r.intra_aps),
            cell(r.inter_aps),
            cell(r.cmd_vs_reference),
            r.vocabulary_size
        );
    }
    out
}
