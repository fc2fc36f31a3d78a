//! Per-label population pools and farthest-unused-pair parent selection.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::providers::{EmbeddingProvider, ProviderError};

/// Texts per embedding request.
const EMBED_BATCH: usize = 64;
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding has a non-finite component")]
    NonFinite,
    #[error("embedding is empty")]
    EmptyVector,
    #[error("cannot normalize a zero vector")]
    ZeroNorm,
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embedding provider returned inconsistent dimensions ({first} then {other})")]
    DimensionDrift { first: usize, other: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("pool for {label:?} has {members} member(s); at least 2 are needed")]
    PoolTooSmall { label: String, members: usize },
    #[error("every parent pair in the {label:?} pool has already been used")]
    PairsExhausted { label: String },
    #[error("sample id {0:?} is already in the pool")]
    DuplicateId(String),
    #[error("unknown sample id {0:?}")]
    UnknownId(String),
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = SelectionError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SelectionError> {
        if values.is_empty() {
            return Err(SelectionError::EmptyVector);
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(SelectionError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm.
    pub fn normalized(&self) -> Result<Self, SelectionError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(SelectionError::ZeroNorm);
        }
        let values: Vec<f64> = self.0.iter().map(|x| x / norm).collect();
        debug_assert!((values.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= UNIT_NORM_TOLERANCE);
        Ok(EmbeddingVector(values))
    }
}

/// √Σ(aᵢ−bᵢ)², summed in index order. Symmetric bit-for-bit.
pub fn euclidean_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SelectionError> {
    if a.dim() != b.dim() {
        return Err(SelectionError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(distance_unchecked(a.values(), b.values()))
}

fn distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Embeds `texts` in order, optionally scaling each vector to unit length.
pub fn embed(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    normalize: bool,
) -> Result<Vec<EmbeddingVector>, SelectionError> {
    if texts.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let mut out = Vec::with_capacity(texts.len());
    let mut dim = None;
    for chunk in texts.chunks(EMBED_BATCH) {
        let raw = provider.embed_batch(chunk)?;
        if raw.len() != chunk.len() {
            return Err(ProviderError::Malformed(format!(
                "expected {} embeddings, got {}",
                chunk.len(),
                raw.len()
            ))
            .into());
        }
        for values in raw {
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(SelectionError::DimensionDrift {
                        first: d,
                        other: values.len(),
                    })
                }
                Some(_) => {}
            }
            let v = EmbeddingVector::new(values)?;
            out.push(if normalize { v.normalized()? } else { v });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentPair {
    pub first: String,
    pub second: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
struct Member {
    sample: Sample,
    vector: EmbeddingVector,
    initial: bool,
}

/// Serializable state of a pool without its embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub label: String,
    pub initial_ids: Vec<String>,
    /// Unordered pairs, each stored with the smaller id first, sorted.
    pub used_pairs: Vec<(String, String)>,
}

/// The population {P, E} for one label plus its used-pair ledger.
///
/// Selection is exact. Each member caches its best unused partner, so a
/// selection scans n cached entries and refreshes two rows, and admitting a
/// member costs one distance per existing member.
#[derive(Debug, Clone)]
pub struct Pool {
    label: String,
    members: Vec<Member>,
    index: HashMap<String, usize>,
    used: HashSet<(usize, usize)>,
    best: Vec<Option<(usize, f64)>>,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Pool {
    pub fn new(label: impl Into<String>) -> Self {
        Pool {
            label: label.into(),
            members: Vec::new(),
            index: HashMap::new(),
            used: HashSet::new(),
            best: Vec::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.members.first().map(|m| m.vector.dim())
    }

    pub fn used_pair_count(&self) -> usize {
        self.used.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.members.iter().map(|m| &m.sample)
    }

    pub fn members(&self) -> impl Iterator<Item = (&Sample, &EmbeddingVector)> {
        self.members.iter().map(|m| (&m.sample, &m.vector))
    }

    pub fn initial_ids(&self) -> impl Iterator<Item = &str> {
        self.members
            .iter()
            .filter(|m| m.initial)
            .map(|m| m.sample.id.as_str())
    }

    pub fn is_used(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.used.contains(&ordered(i, j)),
            _ => false,
        }
    }

    /// Adds a member drawn from the gold data.
    pub fn seed(&mut self, sample: Sample, vector: EmbeddingVector) -> Result<(), SelectionError> {
        self.insert(sample, vector, true)
    }

    /// Adds a generated offspring. The used-pair ledger is unchanged.
    pub fn admit(&mut self, sample: Sample, vector: EmbeddingVector) -> Result<(), SelectionError> {
        self.insert(sample, vector, false)
    }

    fn insert(&mut self, sample: Sample, vector: EmbeddingVector, initial: bool) -> Result<(), SelectionError> {
        if let Some(expected) = self.dim() {
            if vector.dim() != expected {
                return Err(SelectionError::DimensionMismatch {
                    expected,
                    found: vector.dim(),
                });
            }
        }
        if self.index.contains_key(&sample.id) {
            return Err(SelectionError::DuplicateId(sample.id));
        }
        let new = self.members.len();
        let mut new_best: Option<(usize, f64)> = None;
        for i in 0..new {
            let d = distance_unchecked(self.members[i].vector.values(), vector.values());
            // The new member has no used pairs yet, so every pair is a candidate.
            if self.beats(i, new, d, &sample.id, self.best[i]) {
                self.best[i] = Some((new, d));
            }
            if self.beats(new, i, d, &sample.id, new_best) {
                new_best = Some((i, d));
            }
        }
        self.index.insert(sample.id.clone(), new);
        self.members.push(Member {
            sample,
            vector,
            initial,
        });
        self.best.push(new_best);
        Ok(())
    }

    fn id_of<'a>(&'a self, i: usize, pending_id: &'a str) -> &'a str {
        self.members
            .get(i)
            .map(|m| m.sample.id.as_str())
            .unwrap_or(pending_id)
    }

    /// Canonical key of an unordered pair: (smaller id, larger id).
    fn key<'a>(&'a self, a: usize, b: usize, pending_id: &'a str) -> (&'a str, &'a str) {
        let (x, y) = (self.id_of(a, pending_id), self.id_of(b, pending_id));
        if x <= y {
            (x, y)
        } else {
            (y, x)
        }
    }

    /// Ranking: larger distance first, then lexicographically smaller key.
    fn compare(&self, (a1, b1, d1): (usize, usize, f64), (a2, b2, d2): (usize, usize, f64), pending_id: &str) -> Ordering {
        d2.partial_cmp(&d1)
            .expect("distances are finite")
            .then_with(|| self.key(a1, b1, pending_id).cmp(&self.key(a2, b2, pending_id)))
    }

    fn beats(&self, row: usize, partner: usize, d: f64, pending_id: &str, current: Option<(usize, f64)>) -> bool {
        match current {
            None => true,
            Some((j, dj)) => self.compare((row, partner, d), (row, j, dj), pending_id) == Ordering::Less,
        }
    }

    fn refresh_row(&mut self, row: usize) {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.members.len() {
            if j == row || self.used.contains(&ordered(row, j)) {
                continue;
            }
            let d = distance_unchecked(self.members[row].vector.values(), self.members[j].vector.values());
            if self.beats(row, j, d, "", best) {
                best = Some((j, d));
            }
        }
        self.best[row] = best;
    }

    /// Returns the unused pair with the largest distance and marks it used.
    /// Equal distances go to the lexicographically smallest (id, id) pair.
    pub fn select_parents(&mut self) -> Result<ParentPair, SelectionError> {
        if self.members.len() < 2 {
            return Err(SelectionError::PoolTooSmall {
                label: self.label.clone(),
                members: self.members.len(),
            });
        }
        let mut winner: Option<(usize, usize, f64)> = None;
        for (i, cached) in self.best.iter().enumerate() {
            if let Some((j, d)) = *cached {
                let better = match winner {
                    None => true,
                    Some(w) => self.compare((i, j, d), w, "") == Ordering::Less,
                };
                if better {
                    winner = Some((i, j, d));
                }
            }
        }
        let (i, j, distance) = winner.ok_or_else(|| SelectionError::PairsExhausted {
            label: self.label.clone(),
        })?;
        self.used.insert(ordered(i, j));
        self.refresh_row(i);
        self.refresh_row(j);
        let (first, second) = self.key(i, j, "");
        Ok(ParentPair {
            first: first.to_string(),
            second: second.to_string(),
            distance,
        })
    }

    /// Members that were not seeded from gold data, in admission order.
    pub fn finalize(&self) -> Vec<Sample> {
        self.members
            .iter()
            .filter(|m| !m.initial)
            .map(|m| m.sample.clone())
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<(&Sample, &EmbeddingVector)> {
        self.index
            .get(id)
            .map(|&i| (&self.members[i].sample, &self.members[i].vector))
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        let mut used_pairs: Vec<(String, String)> = self
            .used
            .iter()
            .map(|&(a, b)| {
                let (x, y) = self.key(a, b, "");
                (x.to_string(), y.to_string())
            })
            .collect();
        used_pairs.sort();
        PoolSnapshot {
            label: self.label.clone(),
            initial_ids: self.initial_ids().map(str::to_owned).collect(),
            used_pairs,
        }
    }

    /// Rebuilds a pool from its snapshot and its members in admission order.
    pub fn restore(
        snapshot: &PoolSnapshot,
        members: Vec<(Sample, EmbeddingVector)>,
    ) -> Result<Self, SelectionError> {
        let initial: HashSet<&str> = snapshot.initial_ids.iter().map(String::as_str).collect();
        let mut pool = Pool::new(snapshot.label.clone());
        for (sample, vector) in members {
            let is_initial = initial.contains(sample.id.as_str());
            pool.insert(sample, vector, is_initial)?;
        }
        for id in &snapshot.initial_ids {
            if !pool.contains(id) {
                return Err(SelectionError::UnknownId(id.clone()));
            }
        }
        let mut rows = HashSet::new();
        for (a, b) in &snapshot.used_pairs {
            let i = *pool.index.get(a).ok_or_else(|| SelectionError::UnknownId(a.clone()))?;
            let j = *pool.index.get(b).ok_or_else(|| SelectionError::UnknownId(b.clone()))?;
            pool.used.insert(ordered(i, j));
            rows.insert(i);
            rows.insert(j);
        }
        for row in rows {
            pool.refresh_row(row);
        }
        Ok(pool)
    }
}
