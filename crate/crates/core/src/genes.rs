//! Textual genes: discovery through the generation provider, curated gene
//! sets, and the three-way split into inherit-from-parent-1,
//! inherit-from-parent-2 and mutate groups.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetMetadata, Sample};
use crate::generation::{self, GenerationError, GenerationSettings, RetryPolicy};
use crate::providers::{GenerationProvider, RequestContext};
use crate::generation::template::{render_named, TemplateError};

#[derive(Debug, Error)]
pub enum GeneError {
    #[error("invalid gene set: {0}")]
    InvalidGeneSet(String),
    #[error("cannot partition {genes} genes with mutate_count {mutate_count}: each parent must contribute at least one gene")]
    TooFewGenes { genes: usize, mutate_count: usize },
    #[error("mutate_count must be at least 1")]
    ZeroMutateCount,
    #[error("at least one seed sample is required")]
    NoSeedSamples,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("provider response contained no parseable gene names")]
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gene {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Gene {
    pub fn new(name: impl Into<String>) -> Self {
        Gene {
            name: name.into(),
            description: None,
        }
    }
}

/// Ordered, curated genes for one dataset. Order matters: it is the order of
/// `{Gene[i]}` placeholders in templates and of the alternating split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSet {
    genes: Vec<Gene>,
}

impl GeneSet {
    pub fn new(genes: Vec<Gene>) -> Result<Self, GeneError> {
        if genes.len() < 2 {
            return Err(GeneError::InvalidGeneSet(format!(
                "need at least 2 genes, got {}",
                genes.len()
            )));
        }
        let mut seen = HashSet::new();
        for gene in &genes {
            if gene.name.trim().is_empty() {
                return Err(GeneError::InvalidGeneSet("gene name is empty".into()));
            }
            if !seen.insert(gene.name.as_str()) {
                return Err(GeneError::InvalidGeneSet(format!(
                    "duplicate gene {:?}",
                    gene.name
                )));
            }
        }
        Ok(GeneSet { genes })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, GeneError> {
        Self::new(names.iter().map(|n| Gene::new(n.as_ref())).collect())
    }

    pub fn genes(&self) -> &[Gene] {
        &self.genes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.genes.iter().map(|g| g.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.genes.iter().position(|g| g.name == name)
    }
}

/// G = G1 ⊎ G2 ⊎ G3. Each group lists gene names in gene-set order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenePartition {
    pub from_parent_1: Vec<String>,
    pub from_parent_2: Vec<String>,
    pub mutate: Vec<String>,
}

/// Which group a gene landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneRole {
    FromParent1,
    FromParent2,
    Mutate,
}

impl GenePartition {
    pub fn role_of(&self, name: &str) -> Option<GeneRole> {
        if self.from_parent_1.iter().any(|g| g == name) {
            Some(GeneRole::FromParent1)
        } else if self.from_parent_2.iter().any(|g| g == name) {
            Some(GeneRole::FromParent2)
        } else if self.mutate.iter().any(|g| g == name) {
            Some(GeneRole::Mutate)
        } else {
            None
        }
    }

    /// True when the three groups are pairwise disjoint, cover `genes`
    /// exactly, and both parent groups are non-empty.
    pub fn is_valid_for(&self, genes: &GeneSet) -> bool {
        if self.from_parent_1.is_empty() || self.from_parent_2.is_empty() {
            return false;
        }
        let total = self.from_parent_1.len() + self.from_parent_2.len() + self.mutate.len();
        if total != genes.len() {
            return false;
        }
        let mut seen = HashSet::new();
        self.from_parent_1
            .iter()
            .chain(&self.from_parent_2)
            .chain(&self.mutate)
            .all(|g| genes.position(g).is_some() && seen.insert(g.as_str()))
    }

    fn from_roles(genes: &GeneSet, roles: &[GeneRole]) -> Self {
        let mut p = GenePartition {
            from_parent_1: Vec::new(),
            from_parent_2: Vec::new(),
            mutate: Vec::new(),
        };
        for (gene, role) in genes.genes().iter().zip(roles) {
            let group = match role {
                GeneRole::FromParent1 => &mut p.from_parent_1,
                GeneRole::FromParent2 => &mut p.from_parent_2,
                GeneRole::Mutate => &mut p.mutate,
            };
            group.push(gene.name.clone());
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    #[default]
    Random,
    Alternating,
}

fn check_partition_shape(genes: &GeneSet, mutate_count: usize) -> Result<(), GeneError> {
    if mutate_count == 0 {
        return Err(GeneError::ZeroMutateCount);
    }
    if genes.len() < mutate_count + 2 {
        return Err(GeneError::TooFewGenes {
            genes: genes.len(),
            mutate_count,
        });
    }
    Ok(())
}

/// Picks `mutate_count` genes uniformly to mutate, then assigns the rest to
/// the two parents uniformly among assignments that leave neither parent
/// empty.
pub fn partition_random(
    genes: &GeneSet,
    mutate_count: usize,
    rng_seed: u64,
) -> Result<GenePartition, GeneError> {
    check_partition_shape(genes, mutate_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..genes.len()).collect();
    order.shuffle(&mut rng);

    let mut roles = vec![GeneRole::Mutate; genes.len()];
    let inherited = &order[mutate_count..];
    loop {
        let mut first = 0usize;
        for &g in inherited {
            roles[g] = if rng.random_bool(0.5) {
                first += 1;
                GeneRole::FromParent1
            } else {
                GeneRole::FromParent2
            };
        }
        if first > 0 && first < inherited.len() {
            break;
        }
    }
    Ok(GenePartition::from_roles(genes, &roles))
}

/// The fixed split the bundled templates spell out: the last `mutate_count`
/// genes mutate; of the others, even positions inherit from parent 1 and odd
/// positions from parent 2.
pub fn partition_alternating(
    genes: &GeneSet,
    mutate_count: usize,
) -> Result<GenePartition, GeneError> {
    check_partition_shape(genes, mutate_count)?;
    let inherited = genes.len() - mutate_count;
    let roles: Vec<GeneRole> = (0..genes.len())
        .map(|i| {
            if i >= inherited {
                GeneRole::Mutate
            } else if i % 2 == 0 {
                GeneRole::FromParent1
            } else {
                GeneRole::FromParent2
            }
        })
        .collect();
    Ok(GenePartition::from_roles(genes, &roles))
}

pub fn partition(
    strategy: PartitionStrategy,
    genes: &GeneSet,
    mutate_count: usize,
    rng_seed: u64,
) -> Result<GenePartition, GeneError> {
    match strategy {
        PartitionStrategy::Random => partition_random(genes, mutate_count, rng_seed),
        PartitionStrategy::Alternating => partition_alternating(genes, mutate_count),
    }
}

/// Default discovery instruction. Placeholders: `{task_description}`,
/// `{domain}`, `{examples}`.
pub const DEFAULT_IDENTIFICATION_INSTRUCTION: &str = "\
You are helping to design a synthetic data generator.
Task metadata: {task_description} (domain: {domain}).

Here are examples from the dataset:
{examples}

Treat the attributes of a text as its genes. List the genes that matter most for this task, \
such as length or sentence structure. Answer with a comma-separated list of short gene names only.";

#[derive(Debug, Clone)]
pub struct GeneIdentificationRequest {
    pub metadata: DatasetMetadata,
    pub seed_samples: Vec<Sample>,
    pub instruction: String,
}

impl GeneIdentificationRequest {
    pub fn new(metadata: DatasetMetadata, seed_samples: Vec<Sample>) -> Self {
        GeneIdentificationRequest {
            metadata,
            seed_samples,
            instruction: DEFAULT_IDENTIFICATION_INSTRUCTION.to_string(),
        }
    }

    pub fn render(&self) -> Result<String, GeneError> {
        if self.seed_samples.is_empty() {
            return Err(GeneError::NoSeedSamples);
        }
        let examples = self
            .seed_samples
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Example {}: {}", i + 1, s.text))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(render_named(
            &self.instruction,
            &[
                ("task_description", self.metadata.task_description.as_str()),
                ("domain", self.metadata.domain.as_str()),
                ("examples", examples.as_str()),
            ],
        )?)
    }
}

/// Sends one discovery prompt and parses the candidate genes from the reply.
/// The caller curates candidates into a [`GeneSet`]; nothing is adopted here.
pub fn identify_genes(
    request: &GeneIdentificationRequest,
    provider: &dyn GenerationProvider,
    settings: &GenerationSettings,
    retry: &RetryPolicy,
) -> Result<Vec<Gene>, GeneError> {
    let prompt = request.render()?;
    let context = RequestContext::new("identify-genes", 0);
    let response = match generation::generate(&prompt, settings, provider, &context, retry) {
        Ok(text) => text,
        Err(GenerationError::EmptyCompletion) => return Err(GeneError::ParseFailure),
        Err(e) => return Err(e.into()),
    };
    let genes = parse_gene_candidates(&response);
    if genes.is_empty() {
        return Err(GeneError::ParseFailure);
    }
    Ok(genes)
}

const MAX_GENE_WORDS: usize = 5;
const MAX_GENE_CHARS: usize = 48;

/// Splits a comma/newline/semicolon separated reply into gene candidates.
///
/// List markers, quotes and emphasis are stripped; `name: description` and
/// `name - description` keep the description. Names are deduplicated
/// case-insensitively, keeping the first spelling. Pieces that do not look
/// like a short name are dropped with a warning.
pub fn parse_gene_candidates(response: &str) -> Vec<Gene> {
    let marker = regex::Regex::new(r"^(?:[-*•]+|\d+[.)]|\(\d+\))\s*").expect("static regex");
    let mut seen = HashSet::new();
    let mut genes = Vec::new();
    for piece in response.split([',', '\n', ';']) {
        let stripped = marker.replace(piece.trim(), "");
        let piece = stripped.trim();
        let (mut name, mut description) = split_description(piece);
        // "The key genes are: length" -> "length"
        if let Some(desc) = description.as_deref() {
            if name.split_whitespace().count() > 3 && !desc.is_empty() {
                name = desc.to_string();
                description = None;
            }
        }
        let name = clean_name(&name);
        if name.is_empty() || is_filler(&name) {
            continue;
        }
        if name.split_whitespace().count() > MAX_GENE_WORDS
            || name.chars().count() > MAX_GENE_CHARS
            || !name.chars().any(char::is_alphabetic)
        {
            log::warn!("dropping unparseable gene candidate {name:?}");
            continue;
        }
        if seen.insert(name.to_lowercase()) {
            genes.push(Gene { name, description });
        }
    }
    genes
}

fn split_description(piece: &str) -> (String, Option<String>) {
    for sep in [":", " - ", " – ", " — "] {
        if let Some((name, desc)) = piece.split_once(sep) {
            let desc = desc.trim();
            return (
                name.trim().to_string(),
                (!desc.is_empty()).then(|| desc.to_string()),
            );
        }
    }
    (piece.to_string(), None)
}

fn clean_name(raw: &str) -> String {
    let trimmed = raw.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '_' | '.' | '“' | '”' | '‘' | '’')
    });
    let trimmed = trimmed.strip_prefix("and ").unwrap_or(trimmed);
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_filler(name: &str) -> bool {
    matches!(name.to_lowercase().as_str(), "etc" | "and" | "and so on" | "others")
}
