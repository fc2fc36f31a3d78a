//! Synthetic text corpus generation by simulated crossover and mutation.
//!
//! Each label keeps a pool of embedded samples seeded from gold data. Every
//! step picks the farthest unused pair of pool members as parents, splits a
//! gene set into inherited and mutated groups, asks a language model for a
//! child text, filters it, and admits it back into the pool.

pub mod corpus;
pub mod evolution;
pub mod generation;
pub mod genes;
pub mod metrics;
pub mod numeric;
pub mod providers;
pub mod selection;

pub use corpus::{
    load_dataset, write_dataset, CorpusError, DatasetMetadata, Label, LabelSet, Origin, Sample,
    TaskKind,
};
pub use evolution::{
    evolve_label, run, seed_pools, EvolutionError, LabelProgress, RunConfig, RunContext,
    RunOptions, RunOutcome, Strategy,
};
pub use generation::{
    generate, BoundTemplate, GenerationError, GenerationSettings, PromptTemplate, RetryPolicy,
    TemplateError,
};
pub use genes::{
    identify_genes, partition, Gene, GeneError, GenePartition, GeneSet, PartitionStrategy,
};
pub use metrics::{aps, cmd, intra_inter_aps, vocabulary_size, EmbeddedCorpus, MetricsError, MetricsReport};
pub use providers::{
    EmbeddingProvider, GenerationProvider, MockEmbeddingProvider, MockGenerationProvider,
    ProviderError, RequestContext,
};
pub use selection::{euclidean_distance, EmbeddingVector, ParentPair, Pool, SelectionError};
