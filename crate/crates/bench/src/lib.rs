//! Seeded fixtures shared by the benchmarks.

use genetic_prompt_core::{EmbeddedCorpus, EmbeddingVector, Pool, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unit vectors with uniformly drawn coordinates.
pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let values: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            EmbeddingVector::new(values)
                .and_then(|v| v.normalized())
                .expect("random vectors are finite and nonzero")
        })
        .collect()
}

/// A pool seeded with `n` random members.
pub fn random_pool(n: usize, dim: usize, seed: u64) -> Pool {
    let mut pool = Pool::new("bench");
    for (i, v) in random_vectors(n, dim, seed).into_iter().enumerate() {
        pool.seed(Sample::gold(format!("m{i:06}"), "text", "bench"), v)
            .expect("ids are unique and dims agree");
    }
    pool
}

/// `n` entries spread round-robin over `labels` labels.
pub fn random_corpus(n: usize, dim: usize, labels: usize, seed: u64) -> EmbeddedCorpus {
    let entries = random_vectors(n, dim, seed)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (format!("label-{}", i % labels.max(1)), v))
        .collect();
    EmbeddedCorpus::new(format!("random-{seed}"), entries).expect("dims agree")
}
