mod common;

use std::collections::HashSet;

use common::oracle;
use genetic_prompt_core::metrics::{pairwise_cosines, tokens};
use genetic_prompt_core::providers::{EmbeddingProvider, MockEmbeddingProvider};
use genetic_prompt_core::selection::embed;
use genetic_prompt_core::{
    aps, cmd, euclidean_distance, genes, vocabulary_size, EmbeddedCorpus, EmbeddingVector, GeneSet,
    Origin, PartitionStrategy, Pool, Sample, SelectionError,
};
use proptest::prelude::*;

fn vector(values: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(values.to_vec()).unwrap()
}

fn corpus(entries: &[(String, Vec<f64>)]) -> EmbeddedCorpus {
    EmbeddedCorpus::new("t", entries.iter().map(|(l, v)| (l.clone(), vector(v))).collect()).unwrap()
}

/// Coordinates on a coarse grid so equal distances are common.
fn grid_points(max_n: usize, max_dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n, 2..=max_dim).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec((-3i8..=3).prop_map(f64::from), d), n)
    })
}

fn labelled_unit_box(max_n: usize, max_dim: usize) -> impl Strategy<Value = Vec<(String, Vec<f64>)>> {
    (2..=max_n, 1..=max_dim).prop_flat_map(|(n, d)| {
        prop::collection::vec(
            (
                prop::sample::select(vec!["A", "B", "C"]).prop_map(str::to_owned),
                prop::collection::vec(-1.0f64..1.0, d),
            ),
            n,
        )
    })
}

#[derive(Debug, Clone)]
enum Op {
    Select,
    Admit(Vec<i8>),
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn selection_matches_brute_force(
        points in grid_points(24, 6),
        ops in prop::collection::vec(prop_oneof![3 => Just(Op::Select), 1 => prop::collection::vec(-3i8..=3, 6).prop_map(Op::Admit)], 1..40),
    ) {
        let dim = points[0].len();
        let mut pool = Pool::new("A");
        let mut members = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let id = format!("m{i:03}");
            pool.seed(Sample::gold(id.clone(), "t", "A"), vector(p)).unwrap();
            members.push((id, p.clone()));
        }
        let mut used = HashSet::new();
        for (step, op) in ops.into_iter().enumerate() {
            match op {
                Op::Select => {
                    let expected = oracle::farthest_unused_pair(&members, &used);
                    match (pool.select_parents(), expected) {
                        (Ok(got), Some((a, b, d))) => {
                            prop_assert_eq!((&got.first, &got.second), (&a, &b));
                            prop_assert_eq!(got.distance, d);
                            prop_assert!(used.insert((a, b)));
                        }
                        (Err(SelectionError::PairsExhausted { .. }), None) => {}
                        (got, expected) => prop_assert!(false, "{got:?} vs {expected:?}"),
                    }
                }
                Op::Admit(raw) => {
                    let values: Vec<f64> = raw[..dim].iter().map(|&x| f64::from(x)).collect();
                    let id = format!("c{step:03}");
                    pool.admit(Sample::gold(id.clone(), "t", "A"), vector(&values)).unwrap();
                    members.push((id, values));
                }
            }
            prop_assert_eq!(pool.used_pair_count(), used.len());
        }
    }

    #[test]
    fn every_pair_is_returned_once(points in grid_points(12, 3)) {
        let mut pool = Pool::new("A");
        for (i, p) in points.iter().enumerate() {
            pool.seed(Sample::gold(format!("s{i}"), "t", "A"), vector(p)).unwrap();
        }
        let n = points.len();
        let mut seen = HashSet::new();
        let mut last = f64::INFINITY;
        while let Ok(pair) = pool.select_parents() {
            prop_assert!(pair.first < pair.second);
            prop_assert!(seen.insert((pair.first, pair.second)));
            // Without admissions distances never increase.
            prop_assert!(pair.distance <= last);
            last = pair.distance;
        }
        prop_assert_eq!(seen.len(), n * (n - 1) / 2);
    }

    #[test]
    fn distance_properties(
        a in prop::collection::vec(-10.0f64..10.0, 16),
        b in prop::collection::vec(-10.0f64..10.0, 16),
        c in prop::collection::vec(-10.0f64..10.0, 16),
    ) {
        let (va, vb, vc) = (vector(&a), vector(&b), vector(&c));
        let ab = euclidean_distance(&va, &vb).unwrap();
        prop_assert_eq!(ab.to_bits(), euclidean_distance(&vb, &va).unwrap().to_bits());
        let naive = oracle::distance(&a, &b);
        prop_assert!((ab - naive).abs() <= 1e-12 * naive.max(1.0));
        let ac = euclidean_distance(&va, &vc).unwrap();
        let bc = euclidean_distance(&vb, &vc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn finalize_counts(gold in 2usize..20, synthetic in 0usize..20) {
        let mut pool = Pool::new("A");
        for i in 0..gold {
            pool.seed(Sample::gold(format!("g{i}"), "t", "A"), vector(&[i as f64, 1.0])).unwrap();
        }
        for i in 0..synthetic {
            let mut s = Sample::gold(format!("s{i}"), "t", "A");
            s.origin = Origin::Synthetic;
            pool.admit(s, vector(&[-(i as f64), 2.0])).unwrap();
        }
        let out = pool.finalize();
        prop_assert_eq!(out.len(), pool.len() - pool.initial_ids().count());
        let initial: HashSet<&str> = pool.initial_ids().collect();
        prop_assert!(out.iter().all(|s| !initial.contains(s.id.as_str())));
    }

    #[test]
    fn aps_matches_double_loop(entries in labelled_unit_box(40, 12)) {
        prop_assume!(entries.iter().all(|(_, v)| v.iter().any(|x| *x != 0.0)));
        let c = corpus(&entries);
        let got = aps(&c).unwrap();
        prop_assert!((got - oracle::aps(&entries)).abs() <= 1e-10);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&got));

        let s = pairwise_cosines(&c).unwrap();
        let (intra_n, intra_sum) = oracle::ordered_pair_cosines(&entries, |a, b| a == b);
        let (inter_n, inter_sum) = oracle::ordered_pair_cosines(&entries, |a, b| a != b);
        prop_assert_eq!(s.intra.count * 2, intra_n);
        prop_assert_eq!(s.inter.count * 2, inter_n);
        if let Some(m) = s.intra.mean() {
            prop_assert!((m - intra_sum / intra_n as f64).abs() <= 1e-10);
        }
        if let Some(m) = s.inter.mean() {
            prop_assert!((m - inter_sum / inter_n as f64).abs() <= 1e-10);
        }
        prop_assert_eq!(s.all.count, s.intra.count + s.inter.count);
        prop_assert!((s.all.sum - (s.intra.sum + s.inter.sum)).abs() <= 1e-9);
    }

    #[test]
    fn aps_is_permutation_and_scale_invariant(
        entries in labelled_unit_box(30, 8),
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(entries.iter().all(|(_, v)| v.iter().any(|x| *x != 0.0)));
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = entries.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let base = aps(&corpus(&entries)).unwrap();
        prop_assert!((base - aps(&corpus(&shuffled)).unwrap()).abs() <= 1e-12);
        let scaled: Vec<_> = entries.iter().map(|(l, v)| (l.clone(), v.iter().map(|x| x * scale).collect())).collect();
        prop_assert!((base - aps(&corpus(&scaled)).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn cmd_matches_moment_oracle(
        x in labelled_unit_box(20, 8),
        y in labelled_unit_box(20, 8),
    ) {
        let dim = x[0].1.len().min(y[0].1.len());
        let cut = |c: &[(String, Vec<f64>)]| -> Vec<(String, Vec<f64>)> {
            c.iter().map(|(l, v)| (l.clone(), v[..dim].to_vec())).collect()
        };
        let (x, y) = (cut(&x), cut(&y));
        let (cx, cy) = (corpus(&x), corpus(&y));
        let got = cmd(&cx, &cy, 5).unwrap();
        let xs: Vec<Vec<f64>> = x.iter().map(|(_, v)| v.clone()).collect();
        let ys: Vec<Vec<f64>> = y.iter().map(|(_, v)| v.clone()).collect();
        prop_assert!((got - oracle::cmd(&xs, &ys, 5)).abs() <= 1e-9);
        prop_assert!((got - cmd(&cy, &cx, 5).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(cmd(&cx, &cx, 5).unwrap(), 0.0);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn vocabulary_matches_set_oracle(texts in prop::collection::vec("[a-cA-C .,!?'\"“”—…()-]{0,30}", 0..20)) {
        prop_assert_eq!(vocabulary_size(texts.iter().map(String::as_str)), oracle::vocabulary(&texts));
        for t in &texts {
            for tok in tokens(t) {
                prop_assert!(!tok.is_empty());
                prop_assert_eq!(tok.to_lowercase(), tok);
            }
        }
    }

    #[test]
    fn partitions_are_total(
        gene_count in 3usize..10,
        mutate in 1usize..4,
        seed in any::<u64>(),
        alternating in any::<bool>(),
    ) {
        prop_assume!(gene_count >= mutate + 2);
        let names: Vec<String> = (0..gene_count).map(|i| format!("g{i}")).collect();
        let set = GeneSet::from_names(&names).unwrap();
        let strategy = if alternating { PartitionStrategy::Alternating } else { PartitionStrategy::Random };
        let p = genes::partition(strategy, &set, mutate, seed).unwrap();
        prop_assert!(p.is_valid_for(&set));
        prop_assert_eq!(p.mutate.len(), mutate);
        prop_assert_eq!(&p, &genes::partition(strategy, &set, mutate, seed).unwrap());
    }
}

#[test]
fn hashing_embedder_batches_match_single_calls() {
    let provider = MockEmbeddingProvider::hashing(12);
    let texts: Vec<String> = (0..100).map(|i| format!("sample {i} with words {}", i * 7 % 13)).collect();
    let batch = embed(&texts, &provider, true).unwrap();
    assert_eq!(batch.len(), 100);
    for (text, got) in texts.iter().zip(&batch) {
        let single = provider.embed_batch(std::slice::from_ref(text)).unwrap().remove(0);
        let expected = vector(&single).normalized().unwrap();
        assert_eq!(got, &expected);
        assert!((got.norm() - 1.0).abs() <= 1e-6);
        assert!(got.values().iter().all(|x| x.abs() <= 1.0));
    }
}
