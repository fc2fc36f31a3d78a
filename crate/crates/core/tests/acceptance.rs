//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

mod common;

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{dataset_bytes, echo_generator, oracle, provenance_closed, small_config, Fixture};
use genetic_prompt_core::generation::{default_refusal_patterns, filter_response, render_genetic_prompt};
use genetic_prompt_core::genes::{partition_alternating, partition_random};
use genetic_prompt_core::metrics::pairwise_cosines;
use genetic_prompt_core::providers::{MockScript, ScriptEntry};
use genetic_prompt_core::{
    aps, cmd, intra_inter_aps, run, EmbeddedCorpus, EmbeddingVector, EvolutionError, GeneSet,
    Label, MockGenerationProvider, Origin, PromptTemplate, RunOptions, Sample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SELECTION_POOLS: usize = 100;
const SELECTION_BUDGET: Duration = Duration::from_secs(10);
const APS_TOL: f64 = 1e-10;
const DECOMPOSITION_TOL: f64 = 1e-9;
const RANDOM_CORPORA: usize = 100;
const CMD_SELF_TOL: f64 = 1e-12;
const CMD_POINT_MASS_TOL: f64 = 1e-12;
const CMD_ORACLE_TOL: f64 = 1e-9;
const CMD_SYMMETRY_TOL: f64 = 1e-12;
const PARTITION_DRAWS: usize = 10_000;
const END_TO_END_BUDGET: Duration = Duration::from_secs(5);
const SUITE_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn vector(values: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(values.to_vec()).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, grid: bool) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            if grid {
                f64::from(rng.random_range(-2i32..=2)) / 2.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect()
}

fn selection_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1ec7);
    let mut selections = 0usize;
    for pool_index in 0..SELECTION_POOLS {
        let n = rng.random_range(2..=200);
        let dim = rng.random_range(2..=64);
        // Every third pool sits on a coarse grid to force distance ties.
        let grid = pool_index % 3 == 0;
        let mut pool = genetic_prompt_core::Pool::new("A");
        let mut members = Vec::new();
        for i in 0..n {
            let id = format!("m{i:03}");
            let p = random_point(&mut rng, dim, grid);
            pool.seed(Sample::gold(id.clone(), "t", "A"), vector(&p)).unwrap();
            members.push((id, p));
        }
        let mut used = HashSet::new();
        for step in 0..8 {
            if step == 4 {
                let id = format!("c{pool_index:03}");
                let p = random_point(&mut rng, dim, grid);
                pool.admit(Sample::gold(id.clone(), "t", "A"), vector(&p)).unwrap();
                members.push((id, p));
            }
            let expected = oracle::farthest_unused_pair(&members, &used);
            match (pool.select_parents(), expected) {
                (Ok(got), Some((a, b, d))) => {
                    check(got.first == a && got.second == b && got.distance == d, || {
                        format!("pool {pool_index}: got ({}, {}), oracle ({a}, {b})", got.first, got.second)
                    })?;
                    used.insert((a, b));
                    selections += 1;
                }
                (Err(_), None) => {}
                (got, expected) => return Err(format!("pool {pool_index}: {got:?} vs oracle {expected:?}")),
            }
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < SELECTION_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{SELECTION_POOLS} pools, {selections} selections, exact ids, {elapsed:.2?}"))
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(String, Vec<f64>)> {
    (0..n)
        .map(|_| {
            let label = ["A", "B", "C"][rng.random_range(0..3)].to_string();
            let mut v = random_point(rng, dim, false);
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 0.5;
            }
            (label, v)
        })
        .collect()
}

fn embedded(entries: &[(String, Vec<f64>)]) -> EmbeddedCorpus {
    EmbeddedCorpus::new("t", entries.iter().map(|(l, v)| (l.clone(), vector(v))).collect()).unwrap()
}

fn aps_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa95);
    let mut worst: f64 = 0.0;
    for case in 0..RANDOM_CORPORA {
        let n = rng.random_range(2..=40);
        let dim = rng.random_range(1..=16);
        let entries = random_corpus(&mut rng, n, dim);
        let corpus = embedded(&entries);
        let got = aps(&corpus).map_err(|e| e.to_string())?;
        let err = (got - oracle::aps(&entries)).abs();
        worst = worst.max(err);
        check(err <= APS_TOL, || format!("corpus {case}: APS off by {err:e}"))?;

        let (intra, inter) = intra_inter_aps(&corpus).map_err(|e| e.to_string())?;
        for (got, keep) in [(intra.ok(), true), (inter.ok(), false)] {
            let (count, sum) = oracle::ordered_pair_cosines(&entries, |a, b| (a == b) == keep);
            match got {
                Some(v) => {
                    let err = (v - sum / count as f64).abs();
                    worst = worst.max(err);
                    check(err <= APS_TOL, || format!("corpus {case}: component off by {err:e}"))?;
                }
                None => check(count == 0, || format!("corpus {case}: missing component"))?,
            }
        }
        let s = pairwise_cosines(&corpus).map_err(|e| e.to_string())?;
        check(s.all.count == s.intra.count + s.inter.count, || "pair counts do not add up".into())?;
        let gap = (s.all.sum - s.intra.sum - s.inter.sum).abs();
        check(gap <= DECOMPOSITION_TOL, || format!("corpus {case}: decomposition gap {gap:e}"))?;
    }

    let hand = embedded(&[
        ("A".into(), vec![1.0, 0.0]),
        ("B".into(), vec![0.0, 1.0]),
        ("A".into(), vec![1.0, 0.0]),
    ]);
    let a = aps(&hand).unwrap();
    let (intra, inter) = intra_inter_aps(&hand).unwrap();
    let (intra, inter) = (intra.unwrap(), inter.unwrap());
    check((a - 1.0 / 3.0).abs() <= APS_TOL && intra == 1.0 && inter == 0.0, || {
        format!("hand case gave {a}, {intra}, {inter}")
    })?;
    Ok(format!("{RANDOM_CORPORA} corpora, max error {worst:.1e}; hand case 1/3, 1, 0"))
}

fn cmd_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc3d);
    let (mut worst_oracle, mut worst_sym, mut worst_self): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..RANDOM_CORPORA {
        let dim = if case % 2 == 0 { 8 } else { rng.random_range(1..=16) };
        let nx = if case % 2 == 0 { 20 } else { rng.random_range(1..=30) };
        let ny = rng.random_range(1..=30);
        let x = random_corpus(&mut rng, nx, dim);
        let y = random_corpus(&mut rng, ny, dim);
        let (cx, cy) = (embedded(&x), embedded(&y));
        let got = cmd(&cx, &cy, 5).map_err(|e| e.to_string())?;
        let xs: Vec<Vec<f64>> = x.iter().map(|(_, v)| v.clone()).collect();
        let ys: Vec<Vec<f64>> = y.iter().map(|(_, v)| v.clone()).collect();
        let err = (got - oracle::cmd(&xs, &ys, 5)).abs();
        worst_oracle = worst_oracle.max(err);
        check(err <= CMD_ORACLE_TOL, || format!("corpus {case}: oracle gap {err:e}"))?;
        let sym = (got - cmd(&cy, &cx, 5).unwrap()).abs();
        worst_sym = worst_sym.max(sym);
        check(sym <= CMD_SYMMETRY_TOL, || format!("corpus {case}: asymmetry {sym:e}"))?;
        let own = cmd(&cx, &cx, 5).unwrap().abs();
        worst_self = worst_self.max(own);
        check(own <= CMD_SELF_TOL, || format!("corpus {case}: cmd(x, x) = {own:e}"))?;
    }
    let a = embedded(&[("A".into(), vec![1.0, 0.0]), ("A".into(), vec![1.0, 0.0])]);
    let b = embedded(&[("A".into(), vec![0.0, 1.0]), ("A".into(), vec![0.0, 1.0])]);
    let point = cmd(&a, &b, 5).unwrap();
    let expected = 0.5 * 2f64.sqrt();
    check((point - expected).abs() <= CMD_POINT_MASS_TOL, || format!("point masses gave {point}"))?;
    Ok(format!(
        "{RANDOM_CORPORA} corpora, oracle {worst_oracle:.1e}, symmetry {worst_sym:.1e}, self {worst_self:.1e}; point masses {point:.5}"
    ))
}

fn partition_totality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a7);
    for draw in 0..PARTITION_DRAWS {
        let n = rng.random_range(3..=10);
        let k = rng.random_range(1..=n - 2);
        let names: Vec<String> = (0..n).map(|i| format!("gene {i}")).collect();
        let genes = GeneSet::from_names(&names).unwrap();
        let seed = rng.random::<u64>();
        let p = if draw % 2 == 0 {
            partition_random(&genes, k, seed)
        } else {
            partition_alternating(&genes, k)
        }
        .map_err(|e| e.to_string())?;
        check(p.is_valid_for(&genes) && p.mutate.len() == k, || format!("draw {draw}: {p:?}"))?;
    }
    let chemprot = GeneSet::from_names(&[
        "length",
        "voice",
        "sentence structure",
        "interaction verb",
        "modifier",
        "negation",
        "entity proximity",
    ])
    .unwrap();
    let p = partition_alternating(&chemprot, 1).unwrap();
    let names = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| chemprot.genes()[i].name.clone()).collect() };
    check(
        p.from_parent_1 == names(&[0, 2, 4]) && p.from_parent_2 == names(&[1, 3, 5]) && p.mutate == names(&[6]),
        || format!("alternating chemprot split was {p:?}"),
    )?;
    Ok(format!("{PARTITION_DRAWS} draws total; chemprot mutates gene 6 ({})", p.mutate[0]))
}

fn template_fidelity() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let cases: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("cases.json")).unwrap()).unwrap();
    let p1 = Sample::gold("p1", "First parent text with <b>markup</b> and {braces}.", "x");
    let p2 = Sample::gold("p2", "Second parent text.", "x");
    let mut checked = Vec::new();
    for name in PromptTemplate::builtin_names() {
        let case = cases.get(name).ok_or_else(|| format!("no golden case for {name}"))?;
        let genes: Vec<String> = serde_json::from_value(case["genes"].clone()).unwrap();
        let genes = GeneSet::from_names(&genes).unwrap();
        let label = Label::new(case["label"].as_str().unwrap(), case["definition"].as_str().unwrap());
        let bound = PromptTemplate::builtin(name).unwrap().bind(genes.clone()).map_err(|e| e.to_string())?;
        let part = partition_alternating(&genes, 1).unwrap();
        let rendered = render_genetic_prompt(&bound, &p1, &p2, &part, &label).map_err(|e| e.to_string())?;
        let golden = std::fs::read_to_string(dir.join(format!("{name}.txt"))).unwrap();
        check(rendered == golden, || format!("{name} differs from its golden file"))?;
        checked.push(name);
    }
    let chem = std::fs::read_to_string(dir.join("chemprot.txt")).unwrap();
    let requirements = chem.lines().filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.parse::<u8>().is_ok())).count();
    let last = chem.lines().find(|l| l.starts_with("8. ")).unwrap_or_default();
    check(requirements == 8 && last.contains("must be different"), || "chemprot structure".into())?;
    Ok(format!("{} templates match golden files: {}", checked.len(), checked.join(", ")))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let fx = Fixture::new(3);
    let config = small_config();
    let out = run(&fx.gold, &fx.context(&config, &echo_generator()), &RunOptions::default()).map_err(|e| e.to_string())?;
    for label in ["Sports", "Business"] {
        let n = out.samples.iter().filter(|s| s.label == label).count();
        check(n == 5, || format!("{label} has {n} samples"))?;
    }
    let gold: HashSet<&str> = fx.gold.iter().map(|s| s.id.as_str()).collect();
    check(
        out.samples.iter().all(|s| s.origin == Origin::Synthetic && !gold.contains(s.id.as_str())),
        || "gold sample in output".into(),
    )?;
    let initial: Vec<(String, Vec<String>)> = out.progress.iter().map(|p| (p.label.clone(), p.initial_ids.clone())).collect();
    check(provenance_closed(&out.samples, &initial), || "parent outside pool history".into())?;
    let again = run(&fx.gold, &fx.context(&config, &echo_generator()), &RunOptions::default()).map_err(|e| e.to_string())?;
    check(dataset_bytes(&out.samples) == dataset_bytes(&again.samples), || "reruns differ".into())?;
    let elapsed = start.elapsed();
    check(elapsed < END_TO_END_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("2 labels x 5, 0 gold, provenance closed, reruns identical, {elapsed:.2?}"))
}

fn crash_resume() -> Outcome {
    let fx = Fixture::new(3);
    let config = small_config();
    let baseline = run(&fx.gold, &fx.context(&config, &echo_generator()), &RunOptions::default()).map_err(|e| e.to_string())?;
    let expected = dataset_bytes(&baseline.samples);
    let total = baseline.samples.len();
    let ks = [1, config.target_per_label - 1, total / 2, total - 1];
    for k in ks {
        let dir = tempfile::tempdir().unwrap();
        let mut options = RunOptions {
            checkpoint_path: Some(dir.path().join("state.jsonl")),
            resume: false,
            max_concurrency: 1,
            halt_after: Some(k),
        };
        match run(&fx.gold, &fx.context(&config, &echo_generator()), &options) {
            Err(EvolutionError::Halted { accepted }) if accepted == k => {}
            other => return Err(format!("k = {k}: run did not halt ({:?})", other.map(|o| o.samples.len()))),
        }
        options.halt_after = None;
        options.resume = true;
        let resumed = run(&fx.gold, &fx.context(&config, &echo_generator()), &options).map_err(|e| e.to_string())?;
        check(dataset_bytes(&resumed.samples) == expected, || format!("k = {k}: resumed output differs"))?;
    }
    Ok(format!("halted at k in {ks:?} of {total}; resumed output byte-identical"))
}

fn refusal_filtering() -> Outcome {
    let patterns = default_refusal_patterns();
    for refusal in ["I cannot do that for you.", "I am just a large language model."] {
        check(filter_response(refusal, &patterns).is_none(), || format!("{refusal:?} passed the filter"))?;
    }
    // R = refusal, V = valid: R V R R V V R V V has 5 valid in 9 attempts.
    let plan = "RVRRVVRVV";
    let entries: Vec<ScriptEntry> = plan
        .chars()
        .enumerate()
        .map(|(i, c)| match (c, i % 2) {
            ('R', 0) => ScriptEntry::Text("I cannot do that for you.".into()),
            ('R', _) => ScriptEntry::Text("I am just a large language model.".into()),
            _ => ScriptEntry::Text(format!("Text: valid completion number {i}.")),
        })
        .collect();
    let generator = MockGenerationProvider::new(MockScript {
        completions: entries,
        ..MockScript::default()
    });
    let fx = Fixture::new(3);
    let config = small_config();
    let out = run(&fx.gold, &fx.context(&config, &generator), &RunOptions::default()).map_err(|e| e.to_string())?;
    for p in &out.progress {
        check(p.produced == 5 && p.attempts == 9 && p.rejections == 4, || format!("{p:?}"))?;
    }
    check(generator.requests().len() == 18, || "unexpected request count".into())?;
    check(out.samples.iter().all(|s| !s.text.contains("language model")), || "refusal leaked".into())?;
    Ok("both refusals rejected; 5 accepted per label in 9 attempts with 4 refusals".into())
}

fn main() -> ExitCode {
    let suite_start = Instant::now();
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("selection oracle equivalence", selection_oracle),
        ("APS correctness", aps_correctness),
        ("CMD correctness", cmd_correctness),
        ("partition totality", partition_totality),
        ("template fidelity", template_fidelity),
        ("end-to-end run under mocks", end_to_end),
        ("crash-resume equivalence", crash_resume),
        ("refusal filtering", refusal_filtering),
    ];
    let mut failures = 0;
    for (name, criterion) in criteria {
        let outcome = std::panic::catch_unwind(criterion).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failures += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    let elapsed = suite_start.elapsed();
    if elapsed < SUITE_BUDGET {
        println!("PASS  offline suite budget: acceptance ran in {elapsed:.2?} with mock providers only (limit {SUITE_BUDGET:?})");
    } else {
        failures += 1;
        println!("FAIL  offline suite budget: acceptance alone took {elapsed:.2?}");
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
