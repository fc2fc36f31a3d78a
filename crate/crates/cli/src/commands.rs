use std::path::{Path, PathBuf};

use anyhow::Context;
use genetic_prompt_core::genes::GeneIdentificationRequest;
use genetic_prompt_core::metrics::{format_table, report};
use genetic_prompt_core::{
    identify_genes as discover, load_dataset, write_dataset, LabelSet, RunContext, RunOptions, Sample, Strategy,
};

use crate::config::{self, ConfigError, Resolved};

fn gold_path(cli: Option<&Path>, resolved: &Resolved) -> Option<PathBuf> {
    cli.map(Path::to_path_buf).or_else(|| resolved.gold.clone())
}

fn load(path: &Path, labels: &LabelSet, what: &str) -> anyhow::Result<Vec<Sample>> {
    let samples = load_dataset(path, labels).with_context(|| format!("loading {what} data from {}", path.display()))?;
    log::info!("loaded {} {what} sample(s) from {}", samples.len(), path.display());
    Ok(samples)
}

/// Up to `k` samples, taken round-robin across labels in file order.
fn spread(gold: &[Sample], labels: &LabelSet, k: usize) -> Vec<Sample> {
    let buckets: Vec<Vec<&Sample>> = labels
        .labels()
        .iter()
        .map(|l| gold.iter().filter(|s| s.label == l.name).collect())
        .collect();
    let mut picked = Vec::with_capacity(k);
    for round in 0.. {
        if picked.len() == k || buckets.iter().all(|b| b.len() <= round) {
            break;
        }
        for bucket in &buckets {
            if picked.len() == k {
                break;
            }
            if let Some(s) = bucket.get(round) {
                picked.push((*s).clone());
            }
        }
    }
    picked
}

pub fn identify_genes(config_path: &Path, gold: Option<&Path>, k: usize) -> anyhow::Result<()> {
    let resolved = config::load_resolved(config_path)?;
    let gold_path = gold_path(gold, &resolved)
        .ok_or_else(|| ConfigError::Usage("no gold data: pass --gold or set dataset.gold".into()))?;
    if k == 0 {
        return Err(ConfigError::Usage("--samples must be at least 1".into()).into());
    }
    let provider = resolved.generation_provider()?;
    let gold = load(&gold_path, &resolved.label_set, "gold")?;
    if k > gold.len() {
        log::warn!("--samples {k} exceeds the {} gold sample(s); using all of them", gold.len());
    }
    let request = GeneIdentificationRequest::new(resolved.metadata.clone(), spread(&gold, &resolved.label_set, k));
    let genes = discover(&request, provider.as_ref(), &resolved.settings, &resolved.retry)?;
    for gene in &genes {
        match &gene.description {
            Some(d) => println!("{}: {d}", gene.name),
            None => println!("{}", gene.name),
        }
    }
    log::info!("{} candidate gene(s); curate them into dataset.genes", genes.len());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub config: PathBuf,
    pub gold: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub max_concurrency: Option<usize>,
}

fn default_checkpoint(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".checkpoint.jsonl");
    out.with_file_name(name)
}

pub fn generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let mut resolved = config::load_resolved(&args.config)?;
    let run = &mut resolved.run;
    if let Some(s) = args.strategy {
        run.strategy = s;
    }
    if let Some(n) = args.n {
        run.target_per_label = n;
    }
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    run.validate()?;
    let gold_path = gold_path(args.gold.as_deref(), &resolved)
        .ok_or_else(|| ConfigError::Usage("no gold data: pass --gold or set dataset.gold".into()))?;
    let generation = resolved.generation_provider()?;
    let embedding = resolved.embedding_provider()?;
    let gold = load(&gold_path, &resolved.label_set, "gold")?;

    let (checkpoint, resume) = match (&args.resume, &args.checkpoint) {
        (Some(state), _) => (state.clone(), true),
        (None, Some(path)) => (path.clone(), false),
        (None, None) => (default_checkpoint(&args.out), false),
    };
    let ctx = RunContext {
        config: &resolved.run,
        label_set: &resolved.label_set,
        template: resolved.template.as_ref(),
        settings: &resolved.settings,
        retry: &resolved.retry,
        refusal_patterns: &resolved.refusal_patterns,
        normalize_embeddings: resolved.normalize_embeddings,
        generation: generation.as_ref(),
        embedding: embedding.as_ref(),
    };
    let options = RunOptions {
        checkpoint_path: Some(checkpoint.clone()),
        resume,
        max_concurrency: args.max_concurrency.unwrap_or(0),
        halt_after: None,
    };
    let outcome = genetic_prompt_core::run(&gold, &ctx, &options)
        .with_context(|| format!("generation failed; progress is kept in {}", checkpoint.display()))?;
    write_dataset(&outcome.samples, &args.out)?;
    for p in &outcome.progress {
        println!(
            "{}: {} accepted, {} attempt(s), {} rejected",
            p.label, p.produced, p.attempts, p.rejections
        );
    }
    println!("wrote {} sample(s) to {}", outcome.samples.len(), args.out.display());
    Ok(())
}

fn default_report(synthetic: &Path) -> PathBuf {
    let mut name = synthetic.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".metrics.json");
    synthetic.with_file_name(name)
}

pub fn metrics(
    config_path: &Path,
    synthetic: &Path,
    gold: Option<&Path>,
    no_cmd: bool,
    report_path: Option<&Path>,
) -> anyhow::Result<()> {
    let resolved = config::load_resolved(config_path)?;
    let gold_path = gold_path(gold, &resolved);
    if gold_path.is_none() && !no_cmd {
        return Err(ConfigError::Usage(
            "CMD needs gold data: pass --gold, set dataset.gold, or use --no-cmd".into(),
        )
        .into());
    }
    let embedding = resolved.embedding_provider()?;
    let synthetic_samples = load(synthetic, &resolved.label_set, "synthetic")?;
    let gold_samples = gold_path
        .map(|p| load(&p, &resolved.label_set, "gold"))
        .transpose()?;

    let mut reports = Vec::new();
    if let Some(g) = &gold_samples {
        let mut r = report(g, None, embedding.as_ref()).context("scoring gold data")?;
        r.source = "gold".into();
        reports.push(r);
    }
    let reference = gold_samples.as_deref().filter(|_| !no_cmd);
    let r = report(&synthetic_samples, reference, embedding.as_ref()).context("scoring synthetic data")?;
    reports.push(r);

    print!("{}", format_table(&reports));
    let path = report_path.map_or_else(|| default_report(synthetic), Path::to_path_buf);
    let mut body = serde_json::to_string_pretty(&reports)?;
    body.push('\n');
    std::fs::write(&path, body).with_context(|| format!("writing report {}", path.display()))?;
    log::info!("report written to {}", path.display());
    Ok(())
}

pub fn validate(config_path: &Path) -> anyhow::Result<()> {
    let resolved = config::load_resolved(config_path)?;
    println!(
        "{}: valid ({} label(s), {} gene(s), strategy {:?})",
        config_path.display(),
        resolved.label_set.len(),
        resolved.template.as_ref().map_or(0, |t| t.genes().len()),
        resolved.run.strategy
    );
    Ok(())
}
