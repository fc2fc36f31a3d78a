#![allow(dead_code)]

use std::collections::HashSet;

use genetic_prompt_core::generation::default_refusal_patterns;
use genetic_prompt_core::providers::MockScript;
use genetic_prompt_core::{
    BoundTemplate, GeneSet, GenerationSettings, Label, LabelSet, MockEmbeddingProvider,
    MockGenerationProvider, PromptTemplate, RetryPolicy, RunConfig, RunContext, Sample, TaskKind,
};

pub const EMBED_DIM: usize = 16;

/// Two-label news fixture with `per_label` gold samples each.
pub struct Fixture {
    pub labels: LabelSet,
    pub template: BoundTemplate,
    pub settings: GenerationSettings,
    pub retry: RetryPolicy,
    pub refusals: Vec<String>,
    pub gold: Vec<Sample>,
    pub embedder: MockEmbeddingProvider,
}

const WORDS: &[&str] = &[
    "market", "storm", "league", "vaccine", "election", "merger", "drought", "striker", "satellite",
    "tariff", "coach", "protest", "chip", "harvest", "orbit", "verdict",
];

impl Fixture {
    pub fn new(per_label: usize) -> Self {
        let labels = LabelSet::new(
            vec![
                Label::new("Sports", "sports events, athletes and competitions"),
                Label::new("Business", "companies, markets and the economy"),
            ],
            TaskKind::Classification,
        )
        .unwrap();
        let genes = GeneSet::from_names(&["length", "location", "style", "subtopics"]).unwrap();
        let template = PromptTemplate::builtin("agnews").unwrap().bind(genes).unwrap();
        let mut gold = Vec::new();
        for (li, label) in ["Sports", "Business"].iter().enumerate() {
            for i in 0..per_label {
                let a = WORDS[(i * 3 + li) % WORDS.len()];
                let b = WORDS[(i * 7 + 5 * li + 1) % WORDS.len()];
                gold.push(Sample::gold(
                    format!("gold-{label}-{i:03}"),
                    format!("{label} report {i}: the {a} and the {b} made headlines."),
                    *label,
                ));
            }
        }
        Fixture {
            labels,
            template,
            settings: GenerationSettings::new("mock-model"),
            retry: RetryPolicy::immediate(2),
            refusals: default_refusal_patterns(),
            gold,
            embedder: MockEmbeddingProvider::hashing(EMBED_DIM),
        }
    }

    pub fn context<'a>(&'a self, config: &'a RunConfig, generator: &'a MockGenerationProvider) -> RunContext<'a> {
        RunContext {
            config,
            label_set: &self.labels,
            template: Some(&self.template),
            settings: &self.settings,
            retry: &self.retry,
            refusal_patterns: &self.refusals,
            normalize_embeddings: true,
            generation: generator,
            embedding: &self.embedder,
        }
    }
}

/// Always answers with a text unique to the request.
pub fn echo_generator() -> MockGenerationProvider {
    MockGenerationProvider::new(MockScript {
        fallback: Some("Text: A {stream} story, draft {index}, about the {index} cup final.".into()),
        ..MockScript::default()
    })
}

pub fn small_config() -> RunConfig {
    let mut config = RunConfig::new(5);
    config.init_per_label = 3;
    config.seed = 7;
    config
}

/// Every parent must be a seeded member or an earlier offspring of the
/// same label.
pub fn provenance_closed(output: &[Sample], initial_ids: &[(String, Vec<String>)]) -> bool {
    for (label, initial) in initial_ids {
        let mut known: HashSet<&str> = initial.iter().map(String::as_str).collect();
        let mut children: Vec<&Sample> = output.iter().filter(|s| &s.label == label).collect();
        children.sort_by_key(|s| s.generation_index);
        for child in children {
            let Some((a, b)) = &child.parent_ids else {
                return false;
            };
            if a == b || !known.contains(a.as_str()) || !known.contains(b.as_str()) {
                return false;
            }
            known.insert(child.id.as_str());
        }
    }
    true
}

pub fn dataset_bytes(samples: &[Sample]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.jsonl");
    genetic_prompt_core::write_dataset(samples, &path).unwrap();
    std::fs::read(path).unwrap()
}

pub mod oracle;
