//! Prompt templates with `{sample1}`, `{sample2}`, `{class_name}`,
//! `{label_def}` and `{Gene[i]}` placeholders.
//!
//! A gene requirement line has the shape
//! `N. The '{Gene[i]}' of the <subject> <clause>`; when rendering, the clause
//! is rewritten from the gene's role in the partition, so the same template
//! serves any partition. With the alternating partition the bundled templates
//! render exactly as written.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Sample, TaskKind};
use crate::genes::{GenePartition, GeneRole, GeneSet};

pub const INHERIT_FROM_FIRST: &str = "should inherit from Example1;";
pub const INHERIT_FROM_SECOND: &str = "should inherit from Example2;";
pub const MUST_DIFFER: &str = "and entities must be different from the given 2 examples.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("line {line}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { line: usize, name: String },
    #[error("line {line}: placeholder {{Gene[{index}]}} out of range for {genes} genes")]
    GeneIndexOutOfRange {
        line: usize,
        index: usize,
        genes: usize,
    },
    #[error("gene {index} ({name:?}) has no requirement line")]
    MissingGeneRequirement { index: usize, name: String },
    #[error("line {line}: gene {index} already has a requirement line")]
    DuplicateGeneRequirement { line: usize, index: usize },
    #[error("line {line}: requirement numbered {found}, expected {expected}")]
    NonConsecutiveNumbering {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("partition does not match the template's gene set")]
    PartitionMismatch,
    #[error("label {0:?} has no definition")]
    MissingLabelDefinition(String),
    #[error("unknown built-in template {0:?}")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placeholder {
    Sample1,
    Sample2,
    ClassName,
    LabelDef,
    Gene(usize),
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placeholder::Sample1 => write!(f, "sample1"),
            Placeholder::Sample2 => write!(f, "sample2"),
            Placeholder::ClassName => write!(f, "class_name"),
            Placeholder::LabelDef => write!(f, "label_def"),
            Placeholder::Gene(i) => write!(f, "Gene[{i}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

/// Splits `text` into literals and `{name}` / `{name[i]}` slots. Braces that
/// do not enclose such a name are literal text.
fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                if open > 0 {
                    out.push(Segment::Literal(&rest[..open]));
                }
                out.push(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Segment::Literal(&rest[..open + 1]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    out
}

fn is_slot_name(s: &str) -> bool {
    let base = match s.find('[') {
        Some(i) => {
            let idx = &s[i + 1..];
            if !(idx.ends_with(']') && idx.len() > 1 && idx[..idx.len() - 1].bytes().all(|b| b.is_ascii_digit())) {
                return false;
            }
            &s[..i]
        }
        None => s,
    };
    let mut chars = base.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_placeholder(name: &str) -> Option<Placeholder> {
    match name {
        "sample1" => Some(Placeholder::Sample1),
        "sample2" => Some(Placeholder::Sample2),
        "class_name" => Some(Placeholder::ClassName),
        "label_def" => Some(Placeholder::LabelDef),
        _ => name
            .strip_prefix("Gene[")
            .and_then(|r| r.strip_suffix(']'))
            .and_then(|i| i.parse().ok())
            .map(Placeholder::Gene),
    }
}

/// Substitutes `{key}` slots from `bindings` in a single pass; substituted
/// text is never rescanned. Any slot without a binding is an error.
pub fn render_named(body: &str, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(body.len());
    for seg in segments(body) {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Slot(name) => match bindings.iter().find(|(k, _)| *k == name) {
                Some((_, v)) => out.push_str(v),
                None => return Err(TemplateError::UnresolvedPlaceholder(name.to_string())),
            },
        }
    }
    Ok(out)
}

fn gene_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?P<num>\d+)\.\s+The '\{Gene\[(?P<idx>\d+)\]\}' of the (?P<subject>\w+)\b")
            .expect("static regex")
    })
}

fn numbered_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?P<num>\d+)\.\s").expect("static regex"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub task_kind: TaskKind,
    pub body: String,
}

const BUILTINS: &[(&str, TaskKind, &str)] = &[
    ("agnews", TaskKind::Classification, include_str!("../../templates/agnews.txt")),
    ("stackexchange", TaskKind::Classification, include_str!("../../templates/stackexchange.txt")),
    ("chemprot", TaskKind::RelationExtraction, include_str!("../../templates/chemprot.txt")),
    ("ddi", TaskKind::RelationExtraction, include_str!("../../templates/ddi.txt")),
    ("semeval", TaskKind::RelationExtraction, include_str!("../../templates/semeval.txt")),
    ("conll04", TaskKind::RelationExtraction, include_str!("../../templates/conll04.txt")),
    ("scitldr", TaskKind::Summarization, include_str!("../../templates/scitldr.txt")),
    ("meqsum", TaskKind::Summarization, include_str!("../../templates/meqsum.txt")),
];

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, task_kind: TaskKind, body: impl Into<String>) -> Self {
        PromptTemplate {
            name: name.into(),
            task_kind,
            body: body.into(),
        }
    }

    /// Names of the bundled genetic templates.
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self, TemplateError> {
        BUILTINS
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .map(|(n, kind, body)| PromptTemplate::new(*n, *kind, strip_final_newline(body)))
            .ok_or_else(|| TemplateError::UnknownBuiltin(name.to_string()))
    }

    /// Every problem with this template for `genes`, in line order.
    pub fn diagnose(&self, genes: &GeneSet) -> Vec<TemplateError> {
        let gene_line = gene_line_regex();
        let numbered = numbered_line_regex();
        let mut errors = Vec::new();
        let mut requirement_for = vec![None::<usize>; genes.len()];
        let mut expected_number = 1usize;

        for (lineno, line) in self.body.lines().enumerate() {
            let line_no = lineno + 1;
            for seg in segments(line) {
                if let Segment::Slot(name) = seg {
                    match parse_placeholder(name) {
                        None => errors.push(TemplateError::UnknownPlaceholder {
                            line: line_no,
                            name: name.to_string(),
                        }),
                        Some(Placeholder::Gene(index)) if index >= genes.len() => {
                            errors.push(TemplateError::GeneIndexOutOfRange {
                                line: line_no,
                                index,
                                genes: genes.len(),
                            })
                        }
                        Some(_) => {}
                    }
                }
            }
            if let Some(caps) = numbered.captures(line) {
                let found: usize = caps["num"].parse().unwrap_or(0);
                if found != expected_number {
                    errors.push(TemplateError::NonConsecutiveNumbering {
                        line: line_no,
                        expected: expected_number,
                        found,
                    });
                }
                expected_number = found + 1;
            }
            if let Some(caps) = gene_line.captures(line) {
                if let Ok(index) = caps["idx"].parse::<usize>() {
                    if index < genes.len() {
                        if requirement_for[index].is_some() {
                            errors.push(TemplateError::DuplicateGeneRequirement {
                                line: line_no,
                                index,
                            });
                        } else {
                            requirement_for[index] = Some(line_no);
                        }
                    }
                }
            }
        }
        for (index, line) in requirement_for.iter().enumerate() {
            if line.is_none() {
                errors.push(TemplateError::MissingGeneRequirement {
                    index,
                    name: genes.genes()[index].name.clone(),
                });
            }
        }
        errors
    }

    /// Checks placeholder closure and gene coverage against `genes`.
    pub fn bind(self, genes: GeneSet) -> Result<BoundTemplate, TemplateError> {
        if let Some(first) = self.diagnose(&genes).into_iter().next() {
            return Err(first);
        }
        Ok(BoundTemplate {
            template: self,
            genes,
        })
    }
}

/// A template validated against the gene set it will be rendered with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundTemplate {
    template: PromptTemplate,
    genes: GeneSet,
}

impl BoundTemplate {
    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn genes(&self) -> &GeneSet {
        &self.genes
    }
}

struct Bindings<'a> {
    sample1: &'a str,
    sample2: &'a str,
    label: &'a Label,
    genes: Option<&'a GeneSet>,
}

impl Bindings<'_> {
    fn substitute(&self, text: &str, out: &mut String) -> Result<(), TemplateError> {
        for seg in segments(text) {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    let value = match parse_placeholder(name) {
                        Some(Placeholder::Sample1) => self.sample1,
                        Some(Placeholder::Sample2) => self.sample2,
                        Some(Placeholder::ClassName) => &self.label.name,
                        Some(Placeholder::LabelDef) => {
                            if self.label.definition.trim().is_empty() {
                                return Err(TemplateError::MissingLabelDefinition(
                                    self.label.name.clone(),
                                ));
                            }
                            &self.label.definition
                        }
                        Some(Placeholder::Gene(i)) => self
                            .genes
                            .and_then(|g| g.genes().get(i))
                            .map(|g| g.name.as_str())
                            .ok_or_else(|| {
                                TemplateError::UnresolvedPlaceholder(name.to_string())
                            })?,
                        None => return Err(TemplateError::UnresolvedPlaceholder(name.to_string())),
                    };
                    out.push_str(value);
                }
            }
        }
        Ok(())
    }
}

fn join_lines(lines: Vec<String>, body: &str) -> String {
    let mut out = lines.join("\n");
    if body.ends_with('\n') {
        out.push('\n');
    }
    out
}

/// Renders a crossover/mutation prompt: parent 1 as Example 1, parent 2 as
/// Example 2, and one requirement line per gene phrased by its role.
pub fn render_genetic_prompt(
    template: &BoundTemplate,
    parent_1: &Sample,
    parent_2: &Sample,
    partition: &GenePartition,
    label: &Label,
) -> Result<String, TemplateError> {
    let genes = &template.genes;
    if !partition.is_valid_for(genes) {
        return Err(TemplateError::PartitionMismatch);
    }
    let bindings = Bindings {
        sample1: &parent_1.text,
        sample2: &parent_2.text,
        label,
        genes: Some(genes),
    };
    let gene_line = gene_line_regex();
    let body = &template.template.body;
    let mut lines = Vec::new();
    for line in body.lines() {
        let mut rendered = String::with_capacity(line.len());
        match gene_line.captures(line) {
            Some(caps) => {
                let index: usize = caps["idx"]
                    .parse()
                    .map_err(|_| TemplateError::UnresolvedPlaceholder(format!("Gene[{}]", &caps["idx"])))?;
                let name = &genes.genes()[index].name;
                let clause = match partition.role_of(name) {
                    Some(GeneRole::FromParent1) => INHERIT_FROM_FIRST,
                    Some(GeneRole::FromParent2) => INHERIT_FROM_SECOND,
                    Some(GeneRole::Mutate) => MUST_DIFFER,
                    None => return Err(TemplateError::PartitionMismatch),
                };
                rendered.push_str(&format!(
                    "{}. The '{}' of the {} {}",
                    &caps["num"], name, &caps["subject"], clause
                ));
            }
            None => bindings.substitute(line, &mut rendered)?,
        }
        lines.push(rendered);
    }
    Ok(join_lines(lines, body))
}

const SIMPROMPT_RELATION: &str = include_str!("../../templates/simprompt_relation.txt");
const SIMPROMPT_CLASSIFICATION: &str = include_str!("../../templates/simprompt_classification.txt");
const SIMPROMPT_SUMMARIZATION: &str = include_str!("../../templates/simprompt_summarization.txt");

pub fn simprompt_template(task_kind: TaskKind) -> PromptTemplate {
    let body = match task_kind {
        TaskKind::RelationExtraction => SIMPROMPT_RELATION,
        TaskKind::Classification => SIMPROMPT_CLASSIFICATION,
        TaskKind::Summarization => SIMPROMPT_SUMMARIZATION,
    };
    PromptTemplate::new("simprompt", task_kind, strip_final_newline(body))
}

/// Class-conditional baseline prompt: two in-context examples plus the label
/// and its definition, no gene requirements.
pub fn render_simprompt(
    label: &Label,
    example_1: &Sample,
    example_2: &Sample,
    task_kind: TaskKind,
) -> Result<String, TemplateError> {
    let template = simprompt_template(task_kind);
    let bindings = Bindings {
        sample1: &example_1.text,
        sample2: &example_2.text,
        label,
        genes: None,
    };
    let mut out = String::with_capacity(template.body.len() + 256);
    bindings.substitute(&template.body, &mut out)?;
    Ok(out)
}
