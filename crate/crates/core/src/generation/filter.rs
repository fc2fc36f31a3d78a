//! Post-processing of raw completions: refusal rejection and scaffold
//! stripping.

/// Case-insensitive substrings that mark a refusal rather than data.
pub const DEFAULT_REFUSAL_PATTERNS: &[&str] = &[
    "I cannot do that for you",
    "I am just a large language model",
    "I'm just a large language model",
    "as an AI language model",
    "as an AI model",
    "I can't help with that",
    "I can't assist with",
    "I cannot assist with",
    "I'm sorry, but I can't",
    "I'm sorry, but I cannot",
];

/// Labels providers tend to echo from the end of the prompt.
const SCAFFOLD_LABELS: &[&str] = &[
    "text:",
    "output:",
    "sentence:",
    "article:",
    "question:",
    "response:",
];

const QUOTE_PAIRS: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`')];

pub fn default_refusal_patterns() -> Vec<String> {
    DEFAULT_REFUSAL_PATTERNS.iter().map(|s| s.to_string()).collect()
}

fn normalize_for_matching(s: &str) -> String {
    s.to_lowercase().replace(['’', '‘'], "'")
}

pub fn is_refusal(raw: &str, refusal_patterns: &[String]) -> bool {
    let haystack = normalize_for_matching(raw);
    refusal_patterns
        .iter()
        .map(|p| normalize_for_matching(p))
        .any(|p| !p.trim().is_empty() && haystack.contains(p.trim()))
}

fn strip_scaffold_label(s: &str) -> Option<&str> {
    SCAFFOLD_LABELS.iter().find_map(|label| {
        let head = s.get(..label.len())?;
        head.eq_ignore_ascii_case(label).then(|| s[label.len()..].trim())
    })
}

fn strip_quotes(s: &str) -> Option<&str> {
    QUOTE_PAIRS.iter().find_map(|&(open, close)| {
        let inner = s.strip_prefix(open)?.strip_suffix(close)?;
        Some(inner.trim())
    })
}

/// Returns the usable text of a completion, or `None` when it is empty or
/// matches a refusal pattern. Leading scaffold labels and enclosing quotes
/// are stripped until neither applies, so the function is idempotent.
pub fn filter_response(raw: &str, refusal_patterns: &[String]) -> Option<String> {
    if is_refusal(raw, refusal_patterns) {
        return None;
    }
    let mut text = raw.trim();
    loop {
        if let Some(rest) = strip_scaffold_label(text) {
            text = rest;
        } else if let Some(rest) = strip_quotes(text) {
            text = rest;
        } else {
            break;
        }
    }
    (!text.is_empty()).then(|| text.to_string())
}

/// Marker separating document and summary in summarization outputs.
pub const SUMMARY_MARKER: &str = "Summary:";

/// Splits a summarization completion at the first `Summary:` marker
/// (case-insensitive) into a `(document, summary)` pair. Both halves must be
/// non-empty.
pub fn split_summary(text: &str) -> Option<(String, String)> {
    let lower = text.to_ascii_lowercase();
    let at = lower.find(&SUMMARY_MARKER.to_ascii_lowercase())?;
    let document = text[..at].trim();
    let document = strip_scaffold_label(document)
        .or_else(|| {
            ["abstract:", "document:"].iter().find_map(|label| {
                let head = document.get(..label.len())?;
                head.eq_ignore_ascii_case(label)
                    .then(|| document[label.len()..].trim())
            })
        })
        .unwrap_or(document);
    let summary = text[at + SUMMARY_MARKER.len()..].trim();
    if document.is_empty() || summary.is_empty() {
        return None;
    }
    Some((document.to_string(), summary.to_string()))
}

/// Canonical single-text form of a document/summary pair.
pub fn join_summary(document: &str, summary: &str) -> String {
    format!("{document}\n{SUMMARY_MARKER} {summary}")
}
