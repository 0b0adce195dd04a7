//! Prompt templates (see `prompts/README.md`) and their renderers.

use std::sync::LazyLock;

use regex::{Captures, Regex};

/// Bump when any template text changes.
pub const TEMPLATE_VERSION: u32 = 1;

const SELECTOR: &str = include_str!("../prompts/selector.txt");
const SELECTOR_REMINDER: &str = include_str!("../prompts/selector_reminder.txt");
const AGGREGATOR: &str = include_str!("../prompts/aggregator.txt");
const CONTINUATION: &str = include_str!("../prompts/continuation.txt");

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

/// Substitutes `{key}` placeholders in one pass; values are never re-scanned,
/// so user text containing braces is inserted verbatim.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    PLACEHOLDER
        .replace_all(template, |caps: &Captures| {
            let key = &caps[1];
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

/// Anonymous label for the 1-based candidate position `i`.
pub fn label(i: usize) -> String {
    format!("LLM{i}")
}

/// English word for small counts ("five"), digits above twenty.
pub fn count_words(n: usize) -> String {
    const WORDS: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
        "nineteen", "twenty",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

/// `[LLM1, LLM2, …, LLMn]`
pub fn format_line(n: usize) -> String {
    let labels: Vec<String> = (1..=n).map(label).collect();
    format!("[{}]", labels.join(", "))
}

/// Selector prompt over `(label, boot_text)` pairs, listed in the given order.
pub fn render_selector(query: &str, candidates: &[(String, String)]) -> String {
    let blocks: String = candidates
        .iter()
        .map(|(l, text)| format!("\n{l}: {text}\n"))
        .collect::<Vec<_>>()
        .join("");
    let blocks = blocks.trim_end_matches('\n');
    fill(
        SELECTOR,
        &[
            ("count_words", &count_words(candidates.len())),
            ("format_line", &format_line(candidates.len())),
            ("query", query),
            ("candidates", blocks),
        ],
    )
}

pub fn render_selector_reminder(n: usize) -> String {
    fill(SELECTOR_REMINDER, &[("format_line", &format_line(n))])
}

/// Aggregator prompt; answers are labelled `LLM1`, `LLM2`, … in input order.
pub fn render_aggregator(query: &str, answers: &[&str]) -> String {
    let blocks: String = answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("\n{}'s answer: {a}\n", label(i + 1)))
        .collect();
    fill(AGGREGATOR, &[("answers", &blocks), ("query", query)])
}

/// User turn for layers after the first.
pub fn render_continuation(query: &str, previous: &str) -> String {
    fill(CONTINUATION, &[("query", query), ("previous", previous)])
}
