//! Prompt composition for the six generation operators and the insight
//! extraction step, plus parsing of generator responses.
//!
//! Templates are plain text with `{{name}}` placeholders. The built-in set is
//! compiled in; a template directory can override any of them, either for
//! all tasks (`<dir>/<key>.txt`) or for one task (`<dir>/<task_id>/<key>.txt`).
//!
//! Placeholders: `{{task_description}}`, `{{function_name}}`, `{{io_spec}}`,
//! `{{parents}}`, `{{parent_count}}`, `{{insights}}`, `{{directive}}`,
//! `{{regime_hint}}` and, for extraction, `{{elites}}`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::insights::{Insight, InsightId};
use crate::navigator::Regime;
use crate::population::Heuristic;

pub const INSIGHT_HEADER: &str = "Consider these successful design principles I've observed recently:";
pub const REGIME_SENTENCE: &str = "Depending on the regime, try significantly different parameter values (focus_exploration), or fine‑tune existing ones (focus_exploitation), or combine both strategies (balanced_search).";

/// Key used in the header of extraction prompts.
pub const EXTRACT_TAG: &str = "EXTRACT";

/// Max principles kept from one extraction response.
pub const MAX_EXTRACTED: usize = 2;
/// Minimum word count for an extracted principle.
pub const MIN_PRINCIPLE_WORDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    I1,
    E1,
    E2,
    M1,
    M2,
    M3,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [Strategy::I1, Strategy::E1, Strategy::E2, Strategy::M1, Strategy::M2, Strategy::M3];
    /// Operators fired every generation, in slot order.
    pub const EVOLUTION: [Strategy; 5] = [Strategy::E1, Strategy::E2, Strategy::M1, Strategy::M2, Strategy::M3];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::I1 => "I1",
            Strategy::E1 => "E1",
            Strategy::E2 => "E2",
            Strategy::M1 => "M1",
            Strategy::M2 => "M2",
            Strategy::M3 => "M3",
        }
    }

    fn template_key(self) -> &'static str {
        match self {
            Strategy::I1 => "i1",
            Strategy::E1 => "e1",
            Strategy::E2 => "e2",
            Strategy::M1 => "m1",
            Strategy::M2 => "m2",
            Strategy::M3 => "m3",
        }
    }

    /// Number of parents the operator consumes, given the recombination
    /// arity `k` used by E1/E2.
    pub fn parent_arity(self, k: usize) -> usize {
        match self {
            Strategy::I1 => 0,
            Strategy::E1 | Strategy::E2 => k,
            Strategy::M1 | Strategy::M2 | Strategy::M3 => 1,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy '{s}'"))
    }
}

/// Header line that tags every prompt with its operator.
pub fn header(tag: &str) -> String {
    format!("<!-- strategy: {tag} -->")
}

/// Reads the operator tag back out of a prompt header.
pub fn header_tag(prompt: &str) -> Option<&str> {
    let line = prompt.lines().next()?.trim();
    line.strip_prefix("<!-- strategy:")?.strip_suffix("-->").map(str::trim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub function_name: String,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    #[serde(default)]
    pub extra_constraints: String,
}

impl TaskSpec {
    pub fn io_spec(&self) -> String {
        let quote = |names: &[String]| names.iter().map(|n| format!("'{n}'")).collect::<Vec<_>>().join(", ");
        let mut s = format!(
            "This function should accept {} input(s): {}.\nThe function should return {} output(s): {}.",
            self.input_names.len(),
            quote(&self.input_names),
            self.output_names.len(),
            quote(&self.output_names),
        );
        if !self.extra_constraints.trim().is_empty() {
            s.push('\n');
            s.push_str(self.extra_constraints.trim());
        }
        s
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("{strategy} needs {expected} parent(s), got {got}")]
    Arity { strategy: Strategy, expected: usize, got: usize },
    #[error("no template '{key}' for task '{task_id}'")]
    MissingTemplate { key: String, task_id: String },
    #[error("unresolved placeholder in template '{key}': {placeholder}")]
    Unresolved { key: String, placeholder: String },
    #[error("cannot read template directory: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseError {
    NoThought,
    NoCode,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::NoThought => f.write_str("no brace-enclosed description in response"),
            ParseError::NoCode => f.write_str("no code in response"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub strategy: String,
    pub body: String,
    pub insight_ids: Vec<InsightId>,
    pub directive: String,
    pub regime: Regime,
    pub task_id: String,
}

/// Template lookup keyed by template name and task id.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    generic: BTreeMap<String, String>,
    per_task: BTreeMap<(String, String), String>,
}

const BUILTIN: [(&str, &str); 7] = [
    ("i1", include_str!("../templates/i1.txt")),
    ("e1", include_str!("../templates/e1.txt")),
    ("e2", include_str!("../templates/e2.txt")),
    ("m1", include_str!("../templates/m1.txt")),
    ("m2", include_str!("../templates/m2.txt")),
    ("m3", include_str!("../templates/m3.txt")),
    ("extract", include_str!("../templates/extract.txt")),
];

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            generic: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            per_task: BTreeMap::new(),
        }
    }

    pub fn empty() -> Self {
        TemplateSet { generic: BTreeMap::new(), per_task: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: &str, task_id: Option<&str>, text: impl Into<String>) {
        match task_id {
            Some(t) => self.per_task.insert((key.to_string(), t.to_string()), text.into()),
            None => self.generic.insert(key.to_string(), text.into()),
        };
    }

    /// Layers `<dir>/*.txt` and `<dir>/<task_id>/*.txt` over the current set.
    pub fn load_overrides(&mut self, dir: &Path) -> Result<(), PromptError> {
        let io = |e: std::io::Error| PromptError::Io(format!("{}: {e}", dir.display()));
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.is_dir() {
                let task = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                for inner in std::fs::read_dir(&path).map_err(io)? {
                    let p = inner.map_err(io)?.path();
                    if let Some(key) = template_key(&p) {
                        let text = std::fs::read_to_string(&p).map_err(io)?;
                        self.insert(&key, Some(&task), text);
                    }
                }
            } else if let Some(key) = template_key(&path) {
                let text = std::fs::read_to_string(&path).map_err(io)?;
                self.insert(&key, None, text);
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str, task_id: &str) -> Result<&str, PromptError> {
        self.per_task
            .get(&(key.to_string(), task_id.to_string()))
            .or_else(|| self.generic.get(key))
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTemplate { key: key.to_string(), task_id: task_id.to_string() })
    }
}

fn template_key(path: &Path) -> Option<String> {
    if path.extension()? != "txt" {
        return None;
    }
    Some(path.file_stem()?.to_str()?.to_string())
}

/// Replaces placeholders; a line holding only a placeholder that expands to
/// nothing is dropped.
fn render(key: &str, template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = Vec::new();
    for line in template.lines() {
        let trimmed = line.trim();
        if let Some((_, v)) = values.iter().find(|(name, _)| trimmed == format!("{{{{{name}}}}}")) {
            if v.is_empty() {
                continue;
            }
        }
        let mut rendered = line.to_string();
        for (name, value) in values {
            rendered = rendered.replace(&format!("{{{{{name}}}}}"), value);
        }
        out.push(rendered);
    }
    let mut text = out.join("\n");
    while text.contains("\n\n\n") {
        text = text.replace("\n\n\n", "\n\n");
    }
    if let Some(start) = text.find("{{") {
        let end = text[start..].find("}}").map_or(text.len(), |e| start + e + 2);
        return Err(PromptError::Unresolved { key: key.to_string(), placeholder: text[start..end].to_string() });
    }
    Ok(text.trim_end().to_string() + "\n")
}

fn render_parents(strategy: Strategy, parents: &[&Heuristic]) -> String {
    match strategy {
        Strategy::I1 => String::new(),
        Strategy::E1 | Strategy::E2 => parents
            .iter()
            .enumerate()
            .map(|(i, p)| format!("No.{} algorithm and the corresponding code are:\n{}\n{}", i + 1, p.thought.trim(), p.code.trim_end()))
            .collect::<Vec<_>>()
            .join("\n"),
        Strategy::M1 | Strategy::M2 => {
            let p = parents[0];
            format!("Algorithm description: {}\nCode:\n{}", p.thought.trim(), p.code.trim_end())
        }
        Strategy::M3 => format!("Code:\n{}", parents[0].code.trim_end()),
    }
}

fn render_insights(insights: &[Insight]) -> String {
    if insights.is_empty() {
        return String::new();
    }
    let mut s = INSIGHT_HEADER.to_string();
    for k in insights {
        s.push_str("\n- ");
        s.push_str(k.text.trim());
    }
    s
}

pub fn regime_hint(regime: Regime) -> String {
    format!("Current regime: {}. {}", regime.prompt_mode(), REGIME_SENTENCE)
}

/// Renders the operator template into a generator prompt.
pub fn compose(
    templates: &TemplateSet,
    strategy: Strategy,
    recombination_arity: usize,
    task: &TaskSpec,
    parents: &[&Heuristic],
    insights: &[Insight],
    directive: &str,
    regime: Regime,
) -> Result<ComposedPrompt, PromptError> {
    let expected = strategy.parent_arity(recombination_arity);
    if parents.len() != expected {
        return Err(PromptError::Arity { strategy, expected, got: parents.len() });
    }
    let key = strategy.template_key();
    let template = templates.get(key, &task.task_id)?;
    let parent_block = render_parents(strategy, parents);
    let parent_count = parents.len().to_string();
    let io_spec = task.io_spec();
    let insight_block = render_insights(insights);
    let hint = regime_hint(regime);
    let rendered = render(
        key,
        template,
        &[
            ("task_description", task.description.trim()),
            ("function_name", &task.function_name),
            ("io_spec", &io_spec),
            ("parents", &parent_block),
            ("parent_count", &parent_count),
            ("insights", &insight_block),
            ("directive", directive),
            ("regime_hint", &hint),
        ],
    )?;
    Ok(ComposedPrompt {
        strategy: strategy.tag().to_string(),
        body: format!("{}\n{}", header(strategy.tag()), rendered),
        insight_ids: insights.iter().map(|k| k.id).collect(),
        directive: directive.to_string(),
        regime,
        task_id: task.task_id.clone(),
    })
}

/// Number of elites passed to extraction: the top 30% of the population,
/// at least one.
pub fn elite_count(population_size: usize) -> usize {
    (population_size * 3).div_ceil(10).max(1)
}

pub fn compose_insight_extraction(templates: &TemplateSet, task_id: &str, elites: &[&Heuristic]) -> Result<String, PromptError> {
    let template = templates.get("extract", task_id)?;
    let block = elites
        .iter()
        .enumerate()
        .map(|(i, h)| format!("Algorithm {}: {}\n{}", i + 1, h.thought.trim(), h.code.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n");
    let body = render("extract", template, &[("elites", &block)])?;
    Ok(format!("{}\n{}", header(EXTRACT_TAG), body))
}

/// Interior of the first balanced `{...}` span.
fn first_brace_span(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    for (i, c) in raw[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start + 1..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_fenced_block(raw: &str) -> Option<String> {
    let start = raw.find("```")?;
    let after = &raw[start + 3..];
    // skip the info string (e.g. "python")
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(body[..end].trim_end().to_string())
}

/// Extracts program text: the first fenced block, or everything from the
/// first line that opens with an import or the function definition.
pub fn extract_code(raw: &str, function_name: &str) -> Option<String> {
    if let Some(code) = first_fenced_block(raw) {
        return (!code.trim().is_empty()).then_some(code);
    }
    let def = format!("def {function_name}");
    let lines: Vec<&str> = raw.lines().collect();
    let start = lines.iter().position(|l| {
        let l = l.trim_start();
        l.starts_with(&def) || l.starts_with("import ") || l.starts_with("from ")
    })?;
    let code = lines[start..].join("\n").trim_end().to_string();
    (!code.is_empty()).then_some(code)
}

/// Splits a response into its brace-enclosed thought and its code.
pub fn parse_heuristic_response(raw: &str, function_name: &str) -> Result<(String, String), ParseError> {
    let code = extract_code(raw, function_name);
    // look for the thought outside the code so braces in code are not taken
    let prose = match raw.find("```") {
        Some(i) => &raw[..i],
        None => raw,
    };
    let thought = first_brace_span(prose)
        .or_else(|| first_brace_span(raw))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string);
    match (thought, code) {
        (Some(t), Some(c)) => Ok((t, c)),
        (None, _) => Err(ParseError::NoThought),
        (Some(_), None) => Err(ParseError::NoCode),
    }
}

/// Bullet or line separated principles, each with at least four words, at
/// most two.
pub fn parse_insight_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_ascii_digit() || c == '.' || c == ')')
                .trim()
                .trim_matches(|c| c == '*' || c == '_')
                .trim()
                .to_string()
        })
        .filter(|l| l.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).count() >= MIN_PRINCIPLE_WORDS)
        .take(MAX_EXTRACTED)
        .collect()
}
