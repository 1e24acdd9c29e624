use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::clamp_confidence;
use super::options::OptionSet;

/// The seven sections of a self-critique reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    InitialAnswer,
    InitialReasoning,
    InitialConfidence,
    CritiqueReasoning,
    CritiqueConfidence,
    FinalAnswer,
    FinalConfidence,
}

impl Section {
    const ALL: [Section; 7] = [
        Section::InitialAnswer,
        Section::InitialReasoning,
        Section::InitialConfidence,
        Section::CritiqueReasoning,
        Section::CritiqueConfidence,
        Section::FinalAnswer,
        Section::FinalConfidence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::InitialAnswer => "initial_answer",
            Section::InitialReasoning => "initial_reasoning",
            Section::InitialConfidence => "initial_confidence",
            Section::CritiqueReasoning => "critique_reasoning",
            Section::CritiqueConfidence => "critique_confidence",
            Section::FinalAnswer => "final_answer",
            Section::FinalConfidence => "final_confidence",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("unparseable self-critique response: no usable {0} section")]
    UnparseableResponse(Section),
    #[error("{section} {value:?} does not name any option")]
    AnswerNotInOptions { section: Section, value: String },
}

/// Parsed structured single-agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCritiqueResponse {
    pub initial_answer: String,
    pub initial_reasoning: String,
    pub initial_confidence: f64,
    pub critique_reasoning: String,
    pub critique_confidence: f64,
    pub final_answer: String,
    pub final_confidence: f64,
    pub raw_text: String,
}

// Anchors tried in the strict pass; longer labels must come first in the
// alternation so "self-critique confidence" is not read as "self-critique".
const STRICT_ANCHORS: &[(&str, Section)] = &[
    ("self-critique confidence", Section::CritiqueConfidence),
    ("self critique confidence", Section::CritiqueConfidence),
    ("disagreement confidence", Section::CritiqueConfidence),
    ("critique confidence", Section::CritiqueConfidence),
    ("initial confidence", Section::InitialConfidence),
    ("final confidence", Section::FinalConfidence),
    ("initial reasoning", Section::InitialReasoning),
    ("initial answer", Section::InitialAnswer),
    ("final answer", Section::FinalAnswer),
    ("self-critique", Section::CritiqueReasoning),
    ("self critique", Section::CritiqueReasoning),
];

const LENIENT_ANCHORS: &[(&str, Section)] = &[
    ("forced disagreement confidence", Section::CritiqueConfidence),
    ("counter-reasoning confidence", Section::CritiqueConfidence),
    ("confidence in final answer", Section::FinalConfidence),
    ("self-critique reasoning", Section::CritiqueReasoning),
    ("step-by-step reasoning", Section::InitialReasoning),
    ("negative confidence", Section::CritiqueConfidence),
    ("forced disagreement", Section::CritiqueReasoning),
    ("overall confidence", Section::FinalConfidence),
    ("counter-reasoning", Section::CritiqueReasoning),
    ("counter-argument", Section::CritiqueReasoning),
    ("counterargument", Section::CritiqueReasoning),
    ("chain of thought", Section::InitialReasoning),
    ("initial choice", Section::InitialAnswer),
    ("final decision", Section::FinalAnswer),
    ("justification", Section::InitialReasoning),
    ("final choice", Section::FinalAnswer),
    ("disagreement", Section::CritiqueReasoning),
    ("reasoning", Section::InitialReasoning),
    ("critique", Section::CritiqueReasoning),
];

fn anchor_regex(anchors: &[&[(&str, Section)]]) -> Regex {
    let mut labels: Vec<&str> = anchors.iter().flat_map(|a| a.iter().map(|(l, _)| *l)).collect();
    labels.sort_by_key(|l| std::cmp::Reverse(l.len()));
    let alternation = labels.iter().map(|l| regex::escape(l)).collect::<Vec<_>>().join("|");
    // Optional list/markdown decoration, the label, an optional
    // parenthetical like "(0-100)", then a ':' or '-' separator.
    let pattern = format!(
        r"(?i)^[\s>#*\-]*(?:\d+[.)]\s*)?\**\s*({alternation})\s*\**\s*(?:\([^)\n]*\))?\s*\**\s*[:\-–]\s*\**(.*)$"
    );
    Regex::new(&pattern).expect("anchor regex")
}

fn strict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| anchor_regex(&[STRICT_ANCHORS]))
}

fn lenient_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| anchor_regex(&[STRICT_ANCHORS, LENIENT_ANCHORS]))
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?|\.\d+)\s*(%|/\s*100\b)?").expect("static regex"))
}

fn inline_confidence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)confidence(?:\s+score)?(?:\s+(?:of|is|at))?\s*[:=]?\s*(\d+(?:\.\d+)?|\.\d+)\s*(%|/\s*100\b)?")
            .expect("static regex")
    })
}

fn section_for(label: &str, tables: &[&[(&str, Section)]]) -> Option<Section> {
    let lower = label.to_lowercase();
    tables
        .iter()
        .flat_map(|t| t.iter())
        .find(|(l, _)| *l == lower)
        .map(|(_, s)| *s)
}

/// Split the reply into labeled sections. The first occurrence of a label wins.
fn segment(raw: &str, re: &Regex, tables: &[&[(&str, Section)]]) -> Vec<(Section, String)> {
    let mut found: Vec<(Section, Vec<String>)> = Vec::new();
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some(caps) = re.captures(line) {
            if let Some(section) = section_for(&caps[1], tables) {
                if found.iter().any(|(s, _)| *s == section) {
                    // Repeated label: stop collecting into the earlier section.
                    current = None;
                    continue;
                }
                let first = caps[2].trim().trim_end_matches("**").trim().to_string();
                found.push((section, vec![first]));
                current = Some(found.len() - 1);
                continue;
            }
        }
        if let Some(i) = current {
            found[i].1.push(line.to_string());
        }
    }
    found
        .into_iter()
        .map(|(s, lines)| (s, lines.join("\n").trim().to_string()))
        .collect()
}

/// Normalize a confidence number to a probability, then clamp.
///
/// Values at most 1 pass through; values in (1, 100] are percentages. An
/// explicit percent sign always means percent. Anything else is rejected.
pub fn normalize_confidence(value: f64, percent: bool) -> Option<f64> {
    if !value.is_finite() || value < 0.0 {
        return None;
    }
    let p = if percent {
        if value > 100.0 {
            return None;
        }
        value / 100.0
    } else if value <= 1.0 {
        value
    } else if value <= 100.0 {
        value / 100.0
    } else {
        return None;
    };
    Some(clamp_confidence(p))
}

fn parse_number(text: &str, re: &Regex) -> Option<f64> {
    let caps = re.captures(text)?;
    let value: f64 = caps[1].parse().ok()?;
    normalize_confidence(value, caps.get(2).is_some())
}

/// Parse a structured self-critique reply.
///
/// Sections are located by labeled lines ("Initial answer:", "Self-critique:",
/// "Final confidence:" ...) in any order. A strict label set is tried first,
/// then a wider set of synonyms; confidences missing as their own line are
/// looked for inside the matching reasoning section. A final confidence that
/// is never stated is taken from the side the final answer agrees with: the
/// initial confidence when the answer is unchanged, otherwise the critique's.
pub fn parse_self_critique(raw: &str, options: &OptionSet) -> Result<SelfCritiqueResponse, ParseError> {
    let strict = segment(raw, strict_re(), &[STRICT_ANCHORS]);
    let sections = if Section::ALL.iter().all(|s| strict.iter().any(|(f, _)| f == s)) {
        strict
    } else {
        segment(raw, lenient_re(), &[STRICT_ANCHORS, LENIENT_ANCHORS])
    };
    let get = |s: Section| {
        sections
            .iter()
            .find(|(f, _)| *f == s)
            .map(|(_, v)| v.as_str())
            .filter(|v| !v.is_empty())
    };

    let resolve = |s: Section| -> Result<String, ParseError> {
        let text = get(s).ok_or(ParseError::UnparseableResponse(s))?;
        let first_line = text.lines().next().unwrap_or_default();
        options
            .resolve(first_line)
            .or_else(|| options.resolve(text))
            .map(str::to_string)
            .ok_or_else(|| ParseError::AnswerNotInOptions {
                section: s,
                value: first_line.to_string(),
            })
    };

    let initial_answer = resolve(Section::InitialAnswer)?;
    let initial_reasoning = get(Section::InitialReasoning)
        .ok_or(ParseError::UnparseableResponse(Section::InitialReasoning))?
        .to_string();
    let initial_confidence = get(Section::InitialConfidence)
        .and_then(|t| parse_number(t, number_re()))
        .or_else(|| parse_number(&initial_reasoning, inline_confidence_re()))
        .ok_or(ParseError::UnparseableResponse(Section::InitialConfidence))?;
    let critique_reasoning = get(Section::CritiqueReasoning)
        .ok_or(ParseError::UnparseableResponse(Section::CritiqueReasoning))?
        .to_string();
    let critique_confidence = get(Section::CritiqueConfidence)
        .and_then(|t| parse_number(t, number_re()))
        .or_else(|| parse_number(&critique_reasoning, inline_confidence_re()))
        .ok_or(ParseError::UnparseableResponse(Section::CritiqueConfidence))?;
    let final_answer = resolve(Section::FinalAnswer)?;
    let final_confidence = match get(Section::FinalConfidence) {
        Some(t) => parse_number(t, number_re()).ok_or(ParseError::UnparseableResponse(Section::FinalConfidence))?,
        None if final_answer == initial_answer => initial_confidence,
        None => critique_confidence,
    };

    Ok(SelfCritiqueResponse {
        initial_answer,
        initial_reasoning: strip_inline_confidence(&initial_reasoning),
        initial_confidence,
        critique_reasoning: strip_inline_confidence(&critique_reasoning),
        critique_confidence,
        final_answer,
        final_confidence,
        raw_text: raw.to_string(),
    })
}

fn strip_inline_confidence(text: &str) -> String {
    // Leave reasoning text untouched unless the confidence was written inline
    // on its own trailing line; that line is protocol, not reasoning.
    let mut lines: Vec<&str> = text.lines().collect();
    while let Some(last) = lines.last() {
        let t = last.trim().to_lowercase();
        if t.starts_with("confidence") && inline_confidence_re().is_match(last) {
            lines.pop();
        } else {
            break;
        }
    }
    lines.join("\n").trim().to_string()
}
