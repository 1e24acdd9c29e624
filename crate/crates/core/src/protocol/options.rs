use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// One labeled multiple-choice option, e.g. `B` / `Paris`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

impl AnswerOption {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OptionError {
    #[error("option set is empty")]
    Empty,
    #[error("option label {0:?} is empty or contains whitespace")]
    BadLabel(String),
    #[error("duplicate option label {0:?}")]
    DuplicateLabel(String),
    #[error("label {0:?} is not a member of the option set")]
    NotAMember(String),
    #[error("subset is not in the option set's order")]
    OrderViolation,
}

/// An ordered, non-empty set of options with unique labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AnswerOption>", into = "Vec<AnswerOption>")]
pub struct OptionSet(Vec<AnswerOption>);

impl TryFrom<Vec<AnswerOption>> for OptionSet {
    type Error = OptionError;

    fn try_from(options: Vec<AnswerOption>) -> Result<Self, Self::Error> {
        Self::new(options)
    }
}

impl From<OptionSet> for Vec<AnswerOption> {
    fn from(set: OptionSet) -> Self {
        set.0
    }
}

impl OptionSet {
    pub fn new(options: Vec<AnswerOption>) -> Result<Self, OptionError> {
        if options.is_empty() {
            return Err(OptionError::Empty);
        }
        for (i, opt) in options.iter().enumerate() {
            if opt.label.is_empty() || opt.label.chars().any(char::is_whitespace) {
                return Err(OptionError::BadLabel(opt.label.clone()));
            }
            if options[..i].iter().any(|o| o.label == opt.label) {
                return Err(OptionError::DuplicateLabel(opt.label.clone()));
            }
        }
        Ok(Self(options))
    }

    /// Options from bare texts, labeled `A`, `B`, `C`, ... in order.
    pub fn lettered<S: AsRef<str>>(texts: &[S]) -> Result<Self, OptionError> {
        let options = texts
            .iter()
            .enumerate()
            .map(|(i, t)| AnswerOption::new(letter_label(i), t.as_ref()))
            .collect();
        Self::new(options)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AnswerOption> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.0.iter().map(|o| o.label.as_str()).collect()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|o| o.label == label)
    }

    pub fn get(&self, label: &str) -> Option<&AnswerOption> {
        self.0.iter().find(|o| o.label == label)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|o| o.label == label)
    }

    /// The members named by `labels`, in this set's order. Duplicates collapse.
    pub fn restrict<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self, OptionError> {
        for l in labels {
            if !self.contains(l.as_ref()) {
                return Err(OptionError::NotAMember(l.as_ref().to_string()));
            }
        }
        let kept = self
            .0
            .iter()
            .filter(|o| labels.iter().any(|l| l.as_ref() == o.label))
            .cloned()
            .collect();
        Self::new(kept)
    }

    /// True when every member of `other` is in `self` and `other` keeps `self`'s order.
    pub fn is_ordered_subset(&self, other: &OptionSet) -> bool {
        let mut last = None;
        for opt in other.iter() {
            match self.position(&opt.label) {
                Some(pos) if last.is_none_or(|l| pos > l) && self.0[pos] == *opt => last = Some(pos),
                _ => return false,
            }
        }
        true
    }

    /// One option per line as `A. text`.
    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|o| {
                if o.text.is_empty() {
                    o.label.clone()
                } else {
                    format!("{}. {}", o.label, o.text)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Resolve a free-form answer string to a label.
    ///
    /// Exact label match wins (after stripping wrappers like `(B)` or
    /// `**B.**`), then a leading `B.`/`(B)` label prefix, then a
    /// case-insensitive match against option texts.
    pub fn resolve(&self, answer: &str) -> Option<&str> {
        let cleaned = clean_answer(answer);
        if cleaned.is_empty() {
            return None;
        }
        if let Some(o) = self.0.iter().find(|o| o.label == cleaned) {
            return Some(&o.label);
        }
        let unwrapped = cleaned
            .trim_start_matches('(')
            .trim_end_matches([')', '.', ':'])
            .trim();
        if let Some(o) = self.0.iter().find(|o| o.label == unwrapped) {
            return Some(&o.label);
        }
        if let Some(caps) = label_prefix_re().captures(&cleaned) {
            let label = &caps[1];
            if let Some(o) = self.0.iter().find(|o| o.label == label) {
                return Some(&o.label);
            }
        }
        let lowered = cleaned.to_lowercase();
        let lowered = lowered.trim_end_matches('.');
        self.0
            .iter()
            .find(|o| !o.text.is_empty() && o.text.to_lowercase().trim_end_matches('.') == lowered)
            .map(|o| o.label.as_str())
    }
}

impl fmt::Display for OptionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub(crate) fn letter_label(i: usize) -> String {
    let mut n = i;
    let mut out = Vec::new();
    loop {
        out.push((b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.iter().rev().collect()
}

fn clean_answer(answer: &str) -> String {
    let trimmed = answer
        .trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '\'' || c == '_')
        .trim();
    let lower = trimmed.to_lowercase();
    let without_prefix = ["option ", "answer ", "choice "]
        .iter()
        .find_map(|p| lower.starts_with(p).then(|| trimmed[p.len()..].trim()))
        .unwrap_or(trimmed);
    without_prefix.to_string()
}

fn label_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\(?([A-Za-z0-9]+)(?:\)|\.|:)\s+\S").expect("static regex"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> OptionSet {
        OptionSet::lettered(&["Paris", "London", "Rome", "Berlin"]).unwrap()
    }

    #[test]
    fn lettered_labels() {
        assert_eq!(abcd().labels(), vec!["A", "B", "C", "D"]);
        assert_eq!(letter_label(25), "Z");
        assert_eq!(letter_label(26), "AA");
    }

    #[test]
    fn resolve_prefers_labels_then_text() {
        let set = abcd();
        assert_eq!(set.resolve("B"), Some("B"));
        assert_eq!(set.resolve(" (C) "), Some("C"));
        assert_eq!(set.resolve("**D.**"), Some("D"));
        assert_eq!(set.resolve("A. Paris"), Some("A"));
        assert_eq!(set.resolve("Option B"), Some("B"));
        assert_eq!(set.resolve("rome"), Some("C"));
        assert_eq!(set.resolve("E"), None);
        assert_eq!(set.resolve(""), None);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert_eq!(OptionSet::new(vec![]), Err(OptionError::Empty));
        let dup = vec![AnswerOption::new("A", "x"), AnswerOption::new("A", "y")];
        assert_eq!(OptionSet::new(dup), Err(OptionError::DuplicateLabel("A".into())));
    }

    #[test]
    fn restrict_keeps_source_order() {
        let sub = abcd().restrict(&["D", "B", "D"]).unwrap();
        assert_eq!(sub.labels(), vec!["B", "D"]);
        assert!(abcd().is_ordered_subset(&sub));
        assert!(abcd().restrict(&["E"]).is_err());
    }

    #[test]
    fn render_lines() {
        let set = OptionSet::lettered(&["yes", "no"]).unwrap();
        assert_eq!(set.render(), "A. yes\nB. no");
    }
}
