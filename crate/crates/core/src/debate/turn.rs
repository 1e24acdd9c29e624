use std::sync::OnceLock;

use regex::Regex;

use crate::protocol::OptionSet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TurnError {
    #[error("no option selected")]
    NoOptionSelected,
    #[error("several options selected: {0:?}")]
    Ambiguous(Vec<String>),
    #[error("selected option {0:?} is not in the allowed set")]
    OutsideOptions(String),
}

/// `Answer: B`, `**Final answer:** (B)`, `- Answer - B`, one per line.
fn answer_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t>*_#-]*(?:final |my )?(?:answer|selected option|choice)[*_ \t]*[:\-][*_ \t]*(.+?)[ \t]*$")
            .expect("static regex")
    })
}

/// `I maintain A`, `I choose option (C)` and similar stance phrases.
fn stance_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i:\b(?:I\s+)?(?:maintain|choose|select|pick|stick\s+with|go\s+with)\s+(?:option\s+)?)\(?([A-Z0-9])\)?(?:\b|$)")
            .expect("static regex")
    })
}

/// Something shaped like a bare option label.
fn label_like_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\(?([A-Z0-9])\)?[.:]?$").expect("static regex"))
}

fn tidy(text: &str) -> String {
    text.lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

fn dedup_in_order(labels: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels {
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

/// Resolve a debater's selected option and separate it from the argument.
///
/// Explicit answer lines are tried first, then stance phrases, then a reply
/// whose text names exactly one option. Exactly one distinct selection must
/// result.
pub fn parse_debater_turn(raw: &str, options: &OptionSet) -> Result<(String, String), TurnError> {
    let lines: Vec<_> = answer_line_re().captures_iter(raw).collect();
    if !lines.is_empty() {
        let mut chosen = Vec::new();
        for caps in &lines {
            let value = caps[1].trim();
            match options.resolve(value) {
                Some(label) => chosen.push(label.to_string()),
                None => match label_like_re().captures(value) {
                    Some(c) => return Err(TurnError::OutsideOptions(c[1].to_string())),
                    None => {
                        let named = options.labels().into_iter().filter(|l| mentions_label(value, l)).map(str::to_string).collect::<Vec<_>>();
                        if named.len() > 1 {
                            return Err(TurnError::Ambiguous(named));
                        }
                        chosen.extend(named);
                    }
                },
            }
        }
        let chosen = dedup_in_order(chosen);
        return match chosen.as_slice() {
            [one] => {
                let argument = answer_line_re().replace_all(raw, "");
                Ok((one.clone(), tidy(&argument)))
            }
            [] => Err(TurnError::NoOptionSelected),
            _ => Err(TurnError::Ambiguous(chosen)),
        };
    }

    let stances: Vec<_> = stance_re().captures_iter(raw).collect();
    if !stances.is_empty() {
        let mut chosen = Vec::new();
        for caps in &stances {
            let label = &caps[1];
            if !options.contains(label) {
                return Err(TurnError::OutsideOptions(label.to_string()));
            }
            chosen.push(label.to_string());
        }
        let chosen = dedup_in_order(chosen);
        return match chosen.as_slice() {
            [one] => {
                let span = stances[0].get(0).expect("group 0");
                let argument = format!("{}{}", &raw[..span.start()], &raw[span.end()..]);
                Ok((one.clone(), tidy(&argument)))
            }
            _ => Err(TurnError::Ambiguous(chosen)),
        };
    }

    if let Some(label) = options.resolve(raw) {
        return Ok((label.to_string(), String::new()));
    }
    let lowered = raw.to_lowercase();
    let by_text: Vec<String> = options
        .iter()
        .filter(|o| !o.text.trim().is_empty() && contains_phrase(&lowered, &o.text.to_lowercase()))
        .map(|o| o.label.clone())
        .collect();
    match by_text.as_slice() {
        [one] => Ok((one.clone(), tidy(raw))),
        [] => Err(TurnError::NoOptionSelected),
        _ => Err(TurnError::Ambiguous(by_text)),
    }
}

/// Whole-word containment of `label` in `text`.
fn mentions_label(text: &str, label: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric()).any(|w| w == label)
}

fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let needle = needle.trim().trim_end_matches('.');
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(needle) {
        let a = start + pos;
        let b = a + needle.len();
        let before = haystack[..a].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = haystack[b..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before && after {
            return true;
        }
        start = a + needle.len().max(1);
        while !haystack.is_char_boundary(start) {
            start += 1;
        }
    }
    false
}
