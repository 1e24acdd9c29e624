use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::protocol::OptionSet;

pub const KEY_PREFERENCE: &str = "Preference";
pub const KEY_SIDE: &str = "Supported Side";
pub const KEY_REASON: &str = "Reason";
pub const KEY_ANSWER: &str = "Debate Answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Affirmative,
    Negative,
}

/// A validated per-round ruling. `supported_side` is `Some` iff the judge
/// expressed a preference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub preference: Preference,
    pub supported_side: Option<Side>,
    pub reason: String,
    pub debate_answer: String,
}

/// A validated finalization ruling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalVerdict {
    pub reason: String,
    pub debate_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedCause {
    SurroundingText,
    NotAnObject,
    MissingKey,
    UnexpectedKey,
    BadPreference,
    BadSide,
    AnswerOutsideOptions,
}

impl fmt::Display for MalformedCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MalformedCause::SurroundingText => "text outside the object",
            MalformedCause::NotAnObject => "not a single object",
            MalformedCause::MissingKey => "missing key",
            MalformedCause::UnexpectedKey => "unexpected key",
            MalformedCause::BadPreference => "preference is not Yes or No",
            MalformedCause::BadSide => "invalid supported side",
            MalformedCause::AnswerOutsideOptions => "answer outside the option set",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed verdict ({cause}): {detail}")]
pub struct Malformed {
    pub cause: MalformedCause,
    pub detail: String,
}

fn malformed(cause: MalformedCause, detail: impl Into<String>) -> Malformed {
    Malformed {
        cause,
        detail: detail.into(),
    }
}

/// The reply must be exactly one JSON object, optionally padded with
/// whitespace.
fn single_object(raw: &str) -> Result<Map<String, Value>, Malformed> {
    let trimmed = raw.trim();
    match serde_json::from_str::<Value>(trimmed) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(malformed(MalformedCause::NotAnObject, format!("got {}", json_kind(&other)))),
        Err(_) => {
            let embedded = match (trimmed.find('{'), trimmed.rfind('}')) {
                (Some(a), Some(b)) if a < b => serde_json::from_str::<Value>(&trimmed[a..=b]).is_ok_and(|v| v.is_object()),
                _ => false,
            };
            if embedded {
                Err(malformed(MalformedCause::SurroundingText, "object is wrapped in other text"))
            } else {
                Err(malformed(MalformedCause::NotAnObject, "reply does not parse as an object"))
            }
        }
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn check_keys(map: &Map<String, Value>, required: &[&str], optional: &[&str]) -> Result<(), Malformed> {
    for key in required {
        if !map.contains_key(*key) {
            return Err(malformed(MalformedCause::MissingKey, format!("\"{key}\"")));
        }
    }
    for key in map.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(malformed(MalformedCause::UnexpectedKey, format!("\"{key}\"")));
        }
    }
    Ok(())
}

fn string_field(map: &Map<String, Value>, key: &str, cause: MalformedCause) -> Result<String, Malformed> {
    map[key]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed(cause, format!("\"{key}\" is {}", json_kind(&map[key]))))
}

fn answer_field(map: &Map<String, Value>, allowed: &OptionSet) -> Result<String, Malformed> {
    let raw = string_field(map, KEY_ANSWER, MalformedCause::AnswerOutsideOptions)?;
    allowed
        .resolve(&raw)
        .map(str::to_string)
        .ok_or_else(|| malformed(MalformedCause::AnswerOutsideOptions, format!("{raw:?} not in [{}]", allowed.labels().join(", "))))
}

/// Validate a per-round judge reply against the options allowed this round.
pub fn validate_verdict(raw: &str, allowed: &OptionSet) -> Result<JudgeVerdict, Malformed> {
    let map = single_object(raw)?;
    let preference = match map.get(KEY_PREFERENCE).and_then(Value::as_str) {
        Some("Yes") => Preference::Yes,
        Some("No") => Preference::No,
        Some(other) => return Err(malformed(MalformedCause::BadPreference, format!("{other:?}"))),
        None if map.contains_key(KEY_PREFERENCE) => {
            return Err(malformed(MalformedCause::BadPreference, json_kind(&map[KEY_PREFERENCE])))
        }
        None => return Err(malformed(MalformedCause::MissingKey, format!("\"{KEY_PREFERENCE}\""))),
    };
    // Without a preference there is no side to support, so the key may be
    // omitted, null or empty.
    match preference {
        Preference::Yes => check_keys(&map, &[KEY_PREFERENCE, KEY_SIDE, KEY_REASON, KEY_ANSWER], &[])?,
        Preference::No => check_keys(&map, &[KEY_PREFERENCE, KEY_REASON, KEY_ANSWER], &[KEY_SIDE])?,
    }
    let side = match map.get(KEY_SIDE) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => match s.as_str() {
            "Affirmative" => Some(Side::Affirmative),
            "Negative" => Some(Side::Negative),
            other => return Err(malformed(MalformedCause::BadSide, format!("{other:?}"))),
        },
        Some(other) => return Err(malformed(MalformedCause::BadSide, json_kind(other))),
    };
    let supported_side = match (preference, side) {
        (Preference::Yes, None) => return Err(malformed(MalformedCause::BadSide, "a preference needs a side")),
        (Preference::Yes, s) => s,
        (Preference::No, _) => None,
    };
    let reason = string_field(&map, KEY_REASON, MalformedCause::NotAnObject)?;
    let debate_answer = answer_field(&map, allowed)?;
    Ok(JudgeVerdict {
        preference,
        supported_side,
        reason,
        debate_answer,
    })
}

/// Validate a finalization reply against the reduced option set.
pub fn validate_final_verdict(raw: &str, allowed: &OptionSet) -> Result<FinalVerdict, Malformed> {
    let map = single_object(raw)?;
    check_keys(&map, &[KEY_REASON, KEY_ANSWER], &[])?;
    Ok(FinalVerdict {
        reason: string_field(&map, KEY_REASON, MalformedCause::NotAnObject)?,
        debate_answer: answer_field(&map, allowed)?,
    })
}
