use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::protocol::{AnswerOption, ImageRef, OptionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub options: OptionSet,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<ImageRef>,
    #[serde(default)]
    pub split_tag: String,
}

/// Options may be given as plain strings (lettered A, B, ...) or as
/// `{"label", "text"}` objects.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawOptions {
    Texts(Vec<String>),
    Labeled(Vec<AnswerOption>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: Option<String>,
    question: Option<String>,
    options: Option<RawOptions>,
    ground_truth: Option<String>,
    #[serde(default, alias = "image")]
    image_ref: Option<String>,
    #[serde(default)]
    split_tag: Option<String>,
}

fn schema(line: usize, field: &'static str, detail: impl Into<String>) -> EvalError {
    EvalError::Schema {
        line,
        field,
        detail: detail.into(),
    }
}

fn record_from_line(line_no: usize, line: &str) -> Result<DatasetRecord, EvalError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| schema(line_no, "record", e.to_string()))?;
    let id = raw.id.filter(|s| !s.trim().is_empty()).ok_or_else(|| schema(line_no, "id", "missing or empty"))?;
    let question = raw.question.ok_or_else(|| schema(line_no, "question", "missing"))?;
    let options = match raw.options.ok_or_else(|| schema(line_no, "options", "missing"))? {
        RawOptions::Texts(texts) => OptionSet::lettered(&texts),
        RawOptions::Labeled(opts) => OptionSet::new(opts),
    }
    .map_err(|e| schema(line_no, "options", e.to_string()))?;
    let truth = raw.ground_truth.ok_or_else(|| schema(line_no, "ground_truth", "missing"))?;
    if !options.contains(truth.trim()) {
        return Err(schema(
            line_no,
            "ground_truth",
            format!("{truth:?} is not one of [{}]", options.labels().join(", ")),
        ));
    }
    Ok(DatasetRecord {
        id,
        question,
        ground_truth: truth.trim().to_string(),
        options,
        image_ref: raw.image_ref.filter(|s| !s.is_empty()).map(ImageRef),
        split_tag: raw.split_tag.unwrap_or_default(),
    })
}

/// Parse line-delimited records; blank lines are skipped and line numbers
/// are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = record_from_line(line_no, line)?;
        if let Some(first) = seen.insert(record.id.clone(), line_no) {
            return Err(schema(
                line_no,
                "id",
                format!("duplicate id {:?} on lines {first} and {line_no}", record.id),
            ));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn ingest_dataset(path: &Path) -> Result<Vec<DatasetRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text)
}
