//! Dataset ingestion, end-to-end runs (self-critique, decide, maybe debate)
//! and the accuracy, token-cost and decision-breakdown metrics.

mod dataset;
mod metrics;
mod pipeline;

pub use dataset::{ingest_dataset, parse_dataset, DatasetRecord};
pub use metrics::{apt, compute_metrics, render_report, MetricsReport};
pub use pipeline::{
    apply_counterfactual, extract_example, run_pipeline, EvalRecord, ExtractedExample, Extraction, FlipCategory, Pipeline,
    PipelineMode, RecordStatus,
};

use crate::classifier::ClassifierError;
use crate::protocol::TemplateError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, field {field}: {detail}")]
    Schema {
        line: usize,
        field: &'static str,
        detail: String,
    },
    #[error("no records to evaluate")]
    EmptyRun,
    #[error(transparent)]
    Classifier(ClassifierError),
    #[error(transparent)]
    Template(TemplateError),
    #[error("configuration: {0}")]
    Config(String),
}
