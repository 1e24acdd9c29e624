//! Prompt protocol shared by the self-critique agent and the debate roles.
//!
//! Templates carry `{NAME}` placeholders from a closed set and are rendered
//! by literal, single-pass substitution. The self-critique reply is parsed
//! back into its labeled sections by [`parse_self_critique`].

mod options;
mod parse;
mod template;
mod transcript;

pub use options::{AnswerOption, OptionError, OptionSet};
pub use parse::{normalize_confidence, parse_self_critique, ParseError, Section, SelfCritiqueResponse};
pub use template::{
    render_prompt, ImageRef, Modality, Placeholder, PromptBindings, PromptTemplate, Role, TemplateError,
    TemplateSet, IMAGE_MARKER,
};
pub use transcript::{render_transcript, Transcript, TranscriptEntry};

/// Lower clamp applied to every parsed confidence so its logit stays finite.
pub const CONFIDENCE_FLOOR: f64 = 1e-4;
/// Upper clamp applied to every parsed confidence.
pub const CONFIDENCE_CEIL: f64 = 1.0 - 1e-4;

/// Clamp a probability into `[CONFIDENCE_FLOOR, CONFIDENCE_CEIL]`.
pub fn clamp_confidence(p: f64) -> f64 {
    p.clamp(CONFIDENCE_FLOOR, CONFIDENCE_CEIL)
}
