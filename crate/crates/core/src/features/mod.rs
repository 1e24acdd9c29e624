//! The 41 interpretable features computed from a question and its parsed
//! self-critique reply.
//!
//! Three groups in a fixed, versioned order: the question (20 values), the
//! initial reasoning (10) and the self-critique (11). The canonical order is
//! shipped as a manifest file whose hash is stored in every model.

mod lexicon;
mod pos;
mod readability;
mod syntax;
mod text;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::protocol::{clamp_confidence, OptionSet, SelfCritiqueResponse};

pub use lexicon::{LexiconError, Lexicons, WordList, LEXICON_NAMES};
pub use pos::{pos_counts, tag_tokens, PosCounts, Tag};
pub use readability::{readability, TextCounts};
pub use syntax::{named_entity_count, syntactic_depth};
pub use text::{is_word, sentences, syllables, tokenize};

pub const FEATURE_COUNT: usize = 41;

/// Manifest text as shipped: one feature name per line.
pub const FEATURE_MANIFEST: &str = include_str!("../../data/feature_manifest.txt");

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "QuestionToken",
    "AnswerToken",
    "question_named_entity_count",
    "qtype_what",
    "qtype_where",
    "qtype_why",
    "qtype_how",
    "qtype_when",
    "qtype_who",
    "qtype_is",
    "qtype_are",
    "qtype_does",
    "qtype_do",
    "qtype_other",
    "QSyntacticDepth",
    "Question_flesch_reading_ease",
    "Question_coleman_liau_index",
    "Question_num_nouns",
    "Question_num_verbs",
    "Question_num_adjs",
    "InitialConfidence",
    "InitialReason_HedgeCount",
    "InitialReason_CertaintyCount",
    "InitialReason_contrast",
    "InitialReason_SyntacticDepth",
    "InitialReason_flesch_reading_ease",
    "InitialReason_coleman_liau_index",
    "InitialReason_num_nouns",
    "InitialReason_num_verbs",
    "InitialReason_num_adjs",
    "NegativeConfidence",
    "NegativeReason_HedgeCount",
    "NegativeReason_CertaintyCount",
    "NegativeReason_contrast",
    "FinalConfidence",
    "NegativeReason_SyntacticDepth",
    "NegativeReason_flesch_reading_ease",
    "NegativeReason_coleman_liau_index",
    "NegativeReason_num_nouns",
    "NegativeReason_num_verbs",
    "NegativeReason_num_adjs",
];

/// The ten question words with their own indicator, in feature order.
pub const QTYPES: [&str; 10] = ["what", "where", "why", "how", "when", "who", "is", "are", "does", "do"];

pub const QUESTION_GROUP: std::ops::Range<usize> = 0..20;
pub const INITIAL_GROUP: std::ops::Range<usize> = 20..30;
pub const NEGATIVE_GROUP: std::ops::Range<usize> = 30..41;

/// Index of a feature by name.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// SHA-256 over the canonical names, one per line with a trailing newline.
pub fn manifest_hash() -> String {
    manifest_hash_of(&FEATURE_NAMES)
}

pub fn manifest_hash_of<S: AsRef<str>>(names: &[S]) -> String {
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_ref().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Which confidence is carried as `p_llm` into fusion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceSource {
    #[default]
    Final,
    Initial,
}

/// The 41 named values plus the LLM confidence used for fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub p_llm: f64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, p_llm: f64) -> Self {
        assert_eq!(values.len(), FEATURE_COUNT, "feature vectors have exactly {FEATURE_COUNT} values");
        Self { values, p_llm }
    }

    pub fn names(&self) -> &'static [&'static str; FEATURE_COUNT] {
        &FEATURE_NAMES
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        FEATURE_NAMES.iter().copied().zip(self.values.iter().copied())
    }
}

/// Text-derived values for one reasoning section.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReasoningFeatures {
    pub hedges: usize,
    pub certainty: usize,
    pub contrast: usize,
    pub depth: usize,
    pub flesch: f64,
    pub coleman_liau: f64,
    pub pos: PosCounts,
}

fn count_hits(tokens: &[String], list: &WordList) -> usize {
    tokens.iter().filter(|t| list.contains(&t.to_lowercase())).count()
}

/// Computes feature vectors with a fixed set of word lists.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    lexicons: Lexicons,
    source: ConfidenceSource,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(Lexicons::shipped())
    }
}

impl FeatureExtractor {
    pub fn new(lexicons: Lexicons) -> Self {
        Self {
            lexicons,
            source: ConfidenceSource::Final,
        }
    }

    pub fn with_confidence_source(mut self, source: ConfidenceSource) -> Self {
        self.source = source;
        self
    }

    pub fn confidence_source(&self) -> ConfidenceSource {
        self.source
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    pub fn lexicon_version(&self) -> &str {
        &self.lexicons.version
    }

    /// Question-group values without `AnswerToken`, which needs the reply.
    /// Layout matches [`QUESTION_GROUP`] with index 1 set to zero.
    pub fn question_features(&self, question: &str) -> [f64; 20] {
        let lex = &self.lexicons;
        let tokens = tokenize(question);
        let mut out = [0.0; 20];
        out[0] = tokens.len() as f64;
        out[2] = syntax::entities_of_tokens(&tokens, lex) as f64;
        let first = tokens.iter().find(|t| is_word(t)).map(|t| t.to_lowercase());
        match first.and_then(|w| QTYPES.iter().position(|q| *q == w)) {
            Some(i) => out[3 + i] = 1.0,
            None => out[13] = 1.0,
        }
        out[14] = syntax::depth_of_tokens(&tokens, lex) as f64;
        let counts = TextCounts::from_tokens(&tokens);
        out[15] = counts.flesch_reading_ease();
        out[16] = counts.coleman_liau_index();
        let pos = pos_counts(&tokens, lex);
        out[17] = pos.nouns as f64;
        out[18] = pos.verbs as f64;
        out[19] = pos.adjectives as f64;
        out
    }

    pub fn reasoning_features(&self, text: &str) -> ReasoningFeatures {
        let lex = &self.lexicons;
        let tokens = tokenize(text);
        let counts = TextCounts::from_tokens(&tokens);
        ReasoningFeatures {
            hedges: count_hits(&tokens, &lex.hedges),
            certainty: count_hits(&tokens, &lex.certainty),
            contrast: count_hits(&tokens, &lex.contrast),
            depth: syntax::depth_of_tokens(&tokens, lex),
            flesch: counts.flesch_reading_ease(),
            coleman_liau: counts.coleman_liau_index(),
            pos: pos_counts(&tokens, lex),
        }
    }

    /// Build the full vector. `AnswerToken` counts the tokens of the final
    /// answer's option text, or of its label when the text is empty.
    pub fn extract(&self, question: &str, options: &OptionSet, response: &SelfCritiqueResponse) -> FeatureVector {
        let mut values = Vec::with_capacity(FEATURE_COUNT);
        let mut q = self.question_features(question);
        let answer_text = match options.get(&response.final_answer) {
            Some(opt) if !opt.text.trim().is_empty() => opt.text.as_str(),
            _ => response.final_answer.as_str(),
        };
        q[1] = tokenize(answer_text).len() as f64;
        values.extend_from_slice(&q);

        let initial_conf = clamp_confidence(response.initial_confidence);
        let critique_conf = clamp_confidence(response.critique_confidence);
        let final_conf = clamp_confidence(response.final_confidence);

        let init = self.reasoning_features(&response.initial_reasoning);
        values.push(initial_conf);
        values.extend([init.hedges as f64, init.certainty as f64, init.contrast as f64, init.depth as f64]);
        values.extend([init.flesch, init.coleman_liau]);
        values.extend([init.pos.nouns as f64, init.pos.verbs as f64, init.pos.adjectives as f64]);

        let neg = self.reasoning_features(&response.critique_reasoning);
        values.push(critique_conf);
        values.extend([neg.hedges as f64, neg.certainty as f64, neg.contrast as f64]);
        values.push(final_conf);
        values.push(neg.depth as f64);
        values.extend([neg.flesch, neg.coleman_liau]);
        values.extend([neg.pos.nouns as f64, neg.pos.verbs as f64, neg.pos.adjectives as f64]);

        let p_llm = match self.source {
            ConfidenceSource::Final => final_conf,
            ConfidenceSource::Initial => initial_conf,
        };
        FeatureVector::new(values, p_llm)
    }
}

/// Extract with the shipped word lists and `p_llm` = final confidence.
pub fn extract_features(question: &str, options: &OptionSet, response: &SelfCritiqueResponse) -> FeatureVector {
    FeatureExtractor::default().extract(question, options, response)
}
