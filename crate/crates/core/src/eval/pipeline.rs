use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetRecord;
use super::EvalError;
use crate::backend::{Backend, BackendRequest, TokenUsage};
use crate::classifier::{Action, DecisionModel, LabeledExample};
use crate::debate::{run_debate, DebateConfig, DebateError, DebateInput, TerminatedBy};
use crate::features::{FeatureExtractor, FeatureVector};
use crate::protocol::{parse_self_critique, render_prompt, PromptBindings, Role, SelfCritiqueResponse, TemplateSet, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Selective,
    AlwaysDebate,
    NeverDebate,
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineMode::Selective => "selective",
            PipelineMode::AlwaysDebate => "always-debate",
            PipelineMode::NeverDebate => "never-debate",
        })
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "selective" => Ok(PipelineMode::Selective),
            "always-debate" | "always" => Ok(PipelineMode::AlwaysDebate),
            "never-debate" | "never" => Ok(PipelineMode::NeverDebate),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Decision × (single-agent correct → debate correct). For skipped records
/// the debate side is the counterfactual from a paired always-debate run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipCategory {
    SkippedWrongWrong,
    SkippedRightRight,
    SkippedRightWrong,
    SkippedWrongRight,
    TriggeredWrongWrong,
    TriggeredRightRight,
    TriggeredRightWrong,
    TriggeredWrongRight,
}

impl FlipCategory {
    /// Column order of the breakdown table.
    pub const ALL: [FlipCategory; 8] = [
        FlipCategory::SkippedWrongWrong,
        FlipCategory::SkippedRightRight,
        FlipCategory::SkippedRightWrong,
        FlipCategory::SkippedWrongRight,
        FlipCategory::TriggeredWrongWrong,
        FlipCategory::TriggeredRightRight,
        FlipCategory::TriggeredRightWrong,
        FlipCategory::TriggeredWrongRight,
    ];

    pub fn classify(decision: Action, single_correct: bool, debate_correct: bool) -> Self {
        use FlipCategory::*;
        match (decision, single_correct, debate_correct) {
            (Action::Skip, false, false) => SkippedWrongWrong,
            (Action::Skip, true, true) => SkippedRightRight,
            (Action::Skip, true, false) => SkippedRightWrong,
            (Action::Skip, false, true) => SkippedWrongRight,
            (Action::TriggerDebate, false, false) => TriggeredWrongWrong,
            (Action::TriggerDebate, true, true) => TriggeredRightRight,
            (Action::TriggerDebate, true, false) => TriggeredRightWrong,
            (Action::TriggerDebate, false, true) => TriggeredWrongRight,
        }
    }

    pub fn index(self) -> usize {
        FlipCategory::ALL.iter().position(|c| *c == self).expect("listed")
    }

    /// A skip is good unless debate would have fixed the answer; a trigger
    /// is good only when it fixes the answer.
    pub fn is_good(self) -> bool {
        !matches!(
            self,
            FlipCategory::SkippedWrongRight
                | FlipCategory::TriggeredWrongWrong
                | FlipCategory::TriggeredRightRight
                | FlipCategory::TriggeredRightWrong
        )
    }

    pub fn short(self) -> &'static str {
        match self {
            FlipCategory::SkippedWrongWrong | FlipCategory::TriggeredWrongWrong => "✗→✗",
            FlipCategory::SkippedRightRight | FlipCategory::TriggeredRightRight => "✓→✓",
            FlipCategory::SkippedRightWrong | FlipCategory::TriggeredRightWrong => "✓→✗",
            FlipCategory::SkippedWrongRight | FlipCategory::TriggeredWrongRight => "✗→✓",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Completed,
    /// The self-critique reply could not be parsed; scored as incorrect.
    Unparseable,
    /// A backend failure aborted the record; excluded from accuracy.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub status: RecordStatus,
    pub ground_truth: String,
    pub single_answer: Option<String>,
    pub single_correct: bool,
    pub decision: Option<Action>,
    pub p: Option<f64>,
    pub u: Option<f64>,
    pub debate_answer: Option<String>,
    pub final_answer: Option<String>,
    pub final_correct: bool,
    pub flip: Option<FlipCategory>,
    pub terminated_by: Option<TerminatedBy>,
    pub rounds_used: Option<u32>,
    pub usage: TokenUsage,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Transcript>,
}

impl EvalRecord {
    fn new(rec: &DatasetRecord) -> Self {
        Self {
            id: rec.id.clone(),
            status: RecordStatus::Completed,
            ground_truth: rec.ground_truth.clone(),
            single_answer: None,
            single_correct: false,
            decision: None,
            p: None,
            u: None,
            debate_answer: None,
            final_answer: None,
            final_correct: false,
            flip: None,
            terminated_by: None,
            rounds_used: None,
            usage: TokenUsage::default(),
            error: None,
            transcript: None,
        }
    }

    /// Correctness after a debate branch that ran to an answer, counting a
    /// protocol fallback as the debate keeping the single-agent answer.
    fn debate_correct(&self) -> Option<bool> {
        (self.status == RecordStatus::Completed && self.decision == Some(Action::TriggerDebate)).then_some(self.final_correct)
    }
}

/// Shared inputs of a pipeline run.
pub struct Pipeline<'a, B: Backend + ?Sized> {
    pub model: &'a DecisionModel,
    pub extractor: &'a FeatureExtractor,
    pub backend: &'a B,
    pub templates: &'a TemplateSet,
    pub debate: DebateConfig,
    pub mode: PipelineMode,
    /// Worker threads; 1 runs inline.
    pub workers: usize,
}

enum SelfCritiqueStep {
    Parsed(SelfCritiqueResponse, FeatureVector),
    Unparseable(String),
    Failed(String),
}

fn self_critique<B: Backend + ?Sized>(
    rec: &DatasetRecord,
    extractor: &FeatureExtractor,
    backend: &B,
    templates: &TemplateSet,
    usage: &mut TokenUsage,
) -> Result<(SelfCritiqueStep, String), EvalError> {
    let bindings = PromptBindings::new(rec.question.clone(), rec.options.clone()).with_image(rec.image_ref.clone());
    let prompt = render_prompt(templates.get(Role::SelfCritique), &bindings).map_err(EvalError::Template)?;
    let request = BackendRequest::new(Role::SelfCritique, prompt)
        .with_image(rec.image_ref.clone())
        .with_record(Some(rec.id.clone()));
    let reply = match backend.complete(&request) {
        Ok(r) => r,
        Err(e) => return Ok((SelfCritiqueStep::Failed(format!("self-critique: {e}")), String::new())),
    };
    usage.record(&reply);
    Ok(match parse_self_critique(&reply.text, &rec.options) {
        Ok(resp) => {
            let z = extractor.extract(&rec.question, &rec.options, &resp);
            (SelfCritiqueStep::Parsed(resp, z), reply.text)
        }
        Err(e) => (SelfCritiqueStep::Unparseable(e.to_string()), reply.text),
    })
}

impl<B: Backend + ?Sized> Pipeline<'_, B> {
    fn check(&self) -> Result<(), EvalError> {
        self.model
            .check_lexicon(self.extractor.lexicon_version())
            .map_err(EvalError::Classifier)?;
        if self.extractor.confidence_source() != self.model.confidence_source {
            return Err(EvalError::Config(format!(
                "extractor reads {:?} confidence but the model was trained on {:?}",
                self.extractor.confidence_source(),
                self.model.confidence_source
            )));
        }
        Ok(())
    }

    fn one(&self, rec: &DatasetRecord) -> Result<EvalRecord, EvalError> {
        let mut out = EvalRecord::new(rec);
        let (step, _) = self_critique(rec, self.extractor, self.backend, self.templates, &mut out.usage)?;
        let (initial, z) = match step {
            SelfCritiqueStep::Parsed(r, z) => (r, z),
            SelfCritiqueStep::Unparseable(e) => {
                out.status = RecordStatus::Unparseable;
                out.error = Some(e);
                return Ok(out);
            }
            SelfCritiqueStep::Failed(e) => {
                out.status = RecordStatus::Failed;
                out.error = Some(e);
                return Ok(out);
            }
        };
        out.single_answer = Some(initial.final_answer.clone());
        out.single_correct = initial.final_answer == rec.ground_truth;

        let scored = self.model.decide(&z).map_err(EvalError::Classifier)?;
        out.p = Some(scored.p);
        out.u = Some(scored.u);
        let decision = match self.mode {
            PipelineMode::Selective => scored.action,
            PipelineMode::AlwaysDebate => Action::TriggerDebate,
            PipelineMode::NeverDebate => Action::Skip,
        };
        out.decision = Some(decision);
        if decision == Action::Skip {
            out.final_answer = out.single_answer.clone();
            out.final_correct = out.single_correct;
            return Ok(out);
        }

        let input = DebateInput {
            question: &rec.question,
            options: &rec.options,
            image_ref: rec.image_ref.as_ref(),
            initial: &initial,
            record_id: Some(&rec.id),
        };
        match run_debate(input, self.backend, self.templates, self.debate) {
            Ok(d) => {
                out.usage += d.token_usage;
                out.rounds_used = Some(d.rounds_used);
                out.terminated_by = Some(d.terminated_by);
                out.debate_answer = Some(d.final_answer.clone());
                out.final_answer = Some(d.final_answer);
                out.transcript = Some(d.transcript);
            }
            Err(DebateError::Template(e)) => return Err(EvalError::Template(e)),
            Err(e) => {
                let partial = e.partial().expect("non-template failures carry progress");
                out.usage += partial.token_usage;
                out.rounds_used = Some(partial.round);
                out.transcript = Some(partial.transcript.clone());
                out.error = Some(e.to_string());
                if let DebateError::ProtocolViolation { .. } = e {
                    // The single-agent answer stands.
                    out.terminated_by = Some(TerminatedBy::ProtocolFallback);
                    out.final_answer = out.single_answer.clone();
                } else {
                    out.status = RecordStatus::Failed;
                    return Ok(out);
                }
            }
        }
        out.final_correct = out.final_answer.as_deref() == Some(rec.ground_truth.as_str());
        if let Some(debate_correct) = out.debate_correct() {
            out.flip = Some(FlipCategory::classify(decision, out.single_correct, debate_correct));
        }
        Ok(out)
    }

    /// Run every record, in dataset order. `counterfactual` maps record ids
    /// to an always-debate run of the same data; it fills in the flip
    /// category of skipped records.
    pub fn run(
        &self,
        records: &[DatasetRecord],
        counterfactual: Option<&HashMap<String, EvalRecord>>,
    ) -> Result<Vec<EvalRecord>, EvalError> {
        self.check()?;
        let mut out: Vec<EvalRecord> = if self.workers <= 1 {
            records.iter().map(|r| self.one(r)).collect::<Result<_, _>>()?
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| EvalError::Config(e.to_string()))?;
            pool.install(|| records.par_iter().map(|r| self.one(r)).collect::<Result<_, _>>())?
        };
        if let Some(cf) = counterfactual {
            apply_counterfactual(&mut out, cf);
        }
        Ok(out)
    }
}

/// Fill the flip category of skipped records from a paired always-debate run.
pub fn apply_counterfactual(records: &mut [EvalRecord], cf: &HashMap<String, EvalRecord>) {
    for r in records {
        if r.status != RecordStatus::Completed || r.decision != Some(Action::Skip) {
            continue;
        }
        if let Some(debate_correct) = cf.get(&r.id).and_then(EvalRecord::debate_correct) {
            r.flip = Some(FlipCategory::classify(Action::Skip, r.single_correct, debate_correct));
        }
    }
}

/// Convenience wrapper over [`Pipeline::run`].
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline<B: Backend + ?Sized>(
    records: &[DatasetRecord],
    model: &DecisionModel,
    extractor: &FeatureExtractor,
    backend: &B,
    templates: &TemplateSet,
    mode: PipelineMode,
    debate: DebateConfig,
    counterfactual: Option<&HashMap<String, EvalRecord>>,
) -> Result<Vec<EvalRecord>, EvalError> {
    Pipeline {
        model,
        extractor,
        backend,
        templates,
        debate,
        mode,
        workers: 1,
    }
    .run(records, counterfactual)
}

/// A training example harvested from a single-agent pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedExample {
    pub id: String,
    pub example: LabeledExample,
    pub response: SelfCritiqueResponse,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Extraction {
    Example(ExtractedExample),
    Failed { id: String, error: String },
}

/// Run the self-critique pass on one record and label it by correctness.
pub fn extract_example<B: Backend + ?Sized>(
    rec: &DatasetRecord,
    extractor: &FeatureExtractor,
    backend: &B,
    templates: &TemplateSet,
) -> Result<Extraction, EvalError> {
    let mut usage = TokenUsage::default();
    let (step, raw) = self_critique(rec, extractor, backend, templates, &mut usage)?;
    Ok(match step {
        SelfCritiqueStep::Parsed(response, features) => Extraction::Example(ExtractedExample {
            id: rec.id.clone(),
            example: LabeledExample {
                y: u8::from(response.final_answer == rec.ground_truth),
                features,
            },
            response,
            usage,
        }),
        SelfCritiqueStep::Unparseable(e) => Extraction::Failed {
            id: rec.id.clone(),
            error: format!("{e}; reply was {:?}", raw.chars().take(120).collect::<String>()),
        },
        SelfCritiqueStep::Failed(error) => Extraction::Failed { id: rec.id.clone(), error },
    })
}
