//! Three-role debate run only for questions the classifier escalates: an
//! affirmative debater defending the single-agent answer, a negative debater,
//! and a judge who may end the debate early or, after the round cap, picks
//! from the options that were actually argued for.

mod turn;
mod verdict;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, BackendRequest, TokenUsage};
use crate::protocol::{render_prompt, ImageRef, OptionSet, PromptBindings, Role, SelfCritiqueResponse, TemplateError, TemplateSet, Transcript};

pub use turn::{parse_debater_turn, TurnError};
pub use verdict::{
    validate_final_verdict, validate_verdict, FinalVerdict, JudgeVerdict, Malformed, MalformedCause, Preference, Side,
    KEY_ANSWER, KEY_PREFERENCE, KEY_REASON, KEY_SIDE,
};

pub const SPEAKER_SELF_CRITIQUE: &str = "SelfCritique";
pub const SPEAKER_AFFIRMATIVE: &str = "Affirmative";
pub const SPEAKER_NEGATIVE: &str = "Negative";
pub const SPEAKER_JUDGE: &str = "Judge";

/// Appended to a debater prompt after a reply that selected no valid option.
pub const DEBATER_REPROMPT: &str = "\n\nYour previous reply did not select exactly one option from the list above. \
Reply again and end with a line of the form \"Answer: <option label>\".";

/// Bound for the affirmative's view of the negative before round 1.
const NO_MESSAGE_YET: &str = "(none yet)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebateConfig {
    pub max_rounds: u32,
    /// Re-issues allowed per malformed judge reply.
    pub judge_retries: u32,
    /// Re-prompts allowed per debater reply without a valid option.
    pub debater_reprompts: u32,
}

impl Default for DebateConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            judge_retries: 3,
            debater_reprompts: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    JudgePreference,
    Finalization,
    /// A debater violated the protocol and the single-agent answer was kept.
    ProtocolFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateState {
    pub round: u32,
    pub max_rounds: u32,
    pub transcript: Transcript,
    pub aff_stance: String,
    pub latest_aff: String,
    pub latest_neg: String,
    /// Labels argued for so far, kept in option order.
    pub proposed_options: Vec<String>,
}

impl DebateState {
    /// Seed the transcript with the full self-critique response.
    pub fn new(options: &OptionSet, initial: &SelfCritiqueResponse, max_rounds: u32) -> Self {
        let mut transcript = Transcript::new();
        transcript.push(SPEAKER_SELF_CRITIQUE, render_self_critique(initial));
        let mut state = Self {
            round: 1,
            max_rounds,
            transcript,
            aff_stance: initial.final_answer.clone(),
            latest_aff: String::new(),
            latest_neg: String::new(),
            proposed_options: Vec::new(),
        };
        state.propose(options, &initial.final_answer);
        state
    }

    /// Record `label` as argued for, keeping option order.
    pub fn propose(&mut self, options: &OptionSet, label: &str) {
        if !options.contains(label) || self.proposed_options.iter().any(|l| l == label) {
            return;
        }
        self.proposed_options.push(label.to_string());
        self.proposed_options.sort_by_key(|l| options.position(l));
    }
}

/// The reduced option set for finalization: every option argued for, in
/// original order, never empty.
pub fn build_options2(state: &DebateState, options: &OptionSet) -> OptionSet {
    let mut labels: Vec<&str> = options
        .labels()
        .into_iter()
        .filter(|l| state.proposed_options.iter().any(|p| p == l))
        .collect();
    if labels.is_empty() {
        labels.push(&state.aff_stance);
    }
    options.restrict(&labels).expect("labels drawn from the option set")
}

pub fn render_self_critique(r: &SelfCritiqueResponse) -> String {
    format!(
        "Initial answer: {}\nInitial reasoning: {}\nInitial confidence: {}\nSelf-critique: {}\nDisagreement confidence: {}\nFinal answer: {}\nFinal confidence: {}",
        r.initial_answer,
        r.initial_reasoning,
        percent(r.initial_confidence),
        r.critique_reasoning,
        percent(r.critique_confidence),
        r.final_answer,
        percent(r.final_confidence),
    )
}

fn percent(p: f64) -> String {
    let v = p * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateOutcome {
    pub final_answer: String,
    pub rounds_used: u32,
    pub terminated_by: TerminatedBy,
    pub token_usage: TokenUsage,
    pub transcript: Transcript,
    pub verdicts: Vec<JudgeVerdict>,
    /// Judge replies re-issued because they were malformed.
    pub judge_retries: u32,
    pub debater_reprompts: u32,
}

/// Everything spent before a debate was abandoned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDebate {
    pub round: u32,
    pub token_usage: TokenUsage,
    pub transcript: Transcript,
}

#[derive(Debug, thiserror::Error)]
pub enum DebateError {
    #[error("backend failure for {role} in round {round}: {source}")]
    Backend {
        role: Role,
        round: u32,
        #[source]
        source: BackendError,
        partial: Box<PartialDebate>,
    },
    #[error("judge in round {round} gave no valid verdict after {attempts} attempts: {last}")]
    JudgeExhausted {
        role: Role,
        round: u32,
        attempts: u32,
        last: Malformed,
        partial: Box<PartialDebate>,
    },
    #[error("protocol violation by {role} in round {round}: {cause}")]
    ProtocolViolation {
        role: Role,
        round: u32,
        cause: TurnError,
        partial: Box<PartialDebate>,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl DebateError {
    /// Cost and history accumulated before the failure.
    pub fn partial(&self) -> Option<&PartialDebate> {
        match self {
            DebateError::Backend { partial, .. }
            | DebateError::JudgeExhausted { partial, .. }
            | DebateError::ProtocolViolation { partial, .. } => Some(partial),
            DebateError::Template(_) => None,
        }
    }

    /// True for the failures that surface as a backend failure of the run.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, DebateError::Backend { .. } | DebateError::JudgeExhausted { .. })
    }
}

/// Inputs of one debate.
#[derive(Debug, Clone, Copy)]
pub struct DebateInput<'a> {
    pub question: &'a str,
    pub options: &'a OptionSet,
    pub image_ref: Option<&'a ImageRef>,
    pub initial: &'a SelfCritiqueResponse,
    pub record_id: Option<&'a str>,
}

struct Run<'a, B: Backend + ?Sized> {
    input: DebateInput<'a>,
    backend: &'a B,
    templates: &'a TemplateSet,
    config: DebateConfig,
    state: DebateState,
    usage: TokenUsage,
    verdicts: Vec<JudgeVerdict>,
    judge_retries: u32,
    debater_reprompts: u32,
}

impl<B: Backend + ?Sized> Run<'_, B> {
    fn partial(&self) -> Box<PartialDebate> {
        Box::new(PartialDebate {
            round: self.state.round,
            token_usage: self.usage,
            transcript: self.state.transcript.clone(),
        })
    }

    fn bindings(&self) -> PromptBindings {
        PromptBindings::new(self.input.question, self.input.options.clone())
            .with_image(self.input.image_ref.cloned())
            .with_transcript(self.state.transcript.render())
            .with_round(self.state.round)
    }

    fn call(&mut self, role: Role, prompt: &str) -> Result<String, DebateError> {
        let request = BackendRequest::new(role, prompt)
            .with_image(self.input.image_ref.cloned())
            .with_record(self.input.record_id.map(str::to_string));
        match self.backend.complete(&request) {
            Ok(resp) => {
                self.usage.record(&resp);
                Ok(resp.text)
            }
            Err(source) => Err(DebateError::Backend {
                role,
                round: self.state.round,
                source,
                partial: self.partial(),
            }),
        }
    }

    fn debater(&mut self, role: Role, bindings: PromptBindings) -> Result<(String, String), DebateError> {
        let prompt = render_prompt(self.templates.get(role), &bindings)?;
        let mut reply = self.call(role, &prompt)?;
        let mut reprompts = 0;
        loop {
            match parse_debater_turn(&reply, self.input.options) {
                Ok((label, _)) => return Ok((label, reply)),
                Err(cause) if reprompts >= self.config.debater_reprompts => {
                    return Err(DebateError::ProtocolViolation {
                        role,
                        round: self.state.round,
                        cause,
                        partial: self.partial(),
                    })
                }
                Err(cause) => {
                    tracing::debug!(%role, round = self.state.round, %cause, "re-prompting debater");
                    reprompts += 1;
                    self.debater_reprompts += 1;
                    reply = self.call(role, &format!("{prompt}{DEBATER_REPROMPT}"))?;
                }
            }
        }
    }

    /// Issue `prompt` until `validate` accepts the reply or the retry budget
    /// runs out.
    fn judge<T>(
        &mut self,
        role: Role,
        prompt: &str,
        validate: impl Fn(&str) -> Result<T, Malformed>,
    ) -> Result<(T, String), DebateError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let reply = self.call(role, prompt)?;
            match validate(&reply) {
                Ok(v) => return Ok((v, reply)),
                Err(last) if attempts > self.config.judge_retries => {
                    return Err(DebateError::JudgeExhausted {
                        role,
                        round: self.state.round,
                        attempts,
                        last,
                        partial: self.partial(),
                    })
                }
                Err(m) => {
                    tracing::debug!(round = self.state.round, cause = %m.cause, "re-issuing judge prompt");
                    self.judge_retries += 1;
                }
            }
        }
    }

    fn finish(self, final_answer: String, terminated_by: TerminatedBy) -> DebateOutcome {
        DebateOutcome {
            final_answer,
            rounds_used: self.state.round,
            terminated_by,
            token_usage: self.usage,
            transcript: self.state.transcript,
            verdicts: self.verdicts,
            judge_retries: self.judge_retries,
            debater_reprompts: self.debater_reprompts,
        }
    }

    fn execute(mut self) -> Result<DebateOutcome, DebateError> {
        let options = self.input.options;
        loop {
            let neg_view = if self.state.latest_neg.is_empty() {
                NO_MESSAGE_YET.to_string()
            } else {
                self.state.latest_neg.clone()
            };
            let aff_bindings = self.bindings().with_aff(self.state.aff_stance.clone()).with_neg(neg_view);
            let (aff_label, aff_text) = self.debater(Role::DebaterAffirmative, aff_bindings)?;
            self.state.propose(options, &aff_label);
            self.state.latest_aff = aff_text.clone();
            self.state.transcript.push(SPEAKER_AFFIRMATIVE, aff_text);

            let neg_bindings = self.bindings().with_aff(self.state.latest_aff.clone());
            let (neg_label, neg_text) = self.debater(Role::DebaterNegative, neg_bindings)?;
            self.state.propose(options, &neg_label);
            self.state.latest_neg = neg_text.clone();
            self.state.transcript.push(SPEAKER_NEGATIVE, neg_text);

            let judge_bindings = self
                .bindings()
                .with_aff(self.state.latest_aff.clone())
                .with_neg(self.state.latest_neg.clone());
            let prompt = render_prompt(self.templates.get(Role::JudgePerRound), &judge_bindings)?;
            let (verdict, raw) = self.judge(Role::JudgePerRound, &prompt, |r| validate_verdict(r, options))?;
            self.state.transcript.push(SPEAKER_JUDGE, raw);
            self.state.propose(options, &verdict.debate_answer);
            let decided = verdict.preference == Preference::Yes;
            let answer = verdict.debate_answer.clone();
            self.verdicts.push(verdict);
            if decided {
                return Ok(self.finish(answer, TerminatedBy::JudgePreference));
            }
            if self.state.round >= self.state.max_rounds {
                break;
            }
            self.state.round += 1;
        }

        let reduced = build_options2(&self.state, options);
        let bindings = self.bindings().with_options2(reduced.clone())?;
        let prompt = render_prompt(self.templates.get(Role::JudgeFinal), &bindings)?;
        let (verdict, raw) = self.judge(Role::JudgeFinal, &prompt, |r| validate_final_verdict(r, &reduced))?;
        self.state.transcript.push(SPEAKER_JUDGE, raw);
        Ok(self.finish(verdict.debate_answer, TerminatedBy::Finalization))
    }
}

/// Run one debate to completion. Turns within the debate are sequential;
/// separate debates share nothing and may run in parallel.
pub fn run_debate<B: Backend + ?Sized>(
    input: DebateInput<'_>,
    backend: &B,
    templates: &TemplateSet,
    config: DebateConfig,
) -> Result<DebateOutcome, DebateError> {
    let max_rounds = config.max_rounds.max(1);
    let run = Run {
        state: DebateState::new(input.options, input.initial, max_rounds),
        input,
        backend,
        templates,
        config: DebateConfig { max_rounds, ..config },
        usage: TokenUsage::default(),
        verdicts: Vec::new(),
        judge_retries: 0,
        debater_reprompts: 0,
    };
    run.execute()
}
