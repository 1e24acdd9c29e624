//! Scripted fixtures shared by integration tests.
#![allow(dead_code)]

use madgate_core::backend::{ScriptEntry, ScriptedBackend};
use madgate_core::classifier::DecisionModel;
use madgate_core::eval::{parse_dataset, DatasetRecord, FlipCategory};
use madgate_core::features::Lexicons;
use madgate_core::protocol::Role;

pub const TAU: f64 = 0.7;
pub const SELF_CRITIQUE_TOKENS: (u64, u64) = (200, 50);
pub const AFF_TOKENS: (u64, u64) = (100, 10);
pub const NEG_TOKENS: (u64, u64) = (110, 11);
pub const JUDGE_TOKENS: (u64, u64) = (120, 12);

/// Input plus output tokens of a skipped record and of a one-round debate.
pub const SKIP_COST: u64 = 250;
pub const DEBATE_COST: u64 = 250 + 110 + 121 + 132;

/// One planned record: single-agent answer, its confidence, and the answer a
/// debate reaches. The ground truth is always A.
pub struct Plan {
    pub id: &'static str,
    pub single: &'static str,
    pub confidence: u32,
    pub debate: &'static str,
    pub expected: FlipCategory,
}

/// One record per breakdown category. Confidence 90 skips and 30 triggers
/// under an identity-fusion model at the fixture threshold.
pub const PLANS: [Plan; 8] = [
    Plan { id: "s-ww", single: "B", confidence: 90, debate: "C", expected: FlipCategory::SkippedWrongWrong },
    Plan { id: "s-rr", single: "A", confidence: 90, debate: "A", expected: FlipCategory::SkippedRightRight },
    Plan { id: "s-rw", single: "A", confidence: 90, debate: "B", expected: FlipCategory::SkippedRightWrong },
    Plan { id: "s-wr", single: "B", confidence: 90, debate: "A", expected: FlipCategory::SkippedWrongRight },
    Plan { id: "t-ww", single: "B", confidence: 30, debate: "D", expected: FlipCategory::TriggeredWrongWrong },
    Plan { id: "t-rr", single: "A", confidence: 30, debate: "A", expected: FlipCategory::TriggeredRightRight },
    Plan { id: "t-rw", single: "A", confidence: 30, debate: "C", expected: FlipCategory::TriggeredRightWrong },
    Plan { id: "t-wr", single: "B", confidence: 30, debate: "A", expected: FlipCategory::TriggeredWrongRight },
];

pub fn dataset() -> Vec<DatasetRecord> {
    let lines: Vec<String> = PLANS
        .iter()
        .map(|p| {
            format!(
                r#"{{"id":"{}","question":"Which gas do plants absorb from the air?","options":["Carbon dioxide","Oxygen","Nitrogen","Helium"],"ground_truth":"A","split_tag":"fixture"}}"#,
                p.id
            )
        })
        .collect();
    parse_dataset(&lines.join("\n")).unwrap()
}

pub fn self_critique_reply(answer: &str, confidence: u32) -> String {
    format!(
        "Initial answer: {answer}\n\
         Initial reasoning: Photosynthesis takes in a gas and releases oxygen.\n\
         Initial confidence: {confidence}\n\
         Self-critique: However, maybe the question refers to respiration instead.\n\
         Disagreement confidence: 20\n\
         Final answer: {answer}\n\
         Final confidence: {confidence}"
    )
}

fn entry(id: &str, role: Role, text: String, tokens: (u64, u64)) -> ScriptEntry {
    ScriptEntry::new(role, text).for_record(id).tokens(tokens.0, tokens.1)
}

/// A one-round debate whose judge sides with whichever debater holds `answer`.
pub fn debate_script(id: &str, single: &str, answer: &str) -> Vec<ScriptEntry> {
    let side = if answer == single { "Affirmative" } else { "Negative" };
    vec![
        entry(id, Role::DebaterAffirmative, format!("The initial reasoning holds.\nAnswer: {single}"), AFF_TOKENS),
        entry(id, Role::DebaterNegative, format!("Consider the alternative.\nAnswer: {answer}"), NEG_TOKENS),
        entry(
            id,
            Role::JudgePerRound,
            format!(r#"{{"Preference":"Yes","Supported Side":"{side}","Reason":"better supported","Debate Answer":"{answer}"}}"#),
            JUDGE_TOKENS,
        ),
    ]
}

/// Script for a run where records with `debated(plan)` go to debate.
pub fn script(debated: impl Fn(&Plan) -> bool) -> ScriptedBackend {
    let mut entries = Vec::new();
    for p in &PLANS {
        entries.push(entry(p.id, Role::SelfCritique, self_critique_reply(p.single, p.confidence), SELF_CRITIQUE_TOKENS));
        if debated(p) {
            entries.extend(debate_script(p.id, p.single, p.debate));
        }
    }
    ScriptedBackend::new(entries)
}

pub fn selective_script() -> ScriptedBackend {
    script(|p| p.confidence < 70)
}

pub fn always_script() -> ScriptedBackend {
    script(|_| true)
}

pub fn never_script() -> ScriptedBackend {
    script(|_| false)
}

pub fn identity_model() -> DecisionModel {
    DecisionModel::fusion_identity(TAU, &Lexicons::shipped().version, 7)
}
