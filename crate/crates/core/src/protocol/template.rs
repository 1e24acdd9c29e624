use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::options::OptionSet;

/// Text substituted for `{IMAGE}`; the image itself travels beside the prompt.
pub const IMAGE_MARKER: &str = "[image attached]";

/// The five fixed protocol roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    SelfCritique,
    DebaterAffirmative,
    DebaterNegative,
    JudgePerRound,
    JudgeFinal,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::SelfCritique,
        Role::DebaterAffirmative,
        Role::DebaterNegative,
        Role::JudgePerRound,
        Role::JudgeFinal,
    ];

    /// File stem of the template for this role.
    pub fn file_stem(self) -> &'static str {
        match self {
            Role::SelfCritique => "self_critique",
            Role::DebaterAffirmative => "debater_affirmative",
            Role::DebaterNegative => "debater_negative",
            Role::JudgePerRound => "judge_round",
            Role::JudgeFinal => "judge_final",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::SelfCritique => "SelfCritique",
            Role::DebaterAffirmative => "DebaterAffirmative",
            Role::DebaterNegative => "DebaterNegative",
            Role::JudgePerRound => "JudgePerRound",
            Role::JudgeFinal => "JudgeFinal",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "qa")]
    Qa,
    #[serde(rename = "vqa")]
    Vqa,
}

impl Modality {
    pub fn dir_name(self) -> &'static str {
        match self {
            Modality::Qa => "qa",
            Modality::Vqa => "vqa",
        }
    }
}

/// The closed set of placeholder tokens a template may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Question,
    Options,
    Options2,
    Image,
    Transcript,
    Round,
    AffAns,
    NegAns,
}

impl Placeholder {
    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Question => "QUESTION",
            Placeholder::Options => "OPTIONS",
            Placeholder::Options2 => "OPTIONS2",
            Placeholder::Image => "IMAGE",
            Placeholder::Transcript => "TRANSCRIPT",
            Placeholder::Round => "ROUND",
            Placeholder::AffAns => "AFF_ANS",
            Placeholder::NegAns => "NEG_ANS",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Some(match token {
            "QUESTION" => Placeholder::Question,
            "OPTIONS" => Placeholder::Options,
            "OPTIONS2" => Placeholder::Options2,
            "IMAGE" => Placeholder::Image,
            "TRANSCRIPT" => Placeholder::Transcript,
            "ROUND" => Placeholder::Round,
            "AFF_ANS" => Placeholder::AffAns,
            "NEG_ANS" => Placeholder::NegAns,
            _ => return None,
        })
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.token())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template placeholder {0} has no binding")]
    MissingBinding(Placeholder),
    #[error("template contains unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("{role} template for {modality:?} {problem}")]
    ModalityMismatch {
        role: Role,
        modality: Modality,
        problem: &'static str,
    },
    #[error("OPTIONS2 must be an order-preserving subset of OPTIONS")]
    Options2NotSubset,
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z0-9_]*)\}").expect("static regex"))
}

/// A validated prompt template for one (role, modality) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    role: Role,
    modality: Modality,
    body: String,
    placeholders: BTreeSet<Placeholder>,
}

impl PromptTemplate {
    pub fn new(role: Role, modality: Modality, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let mut placeholders = BTreeSet::new();
        for caps in placeholder_re().captures_iter(&body) {
            let token = &caps[1];
            let ph = Placeholder::from_token(token)
                .ok_or_else(|| TemplateError::UnknownPlaceholder(token.to_string()))?;
            placeholders.insert(ph);
        }
        let has_image = placeholders.contains(&Placeholder::Image);
        match modality {
            Modality::Qa if has_image => {
                return Err(TemplateError::ModalityMismatch {
                    role,
                    modality,
                    problem: "must not reference {IMAGE}",
                })
            }
            Modality::Vqa if !has_image => {
                return Err(TemplateError::ModalityMismatch {
                    role,
                    modality,
                    problem: "must reference {IMAGE}",
                })
            }
            _ => {}
        }
        Ok(Self {
            role,
            modality,
            body,
            placeholders,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> impl Iterator<Item = Placeholder> + '_ {
        self.placeholders.iter().copied()
    }

    pub fn uses(&self, ph: Placeholder) -> bool {
        self.placeholders.contains(&ph)
    }

    pub fn render(&self, bindings: &PromptBindings) -> Result<String, TemplateError> {
        render_prompt(self, bindings)
    }
}

/// Opaque handle for an image attachment (a path or URL).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

/// Values for the placeholders of one prompt.
#[derive(Debug, Clone)]
pub struct PromptBindings {
    pub question: String,
    pub options: OptionSet,
    pub options2: Option<OptionSet>,
    pub image_ref: Option<ImageRef>,
    pub transcript: String,
    pub round: u32,
    pub aff_ans: Option<String>,
    pub neg_ans: Option<String>,
}

impl PromptBindings {
    pub fn new(question: impl Into<String>, options: OptionSet) -> Self {
        Self {
            question: question.into(),
            options,
            options2: None,
            image_ref: None,
            transcript: String::new(),
            round: 1,
            aff_ans: None,
            neg_ans: None,
        }
    }

    pub fn with_image(mut self, image: Option<ImageRef>) -> Self {
        self.image_ref = image;
        self
    }

    pub fn with_transcript(mut self, transcript: impl Into<String>) -> Self {
        self.transcript = transcript.into();
        self
    }

    pub fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn with_aff(mut self, aff: impl Into<String>) -> Self {
        self.aff_ans = Some(aff.into());
        self
    }

    pub fn with_neg(mut self, neg: impl Into<String>) -> Self {
        self.neg_ans = Some(neg.into());
        self
    }

    pub fn with_options2(mut self, options2: OptionSet) -> Result<Self, TemplateError> {
        if !self.options.is_ordered_subset(&options2) {
            return Err(TemplateError::Options2NotSubset);
        }
        self.options2 = Some(options2);
        Ok(self)
    }

    fn value(&self, ph: Placeholder) -> Option<String> {
        match ph {
            Placeholder::Question => Some(self.question.clone()),
            Placeholder::Options => Some(self.options.render()),
            Placeholder::Options2 => self.options2.as_ref().map(OptionSet::render),
            Placeholder::Image => self.image_ref.as_ref().map(|_| IMAGE_MARKER.to_string()),
            Placeholder::Transcript => Some(self.transcript.clone()),
            Placeholder::Round => Some(self.round.to_string()),
            Placeholder::AffAns => self.aff_ans.clone(),
            Placeholder::NegAns => self.neg_ans.clone(),
        }
    }
}

/// Substitute every placeholder of `template` from `bindings`.
///
/// Substitution is a single left-to-right pass over the template body, so
/// placeholder-like text inside a bound value is never expanded.
pub fn render_prompt(template: &PromptTemplate, bindings: &PromptBindings) -> Result<String, TemplateError> {
    if let Some(opts2) = &bindings.options2 {
        if !bindings.options.is_ordered_subset(opts2) {
            return Err(TemplateError::Options2NotSubset);
        }
    }
    let mut values = Vec::with_capacity(template.placeholders.len());
    for ph in template.placeholders() {
        let v = bindings.value(ph).ok_or(TemplateError::MissingBinding(ph))?;
        values.push((ph, v));
    }
    let mut out = String::with_capacity(template.body.len() + 256);
    let mut last = 0;
    for caps in placeholder_re().captures_iter(&template.body) {
        let whole = caps.get(0).expect("group 0");
        out.push_str(&template.body[last..whole.start()]);
        let ph = Placeholder::from_token(&caps[1]).expect("validated at construction");
        let (_, v) = values.iter().find(|(p, _)| *p == ph).expect("collected above");
        out.push_str(v);
        last = whole.end();
    }
    out.push_str(&template.body[last..]);
    Ok(out)
}

/// All five role templates for one modality.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    modality: Modality,
    templates: Vec<PromptTemplate>,
}

const SHIPPED: [(Modality, Role, &str); 10] = [
    (Modality::Qa, Role::SelfCritique, include_str!("../../data/templates/qa/self_critique.txt")),
    (Modality::Qa, Role::DebaterAffirmative, include_str!("../../data/templates/qa/debater_affirmative.txt")),
    (Modality::Qa, Role::DebaterNegative, include_str!("../../data/templates/qa/debater_negative.txt")),
    (Modality::Qa, Role::JudgePerRound, include_str!("../../data/templates/qa/judge_round.txt")),
    (Modality::Qa, Role::JudgeFinal, include_str!("../../data/templates/qa/judge_final.txt")),
    (Modality::Vqa, Role::SelfCritique, include_str!("../../data/templates/vqa/self_critique.txt")),
    (Modality::Vqa, Role::DebaterAffirmative, include_str!("../../data/templates/vqa/debater_affirmative.txt")),
    (Modality::Vqa, Role::DebaterNegative, include_str!("../../data/templates/vqa/debater_negative.txt")),
    (Modality::Vqa, Role::JudgePerRound, include_str!("../../data/templates/vqa/judge_round.txt")),
    (Modality::Vqa, Role::JudgeFinal, include_str!("../../data/templates/vqa/judge_final.txt")),
];

impl TemplateSet {
    /// The templates compiled into the crate.
    pub fn shipped(modality: Modality) -> Self {
        let templates = SHIPPED
            .iter()
            .filter(|(m, _, _)| *m == modality)
            .map(|(m, r, body)| PromptTemplate::new(*r, *m, *body).expect("shipped templates are valid"))
            .collect();
        Self { modality, templates }
    }

    /// Load `<dir>/<qa|vqa>/<role>.txt` for every role; missing files fall back to the shipped text.
    pub fn load(dir: &Path, modality: Modality) -> Result<Self, TemplateError> {
        let mut templates = Vec::with_capacity(Role::ALL.len());
        for role in Role::ALL {
            let path = dir.join(modality.dir_name()).join(format!("{}.txt", role.file_stem()));
            let body = match std::fs::read_to_string(&path) {
                Ok(body) => body,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => SHIPPED
                    .iter()
                    .find(|(m, r, _)| *m == modality && *r == role)
                    .map(|(_, _, b)| b.to_string())
                    .expect("every role is shipped"),
                Err(source) => {
                    return Err(TemplateError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            };
            templates.push(PromptTemplate::new(role, modality, body)?);
        }
        Ok(Self { modality, templates })
    }

    /// Write the shipped templates under `dir` for editing.
    pub fn write_shipped(dir: &Path) -> std::io::Result<()> {
        for (m, r, body) in SHIPPED {
            let sub = dir.join(m.dir_name());
            std::fs::create_dir_all(&sub)?;
            std::fs::write(sub.join(format!("{}.txt", r.file_stem())), body)?;
        }
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn get(&self, role: Role) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.role == role)
            .expect("template sets always hold every role")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> OptionSet {
        OptionSet::lettered(&["4", "5"]).unwrap()
    }

    #[test]
    fn single_substitution() {
        let t = PromptTemplate::new(Role::SelfCritique, Modality::Qa, "Answer: {QUESTION}").unwrap();
        let b = PromptBindings::new("2+2?", opts());
        assert_eq!(render_prompt(&t, &b).unwrap(), "Answer: 2+2?");
    }

    #[test]
    fn missing_options2_is_reported() {
        let t = PromptTemplate::new(Role::JudgeFinal, Modality::Qa, "Pick from {OPTIONS2}").unwrap();
        let b = PromptBindings::new("q", opts());
        assert!(matches!(
            render_prompt(&t, &b),
            Err(TemplateError::MissingBinding(Placeholder::Options2))
        ));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let err = PromptTemplate::new(Role::SelfCritique, Modality::Qa, "x {ANSWER}").unwrap_err();
        assert!(matches!(err, TemplateError::UnknownPlaceholder(t) if t == "ANSWER"));
    }

    #[test]
    fn modality_rules() {
        assert!(PromptTemplate::new(Role::SelfCritique, Modality::Qa, "{IMAGE} {QUESTION}").is_err());
        assert!(PromptTemplate::new(Role::SelfCritique, Modality::Vqa, "{QUESTION}").is_err());
    }

    #[test]
    fn substitution_is_not_recursive() {
        let t = PromptTemplate::new(Role::SelfCritique, Modality::Qa, "{QUESTION}|{ROUND}").unwrap();
        let b = PromptBindings::new("{ROUND}", opts()).with_round(3);
        assert_eq!(render_prompt(&t, &b).unwrap(), "{ROUND}|3");
    }

    #[test]
    fn json_braces_are_not_placeholders() {
        let t = PromptTemplate::new(Role::JudgeFinal, Modality::Qa, r#"{"Reason": "..."} {OPTIONS2}"#).unwrap();
        assert_eq!(t.placeholders().collect::<Vec<_>>(), vec![Placeholder::Options2]);
    }

    #[test]
    fn vqa_self_critique_opens_with_image_instruction() {
        let set = TemplateSet::shipped(Modality::Vqa);
        let b = PromptBindings::new("What color is the car?", opts()).with_image(Some(ImageRef("car.png".into())));
        let text = set.get(Role::SelfCritique).render(&b).unwrap();
        assert!(text.starts_with("Look at the image and pick an option"));
        assert!(!placeholder_re().is_match(&text));
        assert!(text.contains(IMAGE_MARKER));
        assert!(!text.contains("car.png"));
    }

    #[test]
    fn shipped_sets_are_complete() {
        for m in [Modality::Qa, Modality::Vqa] {
            let set = TemplateSet::shipped(m);
            for r in Role::ALL {
                assert_eq!(set.get(r).role(), r);
            }
            assert!(set.get(Role::JudgeFinal).uses(Placeholder::Options2));
            assert!(set.get(Role::DebaterAffirmative).uses(Placeholder::AffAns));
        }
    }

    #[test]
    fn options2_must_be_subset() {
        let b = PromptBindings::new("q", opts());
        let other = OptionSet::lettered(&["9"]).unwrap();
        assert!(b.with_options2(other).is_err());
    }
}
