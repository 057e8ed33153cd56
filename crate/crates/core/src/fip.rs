//! Flipped-interaction sessions: the model asks the questions, the student
//! answers, and the loop ends once the model emits the requested quiz.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{McqQuestion, QuestionKind};
use crate::mcq::{parse_mcq, render_mcq};
use crate::vetting::token_jaccard;

pub const DEFAULT_MAX_TURNS: usize = 8;
pub const DEFAULT_ANSWER_PROBE: &str = "I'm not sure; choose what you think is most instructive.";
pub const DIVERSIFY_INSTRUCTION: &str = "Ask about a different aspect; do not repeat earlier questions.";
pub const REPETITION_THRESHOLD: f64 = 0.9;
pub const MAX_TALKING_POINTS: usize = 10;
/// Marker the open-ended template asks the model to put before its final question.
pub const JITT_MARKER: &str = "JiTT Quiz:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFormat {
    ClickerPoll,
    ClickerQuiz,
    JittOpen,
}

impl QuestionFormat {
    fn phrase(self) -> &'static str {
        match self {
            QuestionFormat::ClickerPoll => "clicker poll",
            QuestionFormat::ClickerQuiz => "clicker quiz",
            QuestionFormat::JittOpen => "JiTT quiz",
        }
    }

    pub fn question_kind(self) -> Option<QuestionKind> {
        match self {
            QuestionFormat::ClickerPoll => Some(QuestionKind::Poll),
            QuestionFormat::ClickerQuiz => Some(QuestionKind::ClickerQuiz),
            QuestionFormat::JittOpen => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionGoal {
    pub topic: String,
    #[serde(default)]
    pub focus: Option<String>,
    pub format: QuestionFormat,
    #[serde(default)]
    pub option_count: Option<u8>,
    #[serde(default)]
    pub constraints: Vec<String>,
}

impl QuestionGoal {
    pub fn validate(&self) -> Result<(), FipError> {
        if self.topic.trim().is_empty() {
            return Err(FipError::InvalidGoal("topic is empty".into()));
        }
        if self.format != QuestionFormat::JittOpen {
            match self.option_count {
                Some(2..=8) => {}
                Some(n) => return Err(FipError::InvalidGoal(format!("option_count {n} outside 2..=8"))),
                None => {
                    return Err(FipError::InvalidGoal(
                        "option_count required for polls and quizzes".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Model,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Logical time: the turn's position in the transcript.
    pub at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FipStatus {
    Completed,
    MaxTurnsExceeded,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FipResult {
    Mcq(McqQuestion),
    OpenEnded(String),
}

impl FipResult {
    pub fn text(&self) -> String {
        match self {
            FipResult::Mcq(q) => render_mcq(q),
            FipResult::OpenEnded(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderIdentity {
    pub provider: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FipTranscript {
    pub goal: QuestionGoal,
    pub provider: ProviderIdentity,
    pub turns: Vec<Turn>,
    pub status: FipStatus,
    #[serde(default)]
    pub result: Option<FipResult>,
    #[serde(default)]
    pub error: Option<String>,
}

impl FipTranscript {
    pub fn model_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::Model)
    }

    pub fn seed_prompt(&self) -> Option<&str> {
        self.turns.first().map(|t| t.text.as_str())
    }

    /// Every user-authored message, seed prompt first.
    pub fn prompts(&self) -> Vec<String> {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.text.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("provider failure: {0}")]
pub struct ProviderError(pub String);

/// A text generator. Calls carry the whole history, so implementations can
/// stay stateless and must not touch artifact state.
pub trait Provider: Send + Sync {
    fn identity(&self) -> ProviderIdentity;
    fn generate(&self, prompt: &str, history: &[Turn]) -> Result<String, ProviderError>;
}

/// Replies in script order, indexed by how many model turns the history holds.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    name: String,
    replies: Vec<Result<String, String>>,
}

impl ScriptedProvider {
    pub fn new(replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedProvider {
            name: "scripted".into(),
            replies: replies.into_iter().map(|r| Ok(r.into())).collect(),
        }
    }

    pub fn with_failures(replies: Vec<Result<String, String>>) -> Self {
        ScriptedProvider {
            name: "scripted".into(),
            replies,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Provider for ScriptedProvider {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            provider: self.name.clone(),
            model: "script".into(),
        }
    }

    fn generate(&self, _prompt: &str, history: &[Turn]) -> Result<String, ProviderError> {
        let idx = history.iter().filter(|t| t.speaker == Speaker::Model).count();
        match self.replies.get(idx).or(self.replies.last()) {
            Some(Ok(text)) => Ok(text.clone()),
            Some(Err(e)) => Err(ProviderError(e.clone())),
            None => Err(ProviderError("script is empty".into())),
        }
    }
}

/// Plays back the model turns of a recorded transcript.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    identity: ProviderIdentity,
    inner: ScriptedProvider,
}

impl ReplayProvider {
    pub fn from_transcript(transcript: &FipTranscript) -> Self {
        let mut replies: Vec<Result<String, String>> = transcript.model_turns().map(|t| Ok(t.text.clone())).collect();
        if transcript.status == FipStatus::ProviderError {
            replies.push(Err(transcript
                .error
                .clone()
                .unwrap_or_else(|| "recorded failure".into())));
        }
        ReplayProvider {
            identity: transcript.provider.clone(),
            inner: ScriptedProvider::with_failures(replies),
        }
    }
}

impl Provider for ReplayProvider {
    fn identity(&self) -> ProviderIdentity {
        self.identity.clone()
    }

    fn generate(&self, prompt: &str, history: &[Turn]) -> Result<String, ProviderError> {
        let idx = history.iter().filter(|t| t.speaker == Speaker::Model).count();
        if idx >= self.inner.replies.len() {
            return Err(ProviderError("recording exhausted".into()));
        }
        self.inner.generate(prompt, history)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FipError {
    #[error("invalid goal: {0}")]
    InvalidGoal(String),
    #[error("max_turns must be at least 1")]
    BadPolicy,
    #[error("no responses to consolidate")]
    EmptyInput,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unknown cue template {0}")]
    UnknownCue(usize),
    #[error("cue template {cue} takes {expected} slot(s), got {got}")]
    ArityMismatch { cue: usize, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FipPolicy {
    pub max_turns: usize,
    pub answer_probe: String,
}

impl Default for FipPolicy {
    fn default() -> Self {
        FipPolicy {
            max_turns: DEFAULT_MAX_TURNS,
            answer_probe: DEFAULT_ANSWER_PROBE.into(),
        }
    }
}

fn count_word(n: u8) -> String {
    match n {
        2 => "two".into(),
        3 => "three".into(),
        4 => "four".into(),
        5 => "five".into(),
        6 => "six".into(),
        7 => "seven".into(),
        8 => "eight".into(),
        other => other.to_string(),
    }
}

pub fn build_flipped_prompt(goal: &QuestionGoal) -> String {
    let about = goal.focus.as_deref().unwrap_or(&goal.topic);
    let mut prompt = format!(
        "Please ask me questions to help me understand {}. Once you have enough information, create a {}",
        goal.topic,
        goal.format.phrase()
    );
    match (goal.format, goal.option_count) {
        (QuestionFormat::JittOpen, _) | (_, None) => {}
        (_, Some(n)) => prompt.push_str(&format!(" with {} choices", count_word(n))),
    }
    prompt.push_str(&format!(" about {about}."));
    if goal.format == QuestionFormat::JittOpen {
        prompt.push_str(&format!(" Begin the final open-ended question with \"{JITT_MARKER}\"."));
    }
    for c in &goal.constraints {
        prompt.push('\n');
        prompt.push_str(c);
    }
    prompt
}

fn extract_result(goal: &QuestionGoal, reply: &str) -> Option<FipResult> {
    match goal.format.question_kind() {
        Some(kind) => parse_mcq(reply, kind).question.map(FipResult::Mcq),
        None => {
            let lower = reply.to_ascii_lowercase();
            let at = lower.find(&JITT_MARKER.to_ascii_lowercase())?;
            let text = reply[at + JITT_MARKER.len()..].trim();
            (!text.is_empty()).then(|| FipResult::OpenEnded(text.to_string()))
        }
    }
}

/// Returns the diversification instruction when the latest model turn is a
/// near-repeat of any earlier one.
pub fn detect_repetition(turns: &[Turn]) -> Option<&'static str> {
    let model: Vec<&Turn> = turns.iter().filter(|t| t.speaker == Speaker::Model).collect();
    let (latest, earlier) = model.split_last()?;
    earlier
        .iter()
        .any(|t| token_jaccard(&t.text, &latest.text) >= REPETITION_THRESHOLD)
        .then_some(DIVERSIFY_INSTRUCTION)
}

pub fn run_fip_session(
    goal: &QuestionGoal,
    provider: &dyn Provider,
    policy: &FipPolicy,
) -> Result<FipTranscript, FipError> {
    goal.validate()?;
    if policy.max_turns == 0 {
        return Err(FipError::BadPolicy);
    }
    let mut transcript = FipTranscript {
        goal: goal.clone(),
        provider: provider.identity(),
        turns: vec![Turn {
            speaker: Speaker::User,
            text: build_flipped_prompt(goal),
            at: 0,
        }],
        status: FipStatus::MaxTurnsExceeded,
        result: None,
        error: None,
    };
    let mut model_turns = 0;
    while model_turns < policy.max_turns {
        let prompt = transcript.turns.last().map(|t| t.text.clone()).unwrap_or_default();
        let reply = match provider.generate(&prompt, &transcript.turns) {
            Ok(r) => r,
            Err(e) => {
                transcript.status = FipStatus::ProviderError;
                transcript.error = Some(e.0);
                return Ok(transcript);
            }
        };
        let at = transcript.turns.len() as u64;
        transcript.turns.push(Turn {
            speaker: Speaker::Model,
            text: reply,
            at,
        });
        model_turns += 1;
        if let Some(result) = extract_result(goal, &transcript.turns[at as usize].text) {
            transcript.status = FipStatus::Completed;
            transcript.result = Some(result);
            return Ok(transcript);
        }
        if model_turns == policy.max_turns {
            break;
        }
        let answer = detect_repetition(&transcript.turns)
            .map(str::to_string)
            .unwrap_or_else(|| policy.answer_probe.clone());
        let at = transcript.turns.len() as u64;
        transcript.turns.push(Turn {
            speaker: Speaker::User,
            text: answer,
            at,
        });
    }
    transcript.status = FipStatus::MaxTurnsExceeded;
    Ok(transcript)
}

pub fn consolidation_prompt(responses: &[String]) -> String {
    let mut seen = std::collections::BTreeSet::new();
    let mut prompt = String::from(
        "Summarize the following student responses into talking points for a class discussion, one per line:\n",
    );
    for r in responses {
        let r = r.trim();
        if seen.insert(r) {
            prompt.push_str("- ");
            prompt.push_str(r);
            prompt.push('\n');
        }
    }
    prompt
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    line
}

pub fn consolidate_responses(responses: &[String], provider: &dyn Provider) -> Result<Vec<String>, FipError> {
    if responses.iter().all(|r| r.trim().is_empty()) {
        return Err(FipError::EmptyInput);
    }
    let prompt = consolidation_prompt(responses);
    let reply = provider.generate(&prompt, &[])?;
    Ok(reply
        .lines()
        .map(strip_bullet)
        .filter(|l| !l.is_empty())
        .take(MAX_TALKING_POINTS)
        .map(str::to_string)
        .collect())
}

pub const CUE_TEMPLATES: [&str; 4] = [
    "How are … and … alike?",
    "What are the strengths and weaknesses of …?",
    "What would happen if …?",
    "What is the evidence to support …?",
];

const SLOT: &str = "…";

/// Fills cue template `cue_id` (1-based) with `slots` in order.
pub fn fill_cue_template(cue_id: usize, slots: &[&str]) -> Result<String, FipError> {
    let template = cue_id
        .checked_sub(1)
        .and_then(|i| CUE_TEMPLATES.get(i))
        .ok_or(FipError::UnknownCue(cue_id))?;
    let expected = template.matches(SLOT).count();
    if slots.len() != expected {
        return Err(FipError::ArityMismatch {
            cue: cue_id,
            expected,
            got: slots.len(),
        });
    }
    let mut out = String::new();
    let mut parts = template.split(SLOT);
    out.push_str(parts.next().unwrap_or_default());
    for (part, slot) in parts.zip(slots) {
        out.push_str(slot);
        out.push_str(part);
    }
    Ok(out)
}
