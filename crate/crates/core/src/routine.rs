//! Poll-prompt-quiz and quiz-prompt-discuss sessions as explicit state
//! machines, plus the question instances students vote on.
//!
//! Everything here is a plain value with `check_*` functions that only read
//! and `apply_*` functions that mutate an already-validated value. The
//! classroom engine calls the former while deciding a command and the latter
//! when applying its events, live or during replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{grade_response, ActorRef, Label, LabelSet, McqQuestion, Role, Timestamp};
use crate::fip::ProviderIdentity;
use crate::vetting::Attachment;

pub const DEFAULT_QUIZ_TIME_LIMIT_S: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutineKind {
    PollPromptQuiz,
    QuizPromptDiscuss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Created,
    PollOpen,
    PollClosed,
    PromptPhase,
    QuizOpen,
    QuizClosed,
    JittOpen,
    Consolidated,
    Discussed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

const PPQ_ORDER: [Phase; 7] = [
    Phase::Created,
    Phase::PollOpen,
    Phase::PollClosed,
    Phase::PromptPhase,
    Phase::QuizOpen,
    Phase::QuizClosed,
    Phase::Discussed,
];

const QPD_ORDER: [Phase; 5] = [
    Phase::Created,
    Phase::JittOpen,
    Phase::PromptPhase,
    Phase::Consolidated,
    Phase::Discussed,
];

impl RoutineKind {
    /// Declared phase order; sessions only ever move forward along it.
    pub fn phase_order(self) -> &'static [Phase] {
        match self {
            RoutineKind::PollPromptQuiz => &PPQ_ORDER,
            RoutineKind::QuizPromptDiscuss => &QPD_ORDER,
        }
    }
}

/// Which operation drives a transition. `advance_phase` may only perform
/// the `Advance` ones; the rest belong to open/close/consolidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    OpenPoll,
    ClosePoll,
    Advance,
    OpenQuiz,
    CloseQuiz,
    OpenJitt,
    Consolidate,
}

pub fn transition_trigger(kind: RoutineKind, from: Phase, to: Phase, prompt_phase_enabled: bool) -> Option<Trigger> {
    use Phase::*;
    match (kind, from, to) {
        (RoutineKind::PollPromptQuiz, Created, PollOpen) => Some(Trigger::OpenPoll),
        (RoutineKind::PollPromptQuiz, PollOpen, PollClosed) => Some(Trigger::ClosePoll),
        (RoutineKind::PollPromptQuiz, PollClosed, PromptPhase) if prompt_phase_enabled => Some(Trigger::Advance),
        (RoutineKind::PollPromptQuiz, PollClosed | PromptPhase, QuizOpen) => Some(Trigger::OpenQuiz),
        (RoutineKind::PollPromptQuiz, QuizOpen, QuizClosed) => Some(Trigger::CloseQuiz),
        (RoutineKind::PollPromptQuiz, QuizClosed, Discussed) => Some(Trigger::Advance),
        (RoutineKind::QuizPromptDiscuss, Created, JittOpen) => Some(Trigger::OpenJitt),
        (RoutineKind::QuizPromptDiscuss, JittOpen, PromptPhase) => Some(Trigger::Advance),
        (RoutineKind::QuizPromptDiscuss, PromptPhase, Consolidated) => Some(Trigger::Consolidate),
        (RoutineKind::QuizPromptDiscuss, Consolidated, Discussed) => Some(Trigger::Advance),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub quiz_time_limit_s: i64,
    pub prompt_phase_enabled: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            quiz_time_limit_s: DEFAULT_QUIZ_TIME_LIMIT_S,
            prompt_phase_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyChoice {
    Moderate,
    Elevated,
}

impl DifficultyChoice {
    pub const ELEVATED_FROM: f64 = 6.0;

    /// Moderate covers the 1-5 bands, elevated 6-10.
    pub fn admits(self, difficulty: f64) -> bool {
        match self {
            DifficultyChoice::Moderate => difficulty < Self::ELEVATED_FROM,
            DifficultyChoice::Elevated => difficulty >= Self::ELEVATED_FROM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutineSession {
    pub id: String,
    pub kind: RoutineKind,
    pub course: String,
    pub phase: Phase,
    pub config: SessionConfig,
    pub created_by: String,
    pub created_at: Timestamp,
    /// Phases entered so far, with entry time, starting at `Created`.
    pub history: Vec<(Phase, Timestamp)>,
    pub poll_instance: Option<String>,
    pub quiz_instance: Option<String>,
    pub quiz_deadline: Option<Timestamp>,
    pub jitt_instance: Option<String>,
    pub jitt_assigned_at: Option<Timestamp>,
    pub difficulty_choices: BTreeMap<String, DifficultyChoice>,
    pub talking_points: Vec<String>,
    /// Peer discussion groups, recorded for reference only.
    pub groups: Vec<Vec<String>>,
}

impl RoutineSession {
    pub fn new(
        id: impl Into<String>,
        kind: RoutineKind,
        course: impl Into<String>,
        config: SessionConfig,
        created_by: impl Into<String>,
        at: Timestamp,
    ) -> Self {
        RoutineSession {
            id: id.into(),
            kind,
            course: course.into(),
            phase: Phase::Created,
            config,
            created_by: created_by.into(),
            created_at: at,
            history: vec![(Phase::Created, at)],
            poll_instance: None,
            quiz_instance: None,
            quiz_deadline: None,
            jitt_instance: None,
            jitt_assigned_at: None,
            difficulty_choices: BTreeMap::new(),
            talking_points: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn check_transition(&self, to: Phase, trigger: Trigger) -> Result<(), RoutineError> {
        match transition_trigger(self.kind, self.phase, to, self.config.prompt_phase_enabled) {
            Some(t) if t == trigger => Ok(()),
            _ => Err(RoutineError::PhaseViolation {
                session: self.id.clone(),
                from: self.phase,
                to,
            }),
        }
    }

    pub fn apply_phase(&mut self, to: Phase, at: Timestamp) {
        self.phase = to;
        self.history.push((to, at));
    }

    pub fn accepts_submissions(&self) -> bool {
        match self.kind {
            RoutineKind::PollPromptQuiz => self.phase == Phase::PromptPhase,
            RoutineKind::QuizPromptDiscuss => matches!(self.phase, Phase::JittOpen | Phase::PromptPhase),
        }
    }

    pub fn check_difficulty_choice(&self) -> Result<(), RoutineError> {
        if self.kind == RoutineKind::QuizPromptDiscuss && self.phase == Phase::JittOpen {
            Ok(())
        } else {
            Err(RoutineError::PhaseViolation {
                session: self.id.clone(),
                from: self.phase,
                to: self.phase,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Poll,
    Quiz,
    Jitt,
}

impl InstanceKind {
    pub fn prefix(self) -> &'static str {
        match self {
            InstanceKind::Poll => "p",
            InstanceKind::Quiz => "q",
            InstanceKind::Jitt => "j",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum InstanceContent {
    Mcq(McqQuestion),
    OpenEnded(String),
}

impl InstanceContent {
    pub fn mcq(&self) -> Option<&McqQuestion> {
        match self {
            InstanceContent::Mcq(q) => Some(q),
            InstanceContent::OpenEnded(_) => None,
        }
    }
}

/// Live or frozen vote counts. `counts[l]` is the number of ballots that
/// include label `l`; with single-label ballots it sums to `voters.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub question_ref: String,
    pub counts: BTreeMap<Label, u64>,
    pub voters: BTreeSet<String>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    pub session: String,
    pub kind: InstanceKind,
    pub content: InstanceContent,
    #[serde(default)]
    pub bank_entry: Option<String>,
    pub opened_at: Timestamp,
    pub deadline: Option<Timestamp>,
    pub ballots: BTreeMap<String, LabelSet>,
    /// When each ballot was accepted.
    #[serde(default)]
    pub voted_at: BTreeMap<String, Timestamp>,
    pub closed_at: Option<Timestamp>,
}

impl QuestionInstance {
    pub fn is_open(&self) -> bool {
        self.closed_at.is_none()
    }

    pub fn tally(&self) -> VoteTally {
        let mut counts: BTreeMap<Label, u64> = BTreeMap::new();
        if let Some(q) = self.content.mcq() {
            for l in q.labels() {
                counts.insert(l, 0);
            }
        }
        for ballot in self.ballots.values() {
            for l in ballot {
                *counts.entry(*l).or_insert(0) += 1;
            }
        }
        VoteTally {
            question_ref: self.id.clone(),
            counts,
            voters: self.ballots.keys().cloned().collect(),
            closed: !self.is_open(),
        }
    }

    pub fn check_vote(&self, actor: &ActorRef, labels: &LabelSet, at: Timestamp) -> Result<(), RoutineError> {
        if actor.role() != Role::Student {
            return Err(RoutineError::Unauthorized("only students vote".into()));
        }
        let Some(question) = self.content.mcq() else {
            return Err(RoutineError::NotVotable(self.id.clone()));
        };
        if !self.is_open() {
            return Err(RoutineError::DeadlineExpired);
        }
        if self.deadline.is_some_and(|d| at > d) {
            return Err(RoutineError::DeadlineExpired);
        }
        if self.ballots.contains_key(actor.id()) {
            return Err(RoutineError::AlreadyVoted);
        }
        if labels.is_empty() {
            return Err(RoutineError::EmptyBallot);
        }
        if let Some(bad) = labels.iter().find(|l| !question.has_label(**l)) {
            return Err(RoutineError::UnknownLabel(*bad));
        }
        Ok(())
    }

    pub fn apply_vote(&mut self, actor: &str, labels: LabelSet, at: Timestamp) {
        if !self.ballots.contains_key(actor) {
            self.ballots.insert(actor.to_string(), labels);
            self.voted_at.insert(actor.to_string(), at);
        }
    }

    /// Tally visibility: staff always, students after voting or once closed.
    pub fn view_tally(&self, actor: &ActorRef) -> Result<VoteTally, RoutineError> {
        if actor.role() == Role::Student && self.is_open() && !self.ballots.contains_key(actor.id()) {
            return Err(RoutineError::VoteRequired);
        }
        Ok(self.tally())
    }

    /// Fraction of ballots matching the key exactly, if anyone voted.
    pub fn accuracy(&self) -> Option<f64> {
        let q = self.content.mcq()?;
        if self.ballots.is_empty() {
            return None;
        }
        let correct = self
            .ballots
            .values()
            .filter(|b| grade_response(q, b).is_ok_and(|g| g.correct))
            .count();
        Some(correct as f64 / self.ballots.len() as f64)
    }

    pub fn correct_voters(&self) -> Vec<&str> {
        let Some(q) = self.content.mcq() else { return vec![] };
        self.ballots
            .iter()
            .filter(|(_, b)| grade_response(q, b).is_ok_and(|g| g.correct))
            .map(|(a, _)| a.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum SubmissionContent {
    Mcq(McqQuestion),
    OpenEnded(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSubmission {
    pub id: String,
    pub author: ActorRef,
    pub session_ref: String,
    pub content: SubmissionContent,
    pub prompts: Vec<String>,
    #[serde(default)]
    pub transcript_ref: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub provider: Option<ProviderIdentity>,
    #[serde(default)]
    pub attachment: Option<Attachment>,
    pub submitted_at: Timestamp,
    /// Seconds since the JiTT assignment, for JiTT sessions.
    #[serde(default)]
    pub latency_s: Option<i64>,
    pub entry_ref: String,
}

impl StudentSubmission {
    pub fn check(&self) -> Result<(), RoutineError> {
        if self.prompts.iter().all(|p| p.trim().is_empty()) {
            return Err(RoutineError::InvalidSubmission(
                "at least one prompt is required".into(),
            ));
        }
        if let SubmissionContent::OpenEnded(t) = &self.content {
            if t.trim().is_empty() {
                return Err(RoutineError::InvalidSubmission("question text is empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutineError {
    #[error("session {session}: cannot move from {from} to {to}")]
    PhaseViolation { session: String, from: Phase, to: Phase },
    #[error("vote already recorded")]
    AlreadyVoted,
    #[error("voting window has closed")]
    DeadlineExpired,
    #[error("label {0} is not an option")]
    UnknownLabel(Label),
    #[error("ballot names no option")]
    EmptyBallot,
    #[error("vote before viewing results")]
    VoteRequired,
    #[error("{0}")]
    InvalidSubmission(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("instance {0} has no options to vote on")]
    NotVotable(String),
}
