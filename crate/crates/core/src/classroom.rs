//! The event-sourced classroom engine.
//!
//! Every command is turned into events by [`decide`], which only reads state.
//! Events are appended to the log and then folded in by [`apply`]. Rebuilding
//! from a log runs the very same [`apply`], so live and replayed state agree
//! byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{self, ComprehensionPoint, DaysHistogram, DifficultyStats, Standing};
use crate::domain::{ActorRef, DomainError, LabelSet, McqQuestion, Role, Timestamp};
use crate::fip::{FipTranscript, ProviderIdentity};
use crate::mcq::{parse_mcq, render_mcq};
use crate::pacing::{
    init_pacing, observe_quiz_outcome, recommend_next, start_new_topic, PacingError, PacingParams, PacingState,
    Recommendation,
};
use crate::routine::{
    transition_trigger, DifficultyChoice, InstanceContent, InstanceKind, Phase, QuestionInstance, RoutineError,
    RoutineKind, RoutineSession, SessionConfig, StudentSubmission, SubmissionContent, Trigger, VoteTally,
};
use crate::store::{
    canonical_json, scan_log, EventEnvelope, EventLog, FileStorage, LogStorage, MemoryStorage, StoreError,
    DEFAULT_SNAPSHOT_EVERY,
};
use crate::vetting::{
    id_number, reproduce_check, Attachment, Bank, BankEntry, BankFilter, BankItem, Decision, EntryStatus, Provenance,
    ReproduceCheck, VettingError,
};

pub const SYSTEM_ACTOR: &str = "system";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Routine(#[from] RoutineError),
    #[error(transparent)]
    Vetting(#[from] VettingError),
    #[error(transparent)]
    Pacing(#[from] PacingError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown {what} {id}")]
    NotFound { what: &'static str, id: String },
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
}

impl EngineError {
    /// Stable machine code, named after the underlying error variant.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Routine(e) => match e {
                RoutineError::PhaseViolation { .. } => "PhaseViolation",
                RoutineError::AlreadyVoted => "AlreadyVoted",
                RoutineError::DeadlineExpired => "DeadlineExpired",
                RoutineError::UnknownLabel(_) => "UnknownLabel",
                RoutineError::EmptyBallot => "EmptyBallot",
                RoutineError::VoteRequired => "VoteRequired",
                RoutineError::InvalidSubmission(_) => "InvalidSubmission",
                RoutineError::Unauthorized(_) => "Unauthorized",
                RoutineError::NotVotable(_) => "NotVotable",
            },
            EngineError::Vetting(e) => match e {
                VettingError::Unauthorized => "Unauthorized",
                VettingError::AlreadyDecided(_) => "AlreadyDecided",
                VettingError::UnknownEntry(_) => "UnknownEntry",
                VettingError::BadDifficulty => "BadDifficulty",
                VettingError::NotSelectable(_) => "NotSelectable",
            },
            EngineError::Pacing(e) => match e {
                PacingError::BadParams(_) => "BadParams",
                PacingError::OutOfRange => "OutOfRange",
                PacingError::EmptyBank => "EmptyBank",
            },
            EngineError::Domain(_) => "InvalidQuestion",
            EngineError::Store(StoreError::CorruptRecord { .. }) => "CorruptRecord",
            EngineError::Store(_) => "StorageFailure",
            EngineError::NotFound { .. } => "NotFound",
            EngineError::Unauthorized(_) => "Unauthorized",
            EngineError::Invalid(_) => "InvalidRequest",
            EngineError::Conflict(_) => "Conflict",
        }
    }
}

fn not_found(what: &'static str, id: &str) -> EngineError {
    EngineError::NotFound {
        what,
        id: id.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub session: String,
    pub instance: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseState {
    pub id: String,
    pub instructor: String,
    pub pacing: PacingState,
    /// Quiz accuracies in the order they were observed.
    pub observations: Vec<Observation>,
    /// Leaderboard points: correct quiz ballots plus approved authored entries.
    pub scores: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draft {
    pub question: Vec<String>,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub reviewer: String,
    pub check: ReproduceCheck,
    #[serde(default)]
    pub provider: Option<ProviderIdentity>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub session: u64,
    pub poll: u64,
    pub quiz: u64,
    pub jitt: u64,
    pub submission: u64,
    pub transcript: u64,
}

/// Everything the log implies. Serializes canonically for comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub actors: BTreeMap<String, Role>,
    pub tokens: BTreeMap<String, String>,
    pub courses: BTreeMap<String, CourseState>,
    pub sessions: BTreeMap<String, RoutineSession>,
    pub instances: BTreeMap<String, QuestionInstance>,
    pub submissions: BTreeMap<String, StudentSubmission>,
    pub transcripts: BTreeMap<String, FipTranscript>,
    pub bank: Bank,
    pub checks: BTreeMap<String, Vec<CheckRecord>>,
    /// Chat drafts keyed `session/actor`.
    pub drafts: BTreeMap<String, Draft>,
    pub idempotency: BTreeMap<String, String>,
    pub counters: Counters,
    pub last_seq: u64,
    pub last_ts: Timestamp,
}

impl ClassState {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("state serializes"))
    }

    pub fn actor_for_token(&self, token: &str) -> Option<ActorRef> {
        let id = self.tokens.get(token)?;
        let role = *self.actors.get(id)?;
        Some(ActorRef::new(id.clone(), role))
    }

    pub fn actor(&self, id: &str) -> Option<ActorRef> {
        self.actors.get(id).map(|r| ActorRef::new(id, *r))
    }

    pub fn session(&self, id: &str) -> Result<&RoutineSession, EngineError> {
        self.sessions.get(id).ok_or_else(|| not_found("session", id))
    }

    pub fn instance(&self, id: &str) -> Result<&QuestionInstance, EngineError> {
        self.instances.get(id).ok_or_else(|| not_found("instance", id))
    }

    pub fn course(&self, id: &str) -> Result<&CourseState, EngineError> {
        self.courses.get(id).ok_or_else(|| not_found("course", id))
    }

    pub fn students(&self) -> impl Iterator<Item = &str> {
        self.actors
            .iter()
            .filter(|(_, r)| **r == Role::Student)
            .map(|(a, _)| a.as_str())
    }
}

/// Where an opened question comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSource {
    /// An approved bank entry.
    Bank(String),
    Inline(InstanceContent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRequest {
    pub content: SubmissionContent,
    pub prompts: Vec<String>,
    #[serde(default)]
    pub transcript_ref: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub attachment: Option<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    RegisterActor {
        id: String,
        role: Role,
    },
    MintToken {
        actor: String,
        token: String,
    },
    OpenCourse {
        course: String,
        instructor: String,
        #[serde(default)]
        params: Option<PacingParams>,
    },
    CreateSession {
        course: String,
        kind: RoutineKind,
        #[serde(default)]
        config: Option<SessionConfig>,
        #[serde(default)]
        idempotency_key: Option<String>,
    },
    OpenPoll {
        session: String,
        source: QuestionSource,
    },
    OpenQuiz {
        session: String,
        source: QuestionSource,
    },
    OpenJitt {
        session: String,
        source: QuestionSource,
    },
    CastVote {
        instance: String,
        labels: LabelSet,
    },
    CloseInstance {
        instance: String,
    },
    Advance {
        session: String,
        #[serde(default)]
        to: Option<Phase>,
    },
    ChooseDifficulty {
        session: String,
        choice: DifficultyChoice,
    },
    RecordTranscript {
        transcript: FipTranscript,
    },
    Submit {
        session: String,
        submission: SubmissionRequest,
    },
    AppendDraft {
        session: String,
        text: String,
    },
    SubmitDraft {
        session: String,
    },
    Consolidate {
        session: String,
        talking_points: Vec<String>,
    },
    RecordGroups {
        session: String,
        groups: Vec<Vec<String>>,
    },
    ImportEntry {
        course: String,
        #[serde(default)]
        topic: Option<String>,
        item: BankItem,
        #[serde(default)]
        author: Option<String>,
        #[serde(default)]
        prompts: Vec<String>,
        #[serde(default)]
        provider: Option<ProviderIdentity>,
        #[serde(default)]
        attachment: Option<Attachment>,
    },
    ReproduceCheck {
        entry: String,
        regenerated: String,
        #[serde(default)]
        provider: Option<ProviderIdentity>,
    },
    RecordVerdict {
        entry: String,
        decision: Decision,
        #[serde(default)]
        initial_difficulty: Option<u8>,
    },
    StartNewTopic {
        course: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Event {
    #[serde(rename = "actor.registered")]
    ActorRegistered { actor: String, role: Role },
    #[serde(rename = "token.minted")]
    TokenMinted { token: String, actor: String },
    #[serde(rename = "course.opened")]
    CourseOpened {
        course: String,
        instructor: String,
        params: PacingParams,
    },
    #[serde(rename = "session.created")]
    SessionCreated {
        session: String,
        kind: RoutineKind,
        course: String,
        config: SessionConfig,
        created_by: String,
        idempotency_key: Option<String>,
    },
    #[serde(rename = "instance.opened")]
    InstanceOpened {
        instance: String,
        session: String,
        kind: InstanceKind,
        content: InstanceContent,
        bank_entry: Option<String>,
        deadline: Option<Timestamp>,
        phase: Phase,
    },
    #[serde(rename = "vote.cast")]
    VoteCast {
        instance: String,
        actor: String,
        labels: LabelSet,
    },
    #[serde(rename = "instance.closed")]
    InstanceClosed { instance: String, phase: Option<Phase> },
    #[serde(rename = "phase.advanced")]
    PhaseAdvanced { session: String, phase: Phase },
    #[serde(rename = "difficulty.chosen")]
    DifficultyChosen {
        session: String,
        actor: String,
        choice: DifficultyChoice,
    },
    #[serde(rename = "transcript.recorded")]
    TranscriptRecorded {
        transcript_id: String,
        author: String,
        transcript: FipTranscript,
    },
    #[serde(rename = "submission.queued")]
    SubmissionQueued {
        submission: StudentSubmission,
        course: String,
    },
    #[serde(rename = "draft.appended")]
    DraftAppended {
        session: String,
        actor: String,
        text: String,
    },
    #[serde(rename = "entry.imported")]
    EntryImported {
        entry: String,
        course: String,
        topic: Option<String>,
        item: BankItem,
        provenance: Provenance,
        attachment: Option<Attachment>,
    },
    #[serde(rename = "reproduce.checked")]
    ReproduceChecked {
        entry: String,
        reviewer: String,
        check: ReproduceCheck,
        provider: Option<ProviderIdentity>,
    },
    #[serde(rename = "verdict.recorded")]
    VerdictRecorded {
        entry: String,
        reviewer: String,
        decision: Decision,
        initial_difficulty: Option<u8>,
    },
    #[serde(rename = "pacing.observed")]
    PacingObserved {
        course: String,
        session: String,
        instance: String,
        accuracy: f64,
    },
    #[serde(rename = "difficulty.updated")]
    DifficultyUpdated {
        entry: String,
        session: String,
        accuracy: f64,
    },
    #[serde(rename = "pacing.topic_started")]
    TopicStarted { course: String },
    #[serde(rename = "session.consolidated")]
    SessionConsolidated {
        session: String,
        talking_points: Vec<String>,
    },
    #[serde(rename = "groups.recorded")]
    GroupsRecorded { session: String, groups: Vec<Vec<String>> },
}

impl Event {
    pub fn into_record(self) -> (String, Value) {
        let Value::Object(mut m) = serde_json::to_value(self).expect("event serializes") else {
            unreachable!("events serialize as objects")
        };
        let kind = m
            .remove("kind")
            .and_then(|k| k.as_str().map(str::to_string))
            .unwrap_or_default();
        let payload = m.remove("payload").unwrap_or(Value::Null);
        (kind, payload)
    }

    pub fn from_envelope(env: &EventEnvelope) -> Result<Event, EngineError> {
        let v = serde_json::json!({ "kind": env.kind, "payload": env.payload });
        serde_json::from_value(v).map_err(|e| EngineError::Store(StoreError::Encoding(format!("seq {}: {e}", env.seq))))
    }
}

/// What a command produced, for the caller to report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Ack,
    Actor {
        id: String,
    },
    Token {
        token: String,
        actor: String,
    },
    Course {
        id: String,
    },
    Session {
        id: String,
        phase: Phase,
    },
    Instance {
        id: String,
        session: String,
        deadline: Option<Timestamp>,
    },
    Vote {
        instance: String,
    },
    Closed {
        tally: VoteTally,
        accuracy: Option<f64>,
    },
    Phase {
        session: String,
        phase: Phase,
    },
    Transcript {
        id: String,
    },
    Submission {
        id: String,
        entry: String,
    },
    Entry {
        id: String,
    },
    Check {
        entry: String,
        check: ReproduceCheck,
    },
    Verdict {
        entry: BankEntry,
    },
    Pacing {
        course: String,
        state: PacingState,
    },
}

fn require_known(state: &ClassState, actor: &ActorRef) -> Result<(), EngineError> {
    if actor.role() == Role::System {
        return Ok(());
    }
    match state.actors.get(actor.id()) {
        Some(r) if *r == actor.role() => Ok(()),
        _ => Err(EngineError::Unauthorized(format!("unknown actor {}", actor.id()))),
    }
}

/// Instructors run their own courses; assistants and the system may act on any.
fn require_staff(state: &ClassState, actor: &ActorRef, course: &str) -> Result<(), EngineError> {
    match actor.role() {
        Role::System | Role::Assistant => Ok(()),
        Role::Instructor if state.courses.get(course).is_some_and(|c| c.instructor == actor.id()) => Ok(()),
        Role::Instructor => Err(EngineError::Unauthorized(format!(
            "{} does not teach {course}",
            actor.id()
        ))),
        Role::Student => Err(EngineError::Unauthorized("staff only".into())),
    }
}

fn require_student(actor: &ActorRef) -> Result<(), EngineError> {
    if actor.role() == Role::Student {
        Ok(())
    } else {
        Err(EngineError::Unauthorized("students only".into()))
    }
}

fn phase_violation(s: &RoutineSession, to: Phase) -> EngineError {
    RoutineError::PhaseViolation {
        session: s.id.clone(),
        from: s.phase,
        to,
    }
    .into()
}

/// The phase an unqualified `advance` moves to, if any.
pub fn next_advance(s: &RoutineSession) -> Option<Phase> {
    s.kind
        .phase_order()
        .iter()
        .copied()
        .find(|to| transition_trigger(s.kind, s.phase, *to, s.config.prompt_phase_enabled) == Some(Trigger::Advance))
}

fn resolve_source(
    state: &ClassState,
    course: &str,
    source: &QuestionSource,
) -> Result<(InstanceContent, Option<String>), EngineError> {
    match source {
        QuestionSource::Inline(c) => {
            if let InstanceContent::OpenEnded(t) = c {
                if t.trim().is_empty() {
                    return Err(EngineError::Invalid("question text is empty".into()));
                }
            }
            Ok((c.clone(), None))
        }
        QuestionSource::Bank(id) => {
            let e = state.bank.selectable(id)?;
            if e.course != course {
                return Err(VettingError::NotSelectable(id.clone()).into());
            }
            let content = match &e.item {
                BankItem::Mcq(q) => InstanceContent::Mcq(q.clone()),
                BankItem::OpenEnded(t) => InstanceContent::OpenEnded(t.clone()),
                BankItem::Root(_) => return Err(EngineError::Invalid(format!("entry {id} is a root question"))),
            };
            Ok((content, Some(id.clone())))
        }
    }
}

/// Events for closing an instance, including the pacing and difficulty
/// feedback a graded question produces.
fn close_events(state: &ClassState, inst: &QuestionInstance, phase: Option<Phase>) -> Vec<Event> {
    let mut out = vec![Event::InstanceClosed {
        instance: inst.id.clone(),
        phase,
    }];
    if inst.kind == InstanceKind::Poll {
        return out;
    }
    let Some(accuracy) = inst.accuracy() else { return out };
    let Some(session) = state.sessions.get(&inst.session) else {
        return out;
    };
    out.push(Event::PacingObserved {
        course: session.course.clone(),
        session: session.id.clone(),
        instance: inst.id.clone(),
        accuracy,
    });
    if let Some(entry) = &inst.bank_entry {
        if state.bank.get(entry).is_some_and(|e| e.difficulty.is_some()) {
            out.push(Event::DifficultyUpdated {
                entry: entry.clone(),
                session: session.id.clone(),
                accuracy,
            });
        }
    }
    out
}

fn draft_key(session: &str, actor: &str) -> String {
    format!("{session}/{actor}")
}

fn submission_events(
    state: &ClassState,
    actor: &ActorRef,
    session: &RoutineSession,
    req: SubmissionRequest,
    at: Timestamp,
) -> Result<(Vec<Event>, Reply), EngineError> {
    require_student(actor)?;
    if !session.accepts_submissions() {
        return Err(phase_violation(session, session.phase));
    }
    let provider = match &req.transcript_ref {
        Some(t) => Some(
            state
                .transcripts
                .get(t)
                .ok_or_else(|| not_found("transcript", t))?
                .provider
                .clone(),
        ),
        None => None,
    };
    let id = format!("sub{}", state.counters.submission + 1);
    let entry_ref = state.bank.peek_next_id();
    let submission = StudentSubmission {
        id: id.clone(),
        author: actor.clone(),
        session_ref: session.id.clone(),
        content: req.content,
        prompts: req.prompts,
        transcript_ref: req.transcript_ref,
        summary: req.summary,
        topic: req.topic,
        provider,
        attachment: req.attachment,
        submitted_at: at,
        latency_s: session.jitt_assigned_at.map(|a| at.0 - a.0),
        entry_ref: entry_ref.clone(),
    };
    submission.check()?;
    let events = vec![Event::SubmissionQueued {
        submission,
        course: session.course.clone(),
    }];
    Ok((events, Reply::Submission { id, entry: entry_ref }))
}

/// Text compared in a reproduce check. MCQs compare in rendered form so
/// layout differences in a regeneration do not count against it.
fn comparable_text(item: &BankItem, regenerated: &str) -> (String, String) {
    if let BankItem::Mcq(q) = item {
        if let Ok(r) = parse_mcq(regenerated, q.kind()).into_result() {
            return (render_mcq(q), render_mcq(&r));
        }
    }
    (item.text(), regenerated.to_string())
}

/// Validates `cmd` against `state` and returns the events it produces.
pub fn decide(
    state: &ClassState,
    actor: &ActorRef,
    cmd: Command,
    at: Timestamp,
) -> Result<(Vec<Event>, Reply), EngineError> {
    require_known(state, actor)?;
    match cmd {
        Command::RegisterActor { id, role } => {
            if actor.role() != Role::System {
                return Err(EngineError::Unauthorized("only the system registers actors".into()));
            }
            if id.is_empty() || id == SYSTEM_ACTOR || id.contains(|c: char| c.is_whitespace() || c == '/') {
                return Err(EngineError::Invalid(format!("bad actor id {id:?}")));
            }
            if role == Role::System {
                return Err(EngineError::Invalid("the system role cannot be registered".into()));
            }
            match state.actors.get(&id) {
                Some(r) if *r == role => Ok((vec![], Reply::Actor { id })),
                Some(r) => Err(EngineError::Conflict(format!("{id} is already registered as {r:?}"))),
                None => Ok((
                    vec![Event::ActorRegistered {
                        actor: id.clone(),
                        role,
                    }],
                    Reply::Actor { id },
                )),
            }
        }
        Command::MintToken { actor: target, token } => {
            if actor.role() != Role::System {
                return Err(EngineError::Unauthorized("only the system mints tokens".into()));
            }
            if !state.actors.contains_key(&target) {
                return Err(not_found("actor", &target));
            }
            if token.len() < 8 || state.tokens.contains_key(&token) {
                return Err(EngineError::Invalid(
                    "token must be unique and at least 8 characters".into(),
                ));
            }
            Ok((
                vec![Event::TokenMinted {
                    token: token.clone(),
                    actor: target.clone(),
                }],
                Reply::Token { token, actor: target },
            ))
        }
        Command::OpenCourse {
            course,
            instructor,
            params,
        } => {
            if !matches!(actor.role(), Role::System) && actor.id() != instructor {
                return Err(EngineError::Unauthorized(
                    "courses are opened by their instructor".into(),
                ));
            }
            if state.actors.get(&instructor) != Some(&Role::Instructor) {
                return Err(EngineError::Invalid(format!("{instructor} is not an instructor")));
            }
            if state.courses.contains_key(&course) {
                return Err(EngineError::Conflict(format!("course {course} already exists")));
            }
            let params = params.unwrap_or_default();
            init_pacing(params)?;
            Ok((
                vec![Event::CourseOpened {
                    course: course.clone(),
                    instructor,
                    params,
                }],
                Reply::Course { id: course },
            ))
        }
        Command::CreateSession {
            course,
            kind,
            config,
            idempotency_key,
        } => {
            state.course(&course)?;
            require_staff(state, actor, &course)?;
            if let Some(existing) = idempotency_key.as_ref().and_then(|k| state.idempotency.get(k)) {
                let s = state.session(existing)?;
                return Ok((
                    vec![],
                    Reply::Session {
                        id: s.id.clone(),
                        phase: s.phase,
                    },
                ));
            }
            let config = config.unwrap_or_default();
            if config.quiz_time_limit_s <= 0 {
                return Err(EngineError::Invalid("quiz_time_limit_s must be positive".into()));
            }
            let id = format!("s{}", state.counters.session + 1);
            let ev = Event::SessionCreated {
                session: id.clone(),
                kind,
                course,
                config,
                created_by: actor.id().to_string(),
                idempotency_key,
            };
            Ok((
                vec![ev],
                Reply::Session {
                    id,
                    phase: Phase::Created,
                },
            ))
        }
        Command::OpenPoll { session, source } => open_instance(state, actor, &session, source, InstanceKind::Poll, at),
        Command::OpenQuiz { session, source } => open_instance(state, actor, &session, source, InstanceKind::Quiz, at),
        Command::OpenJitt { session, source } => open_instance(state, actor, &session, source, InstanceKind::Jitt, at),
        Command::CastVote { instance, labels } => {
            let inst = state.instance(&instance)?;
            inst.check_vote(actor, &labels, at)?;
            Ok((
                vec![Event::VoteCast {
                    instance: instance.clone(),
                    actor: actor.id().to_string(),
                    labels,
                }],
                Reply::Vote { instance },
            ))
        }
        Command::CloseInstance { instance } => {
            let inst = state.instance(&instance)?;
            let session = state.session(&inst.session)?;
            require_staff(state, actor, &session.course)?;
            let (to, trigger) = match inst.kind {
                InstanceKind::Poll => (Some(Phase::PollClosed), Trigger::ClosePoll),
                InstanceKind::Quiz => (Some(Phase::QuizClosed), Trigger::CloseQuiz),
                InstanceKind::Jitt => (None, Trigger::Advance),
            };
            if !inst.is_open() {
                return Err(phase_violation(session, to.unwrap_or(session.phase)));
            }
            if let Some(to) = to {
                session.check_transition(to, trigger)?;
            }
            let events = close_events(state, inst, to);
            let mut closed = inst.clone();
            closed.closed_at = Some(at);
            Ok((
                events,
                Reply::Closed {
                    tally: closed.tally(),
                    accuracy: closed.accuracy(),
                },
            ))
        }
        Command::Advance { session, to } => {
            let s = state.session(&session)?;
            require_staff(state, actor, &s.course)?;
            let to = match to.or_else(|| next_advance(s)) {
                Some(t) => t,
                None => return Err(phase_violation(s, s.phase)),
            };
            s.check_transition(to, Trigger::Advance)?;
            let mut events = vec![];
            if let Some(j) = s.jitt_instance.as_ref().and_then(|j| state.instances.get(j)) {
                if j.is_open() {
                    events.extend(close_events(state, j, None));
                }
            }
            events.push(Event::PhaseAdvanced {
                session: session.clone(),
                phase: to,
            });
            Ok((events, Reply::Phase { session, phase: to }))
        }
        Command::ChooseDifficulty { session, choice } => {
            let s = state.session(&session)?;
            require_student(actor)?;
            s.check_difficulty_choice()?;
            Ok((
                vec![Event::DifficultyChosen {
                    session,
                    actor: actor.id().to_string(),
                    choice,
                }],
                Reply::Ack,
            ))
        }
        Command::RecordTranscript { transcript } => {
            if transcript.turns.is_empty() {
                return Err(EngineError::Invalid("transcript has no turns".into()));
            }
            let id = format!("t{}", state.counters.transcript + 1);
            Ok((
                vec![Event::TranscriptRecorded {
                    transcript_id: id.clone(),
                    author: actor.id().to_string(),
                    transcript,
                }],
                Reply::Transcript { id },
            ))
        }
        Command::Submit { session, submission } => {
            let s = state.session(&session)?;
            submission_events(state, actor, s, submission, at)
        }
        Command::AppendDraft { session, text } => {
            let s = state.session(&session)?;
            require_student(actor)?;
            if !s.accepts_submissions() {
                return Err(phase_violation(s, s.phase));
            }
            if text.trim().is_empty() {
                return Err(EngineError::Invalid("empty message".into()));
            }
            Ok((
                vec![Event::DraftAppended {
                    session,
                    actor: actor.id().to_string(),
                    text,
                }],
                Reply::Ack,
            ))
        }
        Command::SubmitDraft { session } => {
            let s = state.session(&session)?;
            require_student(actor)?;
            let draft = state
                .drafts
                .get(&draft_key(&session, actor.id()))
                .cloned()
                .unwrap_or_default();
            let text = draft.question.join("\n");
            let content = match parse_mcq(&text, crate::domain::QuestionKind::JittQuiz).into_result() {
                Ok(q) => SubmissionContent::Mcq(q),
                Err(_) => SubmissionContent::OpenEnded(text),
            };
            let req = SubmissionRequest {
                content,
                prompts: draft.prompts,
                transcript_ref: None,
                summary: None,
                topic: None,
                attachment: None,
            };
            submission_events(state, actor, s, req, at)
        }
        Command::Consolidate {
            session,
            talking_points,
        } => {
            let s = state.session(&session)?;
            require_staff(state, actor, &s.course)?;
            s.check_transition(Phase::Consolidated, Trigger::Consolidate)?;
            if talking_points.len() > crate::fip::MAX_TALKING_POINTS {
                return Err(EngineError::Invalid("too many talking points".into()));
            }
            Ok((
                vec![Event::SessionConsolidated {
                    session: session.clone(),
                    talking_points,
                }],
                Reply::Phase {
                    session,
                    phase: Phase::Consolidated,
                },
            ))
        }
        Command::RecordGroups { session, groups } => {
            let s = state.session(&session)?;
            require_staff(state, actor, &s.course)?;
            Ok((vec![Event::GroupsRecorded { session, groups }], Reply::Ack))
        }
        Command::ImportEntry {
            course,
            topic,
            item,
            author,
            prompts,
            provider,
            attachment,
        } => {
            state.course(&course)?;
            require_staff(state, actor, &course)?;
            let author = match author {
                Some(a) => state.actor(&a).ok_or_else(|| not_found("actor", &a))?,
                None => actor.clone(),
            };
            let entry = state.bank.peek_next_id();
            let provenance = Provenance {
                author,
                submission_ref: None,
                provider,
                prompts,
            };
            Ok((
                vec![Event::EntryImported {
                    entry: entry.clone(),
                    course,
                    topic,
                    item,
                    provenance,
                    attachment,
                }],
                Reply::Entry { id: entry },
            ))
        }
        Command::ReproduceCheck {
            entry,
            regenerated,
            provider,
        } => {
            if !actor.role().can_review() {
                return Err(VettingError::Unauthorized.into());
            }
            let e = state
                .bank
                .get(&entry)
                .ok_or_else(|| VettingError::UnknownEntry(entry.clone()))?;
            let (original, regenerated) = comparable_text(&e.item, &regenerated);
            let check = reproduce_check(&original, &regenerated);
            Ok((
                vec![Event::ReproduceChecked {
                    entry: entry.clone(),
                    reviewer: actor.id().to_string(),
                    check,
                    provider,
                }],
                Reply::Check { entry, check },
            ))
        }
        Command::RecordVerdict {
            entry,
            decision,
            initial_difficulty,
        } => {
            state.bank.check_verdict(&entry, actor, decision, initial_difficulty)?;
            let mut preview = state.bank.clone();
            preview.apply_verdict(&entry, actor.id(), decision, initial_difficulty, at);
            let decided = preview.get(&entry).cloned().expect("entry checked above");
            Ok((
                vec![Event::VerdictRecorded {
                    entry,
                    reviewer: actor.id().to_string(),
                    decision,
                    initial_difficulty,
                }],
                Reply::Verdict { entry: decided },
            ))
        }
        Command::StartNewTopic { course } => {
            let c = state.course(&course)?;
            require_staff(state, actor, &course)?;
            let next = start_new_topic(&c.pacing);
            Ok((
                vec![Event::TopicStarted { course: course.clone() }],
                Reply::Pacing { course, state: next },
            ))
        }
    }
}

fn open_instance(
    state: &ClassState,
    actor: &ActorRef,
    session: &str,
    source: QuestionSource,
    kind: InstanceKind,
    at: Timestamp,
) -> Result<(Vec<Event>, Reply), EngineError> {
    let s = state.session(session)?;
    require_staff(state, actor, &s.course)?;
    let (to, trigger) = match kind {
        InstanceKind::Poll => (Phase::PollOpen, Trigger::OpenPoll),
        InstanceKind::Quiz => (Phase::QuizOpen, Trigger::OpenQuiz),
        InstanceKind::Jitt => (Phase::JittOpen, Trigger::OpenJitt),
    };
    s.check_transition(to, trigger)?;
    let (content, bank_entry) = resolve_source(state, &s.course, &source)?;
    if kind != InstanceKind::Jitt && content.mcq().is_none() {
        return Err(EngineError::Invalid("polls and quizzes need options".into()));
    }
    let n = match kind {
        InstanceKind::Poll => state.counters.poll,
        InstanceKind::Quiz => state.counters.quiz,
        InstanceKind::Jitt => state.counters.jitt,
    } + 1;
    let id = format!("{}{n}", kind.prefix());
    let deadline = (kind == InstanceKind::Quiz).then(|| at.plus_secs(s.config.quiz_time_limit_s));
    let ev = Event::InstanceOpened {
        instance: id.clone(),
        session: session.to_string(),
        kind,
        content,
        bank_entry,
        deadline,
        phase: to,
    };
    Ok((
        vec![ev],
        Reply::Instance {
            id,
            session: session.to_string(),
            deadline,
        },
    ))
}

fn bump(counter: &mut u64, id: &str) {
    *counter = (*counter).max(id_number(id));
}

/// Folds one event into state. Events were validated when decided, so this
/// never fails; an event naming something absent is ignored.
pub fn apply(state: &mut ClassState, env: &EventEnvelope, event: &Event) {
    let at = env.ts;
    state.last_seq = env.seq;
    state.last_ts = state.last_ts.max(at);
    match event.clone() {
        Event::ActorRegistered { actor, role } => {
            state.actors.insert(actor, role);
        }
        Event::TokenMinted { token, actor } => {
            state.tokens.insert(token, actor);
        }
        Event::CourseOpened {
            course,
            instructor,
            params,
        } => {
            if let Ok(pacing) = init_pacing(params) {
                let c = CourseState {
                    id: course.clone(),
                    instructor,
                    pacing,
                    observations: vec![],
                    scores: BTreeMap::new(),
                };
                state.courses.insert(course, c);
            }
        }
        Event::SessionCreated {
            session,
            kind,
            course,
            config,
            created_by,
            idempotency_key,
        } => {
            bump(&mut state.counters.session, &session);
            if let Some(k) = idempotency_key {
                state.idempotency.insert(k, session.clone());
            }
            state.sessions.insert(
                session.clone(),
                RoutineSession::new(session, kind, course, config, created_by, at),
            );
        }
        Event::InstanceOpened {
            instance,
            session,
            kind,
            content,
            bank_entry,
            deadline,
            phase,
        } => {
            match kind {
                InstanceKind::Poll => bump(&mut state.counters.poll, &instance),
                InstanceKind::Quiz => bump(&mut state.counters.quiz, &instance),
                InstanceKind::Jitt => bump(&mut state.counters.jitt, &instance),
            }
            if let Some(s) = state.sessions.get_mut(&session) {
                s.apply_phase(phase, at);
                match kind {
                    InstanceKind::Poll => s.poll_instance = Some(instance.clone()),
                    InstanceKind::Quiz => {
                        s.quiz_instance = Some(instance.clone());
                        s.quiz_deadline = deadline;
                    }
                    InstanceKind::Jitt => {
                        s.jitt_instance = Some(instance.clone());
                        s.jitt_assigned_at = Some(at);
                    }
                }
            }
            state.instances.insert(
                instance.clone(),
                QuestionInstance {
                    id: instance,
                    session,
                    kind,
                    content,
                    bank_entry,
                    opened_at: at,
                    deadline,
                    ballots: BTreeMap::new(),
                    voted_at: BTreeMap::new(),
                    closed_at: None,
                },
            );
        }
        Event::VoteCast {
            instance,
            actor,
            labels,
        } => {
            if let Some(i) = state.instances.get_mut(&instance) {
                i.apply_vote(&actor, labels, at);
            }
        }
        Event::InstanceClosed { instance, phase } => {
            let Some(inst) = state.instances.get_mut(&instance) else {
                return;
            };
            inst.closed_at = Some(at);
            let inst = inst.clone();
            let Some(session) = state.sessions.get_mut(&inst.session) else {
                return;
            };
            if let Some(p) = phase {
                session.apply_phase(p, at);
            }
            if inst.kind != InstanceKind::Poll {
                let course = session.course.clone();
                if let Some(c) = state.courses.get_mut(&course) {
                    for v in inst.correct_voters() {
                        *c.scores.entry(v.to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
        Event::PhaseAdvanced { session, phase } => {
            if let Some(s) = state.sessions.get_mut(&session) {
                s.apply_phase(phase, at);
            }
        }
        Event::DifficultyChosen { session, actor, choice } => {
            if let Some(s) = state.sessions.get_mut(&session) {
                s.difficulty_choices.insert(actor, choice);
            }
        }
        Event::TranscriptRecorded {
            transcript_id,
            transcript,
            ..
        } => {
            bump(&mut state.counters.transcript, &transcript_id);
            state.transcripts.insert(transcript_id, transcript);
        }
        Event::SubmissionQueued { submission, course } => {
            bump(&mut state.counters.submission, &submission.id);
            state
                .drafts
                .remove(&draft_key(&submission.session_ref, submission.author.id()));
            let item = match &submission.content {
                SubmissionContent::Mcq(q) => BankItem::Mcq(q.clone()),
                SubmissionContent::OpenEnded(t) => BankItem::OpenEnded(t.clone()),
            };
            let provenance = Provenance {
                author: submission.author.clone(),
                submission_ref: Some(submission.id.clone()),
                provider: submission.provider.clone(),
                prompts: submission.prompts.clone(),
            };
            let entry = state.bank.enqueue(
                &course,
                submission.topic.clone(),
                item,
                provenance,
                submission.attachment.clone(),
                at,
            );
            debug_assert_eq!(entry, submission.entry_ref);
            state.submissions.insert(submission.id.clone(), submission);
        }
        Event::DraftAppended { session, actor, text } => {
            let d = state.drafts.entry(draft_key(&session, &actor)).or_default();
            match text.trim().strip_prefix("prompt:") {
                Some(p) => d.prompts.push(p.trim().to_string()),
                None => d.question.push(text),
            }
        }
        Event::EntryImported {
            entry,
            course,
            topic,
            item,
            provenance,
            attachment,
        } => {
            let id = state.bank.enqueue(&course, topic, item, provenance, attachment, at);
            debug_assert_eq!(id, entry);
        }
        Event::ReproduceChecked {
            entry,
            reviewer,
            check,
            provider,
        } => {
            state.checks.entry(entry).or_default().push(CheckRecord {
                reviewer,
                check,
                provider,
                at,
            });
        }
        Event::VerdictRecorded {
            entry,
            reviewer,
            decision,
            initial_difficulty,
        } => {
            state
                .bank
                .apply_verdict(&entry, &reviewer, decision, initial_difficulty, at);
            if decision == Decision::Approve {
                if let Some(e) = state.bank.get(&entry) {
                    let author = e.provenance.author.clone();
                    if author.role() == Role::Student {
                        if let Some(c) = state.courses.get_mut(&e.course) {
                            *c.scores.entry(author.id().to_string()).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
        Event::PacingObserved {
            course,
            session,
            instance,
            accuracy,
        } => {
            if let Some(c) = state.courses.get_mut(&course) {
                if let Ok(next) = observe_quiz_outcome(&c.pacing, accuracy) {
                    c.pacing = next;
                    c.observations.push(Observation {
                        session,
                        instance,
                        accuracy,
                    });
                }
            }
        }
        Event::DifficultyUpdated {
            entry,
            session,
            accuracy,
        } => {
            state.bank.record_performance(&entry, &session, accuracy);
        }
        Event::TopicStarted { course } => {
            if let Some(c) = state.courses.get_mut(&course) {
                c.pacing = start_new_topic(&c.pacing);
            }
        }
        Event::SessionConsolidated {
            session,
            talking_points,
        } => {
            if let Some(s) = state.sessions.get_mut(&session) {
                s.talking_points = talking_points;
                s.apply_phase(Phase::Consolidated, at);
            }
        }
        Event::GroupsRecorded { session, groups } => {
            if let Some(s) = state.sessions.get_mut(&session) {
                s.groups = groups;
            }
        }
    }
}

/// Result of rebuilding state from raw log bytes.
#[derive(Debug, Clone)]
pub struct Rebuilt {
    pub state: ClassState,
    /// Set when a damaged record stopped the replay early.
    pub halted: Option<String>,
}

/// Replays log bytes from the start. A damaged record ends the replay; the
/// state then reflects everything before it.
pub fn rebuild(bytes: &[u8]) -> Result<Rebuilt, EngineError> {
    let scan = scan_log(bytes)?;
    let mut state = ClassState::default();
    for env in &scan.events {
        let event = Event::from_envelope(env)?;
        apply(&mut state, env, &event);
    }
    Ok(Rebuilt {
        state,
        halted: scan.corruption,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Pacing parameters for courses opened without their own.
    pub pacing: PacingParams,
    pub snapshot_every: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            pacing: PacingParams::default(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Executed {
    pub reply: Reply,
    pub events: Vec<EventEnvelope>,
}

pub struct Classroom {
    state: ClassState,
    log: EventLog,
    config: EngineConfig,
}

impl std::fmt::Debug for Classroom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classroom")
            .field("last_seq", &self.state.last_seq)
            .finish()
    }
}

impl Classroom {
    pub fn in_memory(config: EngineConfig) -> Self {
        Self::with_storage(Box::new(MemoryStorage::default()), config).expect("empty memory log opens")
    }

    pub fn open_file(path: impl AsRef<Path>, config: EngineConfig) -> Result<Self, EngineError> {
        let storage = FileStorage::open(path).map_err(StoreError::from)?;
        Self::with_storage(Box::new(storage), config)
    }

    /// Opens a log, starting from its snapshot when one is usable.
    pub fn with_storage(storage: Box<dyn LogStorage>, config: EngineConfig) -> Result<Self, EngineError> {
        if config.snapshot_every == 0 {
            return Err(EngineError::Invalid("snapshot interval must be positive".into()));
        }
        config.pacing.validate()?;
        let (mut log, events) = EventLog::open(storage)?;
        let mut state = ClassState::default();
        let snapshot = log
            .read_snapshot()?
            .filter(|(seq, _)| *seq <= log.last_seq())
            .and_then(|(seq, v)| {
                serde_json::from_value::<ClassState>(v)
                    .ok()
                    .filter(|s| s.last_seq == seq)
            });
        if let Some(s) = snapshot {
            state = s;
        }
        let resume_after = state.last_seq;
        for env in events.iter().filter(|e| e.seq > resume_after) {
            let event = Event::from_envelope(env)?;
            apply(&mut state, env, &event);
        }
        Ok(Classroom { state, log, config })
    }

    pub fn state(&self) -> &ClassState {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Decides, appends and applies one command. Nothing changes on error.
    pub fn execute(&mut self, actor: &ActorRef, cmd: Command, at: Timestamp) -> Result<Executed, EngineError> {
        let at = at.max(self.state.last_ts);
        let cmd = match cmd {
            Command::OpenCourse {
                course,
                instructor,
                params: None,
            } => Command::OpenCourse {
                course,
                instructor,
                params: Some(self.config.pacing),
            },
            other => other,
        };
        let (events, reply) = decide(&self.state, actor, cmd, at)?;
        if events.is_empty() {
            return Ok(Executed { reply, events: vec![] });
        }
        let records: Vec<(String, Value)> = events.iter().cloned().map(Event::into_record).collect();
        let before = self.log.last_seq();
        let envs = self.log.append_batch(at, records)?;
        for (env, ev) in envs.iter().zip(&events) {
            apply(&mut self.state, env, ev);
        }
        let every = self.config.snapshot_every;
        if before / every != self.log.last_seq() / every {
            let v = serde_json::to_value(&self.state).expect("state serializes");
            // A failed snapshot only costs replay time; the log is already durable.
            let _ = self.log.write_snapshot(self.state.last_seq, &v);
        }
        Ok(Executed { reply, events: envs })
    }

    pub fn log_bytes(&mut self) -> Result<Vec<u8>, EngineError> {
        Ok(self.log.read_bytes()?)
    }

    pub fn replay(&mut self, from_seq: u64) -> Result<Vec<EventEnvelope>, EngineError> {
        Ok(self.log.replay(from_seq)?)
    }

    pub fn view_tally(&self, instance: &str, actor: &ActorRef) -> Result<VoteTally, EngineError> {
        require_known(&self.state, actor)?;
        Ok(self.state.instance(instance)?.view_tally(actor)?)
    }

    pub fn approved_count(&self, course: &str) -> usize {
        self.state
            .bank
            .entries()
            .filter(|e| e.course == course && e.is_selectable())
            .count()
    }

    pub fn recommendation(&self, course: &str) -> Result<Recommendation, EngineError> {
        let c = self.state.course(course)?;
        Ok(recommend_next(&c.pacing, self.approved_count(course)))
    }

    /// Approved entries suited to `actor` in `session`: the actor's own
    /// difficulty choice when made, otherwise the recommended band, capped at
    /// the recommended count.
    pub fn selection_for(&self, session: &str, actor: &str) -> Result<Vec<&BankEntry>, EngineError> {
        let s = self.state.session(session)?;
        let rec = self.recommendation(&s.course)?;
        let choice = s.difficulty_choices.get(actor).copied();
        let filter = BankFilter {
            course: Some(s.course.clone()),
            ..BankFilter::approved()
        };
        Ok(self
            .state
            .bank
            .query(&filter)
            .into_iter()
            .filter(|e| {
                let d = e.difficulty.unwrap_or(f64::NAN);
                match choice {
                    Some(c) => c.admits(d),
                    None => rec.band.contains(d),
                }
            })
            .take(rec.item_count)
            .collect())
    }

    pub fn query_bank(&self, filter: &BankFilter) -> Vec<&BankEntry> {
        self.state.bank.query(filter)
    }

    pub fn vetting_queue(&self, course: Option<&str>) -> Vec<&BankEntry> {
        let filter = BankFilter {
            course: course.map(str::to_string),
            status: Some(EntryStatus::Pending),
            ..Default::default()
        };
        self.state.bank.query(&filter)
    }

    /// Responses to consolidate for a session, in submission order.
    pub fn consolidation_inputs(&self, session: &str) -> Result<Vec<String>, EngineError> {
        self.state.session(session)?;
        let mut subs: Vec<&StudentSubmission> = self
            .state
            .submissions
            .values()
            .filter(|s| s.session_ref == session)
            .collect();
        subs.sort_by_key(|s| id_number(&s.id));
        Ok(subs
            .into_iter()
            .map(|s| match &s.content {
                SubmissionContent::Mcq(q) => q.stem().to_string(),
                SubmissionContent::OpenEnded(t) => t.clone(),
            })
            .collect())
    }

    pub fn analytics(&self) -> CourseAnalytics<'_> {
        CourseAnalytics { state: &self.state }
    }
}

/// Course statistics computed from state.
#[derive(Debug, Clone, Copy)]
pub struct CourseAnalytics<'a> {
    pub state: &'a ClassState,
}

impl CourseAnalytics<'_> {
    /// One pair per (JiTT assignment, student): assignment time and the
    /// student's first answer, which is a vote on the JiTT question or a
    /// submission in the session, whichever came first.
    pub fn jitt_assignments(&self, course: &str) -> Result<Vec<(Timestamp, Option<Timestamp>)>, EngineError> {
        self.state.course(course)?;
        let mut first: BTreeMap<(&str, &str), Timestamp> = BTreeMap::new();
        for sub in self.state.submissions.values() {
            let slot = first
                .entry((sub.session_ref.as_str(), sub.author.id()))
                .or_insert(sub.submitted_at);
            *slot = (*slot).min(sub.submitted_at);
        }
        let mut out = vec![];
        for s in self.state.sessions.values().filter(|s| s.course == course) {
            let Some(assigned) = s.jitt_assigned_at else { continue };
            let jitt = s.jitt_instance.as_ref().and_then(|j| self.state.instances.get(j));
            for student in self.state.students() {
                let submitted = first.get(&(s.id.as_str(), student)).copied();
                let voted = jitt.and_then(|j| j.voted_at.get(student).copied());
                let answered = match (submitted, voted) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
                out.push((assigned, answered));
            }
        }
        Ok(out)
    }

    pub fn histogram(&self, course: &str) -> Result<DaysHistogram, EngineError> {
        analytics::time_to_answer(&self.jitt_assignments(course)?).map_err(|e| EngineError::Invalid(e.to_string()))
    }

    pub fn difficulty_values(&self, course: &str) -> Result<Vec<f64>, EngineError> {
        self.state.course(course)?;
        let filter = BankFilter {
            course: Some(course.to_string()),
            ..BankFilter::approved()
        };
        let mut entries = self.state.bank.query(&filter);
        entries.sort_by_key(|e| id_number(&e.id));
        Ok(entries.iter().filter_map(|e| e.initial_difficulty).collect())
    }

    pub fn difficulty(&self, course: &str) -> Result<Option<DifficultyStats>, EngineError> {
        Ok(analytics::difficulty_stats(&self.difficulty_values(course)?).ok())
    }

    /// Every registered student appears, with zero when they have no points.
    pub fn leaderboard(&self, course: &str) -> Result<Vec<Standing>, EngineError> {
        let c = self.state.course(course)?;
        let mut scores: BTreeMap<String, i64> = self.state.students().map(|s| (s.to_string(), 0)).collect();
        for (a, s) in &c.scores {
            scores.insert(a.clone(), *s);
        }
        Ok(analytics::leaderboard(&scores))
    }

    pub fn comprehension(&self, course: &str) -> Result<Vec<ComprehensionPoint>, EngineError> {
        let c = self.state.course(course)?;
        let quizzes: Vec<(String, f64)> = c.observations.iter().map(|o| (o.session.clone(), o.accuracy)).collect();
        Ok(analytics::comprehension_series(
            &quizzes,
            c.pacing.params.initial_comprehension,
            c.pacing.params.lambda,
        ))
    }

    /// `what` is one of histogram, unanswered, difficulty, leaderboard, comprehension.
    pub fn export(&self, course: &str, what: &str) -> Result<String, EngineError> {
        match what {
            "histogram" => Ok(analytics::histogram_csv(&self.histogram(course)?)),
            "unanswered" => Ok(analytics::unanswered_csv(&self.histogram(course)?)),
            "difficulty" => Ok(analytics::difficulty_csv(self.difficulty(course)?.as_ref())),
            "leaderboard" => Ok(analytics::leaderboard_csv(&self.leaderboard(course)?)),
            "comprehension" => Ok(analytics::comprehension_csv(&self.comprehension(course)?)),
            other => Err(EngineError::Invalid(format!("unknown export {other:?}"))),
        }
    }
}

pub const EXPORTS: [&str; 5] = ["histogram", "unanswered", "difficulty", "leaderboard", "comprehension"];

/// Scores recomputed from scratch; must equal the incrementally kept ones.
pub fn recompute_scores(state: &ClassState, course: &str) -> BTreeMap<String, i64> {
    let mut scores = BTreeMap::new();
    for inst in state.instances.values() {
        let in_course = state.sessions.get(&inst.session).is_some_and(|s| s.course == course);
        if !in_course || inst.kind == InstanceKind::Poll || inst.is_open() {
            continue;
        }
        for v in inst.correct_voters() {
            *scores.entry(v.to_string()).or_insert(0) += 1;
        }
    }
    for e in state.bank.entries() {
        if e.course == course && e.status == EntryStatus::Approved && e.provenance.author.role() == Role::Student {
            *scores.entry(e.provenance.author.id().to_string()).or_insert(0) += 1;
        }
    }
    scores
}

/// Checks cross-module invariants; returns the first violation found.
pub fn check_invariants(state: &ClassState) -> Result<(), String> {
    for c in state.courses.values() {
        let p = &c.pacing;
        if p.pace < p.params.pace_min || !(0.0..=1.0).contains(&p.comprehension) {
            return Err(format!("course {}: pacing out of range", c.id));
        }
        if p.mode == crate::pacing::PacingMode::SlowStart && p.pace > p.ssthresh {
            return Err(format!("course {}: slow start above threshold", c.id));
        }
        if recompute_scores(state, &c.id) != c.scores {
            return Err(format!("course {}: scores drifted", c.id));
        }
    }
    for e in state.bank.entries() {
        if e.difficulty.is_some_and(|d| !(1.0..=10.0).contains(&d)) {
            return Err(format!("entry {}: difficulty out of range", e.id));
        }
        if (e.status == EntryStatus::Approved) != e.difficulty.is_some() {
            return Err(format!("entry {}: difficulty and status disagree", e.id));
        }
    }
    for s in state.sessions.values() {
        let order = s.kind.phase_order();
        let positions: Vec<usize> = s
            .history
            .iter()
            .map(|(p, _)| order.iter().position(|q| q == p).unwrap_or(usize::MAX))
            .collect();
        if positions.contains(&usize::MAX) || positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("session {}: phases out of order", s.id));
        }
        if s.history.last().map(|(p, _)| *p) != Some(s.phase) {
            return Err(format!("session {}: phase disagrees with history", s.id));
        }
    }
    for i in state.instances.values() {
        let tally = i.tally();
        let sum: u64 = tally.counts.values().sum();
        let ballots: u64 = i.ballots.values().map(|b| b.len() as u64).sum();
        if sum != ballots || tally.voters.len() != i.ballots.len() {
            return Err(format!("instance {}: tally not conserved", i.id));
        }
        if let Some(q) = i.content.mcq() {
            if tally.counts.keys().any(|l| !q.has_label(*l)) {
                return Err(format!("instance {}: tally names unknown label", i.id));
            }
        }
        if let Some(d) = i.deadline {
            if i.voted_at.values().any(|t| *t > d) {
                return Err(format!("instance {}: vote accepted after deadline", i.id));
            }
        }
        if i.voted_at.len() != i.ballots.len() {
            return Err(format!("instance {}: ballot without time", i.id));
        }
        if (i.kind == InstanceKind::Quiz) != i.deadline.is_some() {
            return Err(format!("instance {}: deadline presence wrong", i.id));
        }
    }
    Ok(())
}

/// Builds an inline MCQ question source.
pub fn inline_mcq(q: McqQuestion) -> QuestionSource {
    QuestionSource::Inline(InstanceContent::Mcq(q))
}
