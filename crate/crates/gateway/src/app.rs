//! HTTP routes over one shared [`Classroom`].
//!
//! Every mutation takes the classroom lock, so commands are decided against
//! the state the previous command left behind and live events leave in log
//! order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard, PoisonError};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flipdeck_core::classroom::{QuestionSource, SubmissionRequest, EXPORTS, SYSTEM_ACTOR};
use flipdeck_core::fip::{
    consolidate_responses, run_fip_session, FipError, FipPolicy, FipTranscript, Provider, ProviderIdentity,
    QuestionGoal,
};
use flipdeck_core::routine::{
    DifficultyChoice, InstanceContent, Phase, QuestionInstance, RoutineKind, SessionConfig, SubmissionContent,
};
use flipdeck_core::vetting::{Attachment, BankFilter, BankItem, Decision, DifficultyBand, EntryKind, EntryStatus};
use flipdeck_core::{
    parse_mcq, ActorRef, Classroom, Command, EngineConfig, EngineError, Event, EventEnvelope, Label, LabelSet,
    McqQuestion, PacingParams, QuestionKind, Reply, Role, Timestamp,
};
use futures::Stream;
use rand::distr::{Alphanumeric, SampleString};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::chat::{self, ChatInbound};
use crate::clock::{Clock, TIME_HEADER};
use crate::config::{ClockMode, Config, StorageConfig};
use crate::provider::{self, regenerate};

pub const CHAT_SECRET_HEADER: &str = "x-flipdeck-chat-secret";
const LIVE_BUFFER: usize = 4096;

#[derive(Debug, Clone, Serialize)]
pub struct LiveTally {
    pub counts: BTreeMap<Label, u64>,
    pub voters: usize,
    pub closed: bool,
}

/// One update on the live channel.
#[derive(Debug, Clone, Serialize)]
pub struct LiveEvent {
    pub seq: u64,
    pub session: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    /// `vote`, `closed` or `phase`.
    pub event: &'static str,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tally: Option<LiveTally>,
    #[serde(skip)]
    pub voter: Option<String>,
}

pub struct AppState {
    classroom: Mutex<Classroom>,
    clock: Clock,
    provider: Arc<dyn Provider>,
    live: broadcast::Sender<LiveEvent>,
    admin_token: Option<String>,
    chat_secret: Option<String>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState")
            .field("clock", &self.clock)
            .finish_non_exhaustive()
    }
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(
        classroom: Classroom,
        clock: ClockMode,
        provider: Arc<dyn Provider>,
        admin_token: Option<String>,
        chat_secret: Option<String>,
    ) -> Shared {
        let start = classroom.state().last_ts;
        Arc::new(AppState {
            classroom: Mutex::new(classroom),
            clock: Clock::new(clock, start),
            provider,
            live: broadcast::channel(LIVE_BUFFER).0,
            admin_token,
            chat_secret,
        })
    }

    /// Opens storage and rebuilds state from the log.
    pub fn from_config(config: &Config) -> Result<Shared, EngineError> {
        let engine = EngineConfig {
            pacing: config.pacing,
            snapshot_every: config.snapshot_every,
        };
        let classroom = match &config.storage {
            StorageConfig::Memory => Classroom::in_memory(engine),
            StorageConfig::File(path) if config.fsync => Classroom::open_file(path, engine)?,
            StorageConfig::File(path) => {
                let storage = flipdeck_core::store::FileStorage::open(path)
                    .map_err(flipdeck_core::StoreError::from)?
                    .without_sync();
                Classroom::with_storage(Box::new(storage), engine)?
            }
        };
        Ok(AppState::new(
            classroom,
            config.clock,
            Arc::from(provider::from_config(&config.provider)),
            config.admin_token.clone(),
            config.chat_secret.clone(),
        ))
    }

    pub fn lock(&self) -> MutexGuard<'_, Classroom> {
        self.classroom.lock().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn provider(&self) -> Arc<dyn Provider> {
        self.provider.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<LiveEvent> {
        self.live.subscribe()
    }

    pub fn now(&self, hint: Option<i64>) -> Timestamp {
        self.clock.now(hint)
    }

    /// Runs one command and publishes what it changed.
    pub fn execute(&self, actor: &ActorRef, cmd: Command, at: Timestamp) -> Result<Reply, EngineError> {
        let mut classroom = self.lock();
        let done = classroom.execute(actor, cmd, at)?;
        self.publish(&classroom, &done.events);
        Ok(done.reply)
    }

    fn publish(&self, classroom: &Classroom, events: &[EventEnvelope]) {
        if self.live.receiver_count() == 0 {
            return;
        }
        let state = classroom.state();
        for env in events {
            let (instance, event, voter) = match Event::from_envelope(env) {
                Ok(Event::VoteCast { instance, actor, .. }) => (Some(instance), "vote", Some(actor)),
                Ok(Event::InstanceClosed { instance, .. }) => (Some(instance), "closed", None),
                Ok(Event::PhaseAdvanced { session, .. }) => {
                    if let Ok(s) = state.session(&session) {
                        let _ = self.live.send(LiveEvent {
                            seq: env.seq,
                            session: session.clone(),
                            instance: None,
                            event: "phase",
                            phase: s.phase,
                            tally: None,
                            voter: None,
                        });
                    }
                    continue;
                }
                _ => continue,
            };
            let Some(inst) = instance.as_deref().and_then(|i| state.instance(i).ok()) else {
                continue;
            };
            let Ok(session) = state.session(&inst.session) else {
                continue;
            };
            let tally = inst.tally();
            let _ = self.live.send(LiveEvent {
                seq: env.seq,
                session: session.id.clone(),
                instance,
                event,
                phase: session.phase,
                tally: Some(LiveTally {
                    counts: tally.counts,
                    voters: tally.voters.len(),
                    closed: tally.closed,
                }),
                voter,
            });
        }
    }

    fn resolve_token(&self, token: &str) -> Option<ActorRef> {
        if self.admin_token.as_deref() == Some(token) {
            return Some(ActorRef::new(SYSTEM_ACTOR, Role::System));
        }
        self.lock().state().actor_for_token(token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidRequest", message)
    }

    fn unauthenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthenticated", "missing or unknown token")
    }

    fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "Unauthorized", message)
    }
}

/// HTTP status for an engine error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "PhaseViolation" | "AlreadyVoted" | "AlreadyDecided" | "Conflict" => StatusCode::CONFLICT,
        "DeadlineExpired" => StatusCode::GONE,
        "Unauthorized" | "VoteRequired" => StatusCode::FORBIDDEN,
        "NotFound" | "UnknownEntry" => StatusCode::NOT_FOUND,
        "StorageFailure" | "CorruptRecord" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = e.code();
        if status_for(code).is_server_error() {
            tracing::error!(error = %e, "engine failure");
        }
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<FipError> for ApiError {
    fn from(e: FipError) -> Self {
        match e {
            FipError::Provider(p) => ApiError::new(StatusCode::BAD_GATEWAY, "ProviderFailure", p.0),
            other => ApiError::invalid(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        bytes
    };
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("bad request body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn caller(st: &AppState, headers: &HeaderMap) -> Result<ActorRef, ApiError> {
    let token = bearer(headers).ok_or_else(ApiError::unauthenticated)?;
    st.resolve_token(token).ok_or_else(ApiError::unauthenticated)
}

fn request_time(st: &AppState, headers: &HeaderMap) -> Result<Timestamp, ApiError> {
    let hint = match headers.get(TIME_HEADER) {
        None => None,
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse::<i64>().ok())
                .ok_or_else(|| ApiError::invalid(format!("{TIME_HEADER} must be integer seconds")))?,
        ),
    };
    Ok(st.now(hint))
}

/// Caller and time, in that order, for a mutating request.
fn context(st: &AppState, headers: &HeaderMap) -> Result<(ActorRef, Timestamp), ApiError> {
    let actor = caller(st, headers)?;
    Ok((actor, request_time(st, headers)?))
}

fn run(st: &AppState, headers: &HeaderMap, cmd: Command) -> ApiResult {
    let (actor, at) = context(st, headers)?;
    ok(st.execute(&actor, cmd, at)?)
}

fn is_staff_of(classroom: &Classroom, actor: &ActorRef, course: &str) -> Result<bool, ApiError> {
    let c = classroom.state().course(course)?;
    Ok(match actor.role() {
        Role::System | Role::Assistant => true,
        Role::Instructor => c.instructor == actor.id(),
        Role::Student => false,
    })
}

fn is_staff(actor: &ActorRef) -> bool {
    actor.role() != Role::Student
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
}

pub fn random_token() -> String {
    Alphanumeric.sample_string(&mut rand::rng(), 32)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/actors", post(register_actor))
        .route("/tokens", post(mint_token))
        .route("/courses", post(open_course))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/polls", post(open_poll))
        .route("/sessions/{id}/quizzes", post(open_quiz))
        .route("/sessions/{id}/jitt", post(open_jitt))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/difficulty", post(choose_difficulty))
        .route("/sessions/{id}/submissions", post(submit))
        .route("/sessions/{id}/drafts", post(append_draft))
        .route("/sessions/{id}/drafts/submit", post(submit_draft))
        .route("/sessions/{id}/consolidate", post(consolidate))
        .route("/sessions/{id}/groups", post(record_groups))
        .route("/sessions/{id}/selection", get(selection))
        .route("/transcripts", post(record_transcript))
        .route("/fip/run", post(run_fip))
        .route("/instances/{id}", get(get_instance))
        .route("/instances/{id}/votes", post(cast_vote))
        .route("/instances/{id}/close", post(close_instance))
        .route("/instances/{id}/tally", get(get_tally))
        .route("/vetting/queue", get(vetting_queue))
        .route("/vetting/{id}/reproduce", post(reproduce))
        .route("/vetting/{id}/verdict", post(verdict))
        .route("/bank", get(query_bank).post(import_entry))
        .route("/pacing/{course}", get(get_pacing))
        .route("/pacing/{course}/recommendation", get(get_recommendation))
        .route("/pacing/{course}/new-topic", post(new_topic))
        .route("/analytics/{course}/{what}", get(export))
        .route("/live/{session}", get(live))
        .route("/chat/inbound", post(chat_inbound))
        .with_state(state)
}

async fn health() -> &'static str {
    "ok"
}

#[derive(Deserialize)]
struct ActorBody {
    id: String,
    role: Role,
    #[serde(default)]
    token: Option<String>,
}

async fn register_actor(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: ActorBody = parse_body(&body)?;
    let (actor, at) = context(&st, &headers)?;
    st.execute(
        &actor,
        Command::RegisterActor {
            id: b.id.clone(),
            role: b.role,
        },
        at,
    )?;
    let token = b.token.unwrap_or_else(random_token);
    st.execute(
        &actor,
        Command::MintToken {
            actor: b.id.clone(),
            token: token.clone(),
        },
        at,
    )?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"id": b.id, "role": b.role, "token": token})),
    )
        .into_response())
}

#[derive(Deserialize)]
struct TokenBody {
    actor: String,
    #[serde(default)]
    token: Option<String>,
}

async fn mint_token(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: TokenBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::MintToken {
            actor: b.actor,
            token: b.token.unwrap_or_else(random_token),
        },
    )
}

#[derive(Deserialize)]
struct CourseBody {
    course: String,
    instructor: String,
    #[serde(default)]
    params: Option<PacingParams>,
}

async fn open_course(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: CourseBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::OpenCourse {
            course: b.course,
            instructor: b.instructor,
            params: b.params,
        },
    )
}

#[derive(Deserialize)]
struct SessionBody {
    course: String,
    kind: RoutineKind,
    #[serde(default)]
    config: Option<SessionConfig>,
    #[serde(default)]
    idempotency_key: Option<String>,
}

async fn create_session(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: SessionBody = parse_body(&body)?;
    let header_key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    run(
        &st,
        &headers,
        Command::CreateSession {
            course: b.course,
            kind: b.kind,
            config: b.config,
            idempotency_key: b.idempotency_key.or(header_key),
        },
    )
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    caller(&st, &headers)?;
    let classroom = st.lock();
    ok(classroom.state().session(&id)?)
}

#[derive(Deserialize)]
struct OpenBody {
    #[serde(default)]
    entry: Option<String>,
    #[serde(default)]
    question: Option<McqQuestion>,
    #[serde(default)]
    text: Option<String>,
}

fn question_source(b: OpenBody, kind: QuestionKind) -> Result<QuestionSource, ApiError> {
    match (b.entry, b.question, b.text) {
        (Some(e), None, None) => Ok(QuestionSource::Bank(e)),
        (None, Some(q), None) => Ok(QuestionSource::Inline(InstanceContent::Mcq(q))),
        (None, None, Some(t)) => match parse_mcq(&t, kind).into_result() {
            Ok(q) => Ok(QuestionSource::Inline(InstanceContent::Mcq(q))),
            Err(_) if kind == QuestionKind::JittQuiz => Ok(QuestionSource::Inline(InstanceContent::OpenEnded(t))),
            Err(f) => Err(ApiError::invalid(format!("question text does not parse: {f:?}"))),
        },
        _ => Err(ApiError::invalid("give exactly one of entry, question or text")),
    }
}

async fn open_poll(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let source = question_source(parse_body(&body)?, QuestionKind::Poll)?;
    run(&st, &headers, Command::OpenPoll { session: id, source })
}

async fn open_quiz(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let source = question_source(parse_body(&body)?, QuestionKind::ClickerQuiz)?;
    run(&st, &headers, Command::OpenQuiz { session: id, source })
}

async fn open_jitt(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let source = question_source(parse_body(&body)?, QuestionKind::JittQuiz)?;
    run(&st, &headers, Command::OpenJitt { session: id, source })
}

#[derive(Deserialize)]
struct AdvanceBody {
    #[serde(default)]
    to: Option<Phase>,
}

async fn advance(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: AdvanceBody = parse_body(&body)?;
    run(&st, &headers, Command::Advance { session: id, to: b.to })
}

#[derive(Deserialize)]
struct DifficultyBody {
    choice: DifficultyChoice,
}

async fn choose_difficulty(
    State(st): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let b: DifficultyBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::ChooseDifficulty {
            session: id,
            choice: b.choice,
        },
    )
}

#[derive(Deserialize)]
struct SubmitBody {
    #[serde(default)]
    content: Option<SubmissionContent>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    prompts: Vec<String>,
    #[serde(default)]
    transcript_ref: Option<String>,
    #[serde(default)]
    summary: Option<String>,
    #[serde(default)]
    topic: Option<String>,
    #[serde(default)]
    attachment: Option<Attachment>,
}

/// MCQ text becomes a structured question; anything else stays open-ended.
pub fn submission_content(text: &str) -> SubmissionContent {
    match parse_mcq(text, QuestionKind::JittQuiz).into_result() {
        Ok(q) => SubmissionContent::Mcq(q),
        Err(_) => SubmissionContent::OpenEnded(text.to_string()),
    }
}

async fn submit(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: SubmitBody = parse_body(&body)?;
    let content = match (b.content, b.text) {
        (Some(c), None) => c,
        (None, Some(t)) => submission_content(&t),
        _ => return Err(ApiError::invalid("give exactly one of content or text")),
    };
    run(
        &st,
        &headers,
        Command::Submit {
            session: id,
            submission: SubmissionRequest {
                content,
                prompts: b.prompts,
                transcript_ref: b.transcript_ref,
                summary: b.summary,
                topic: b.topic,
                attachment: b.attachment,
            },
        },
    )
}

#[derive(Deserialize)]
struct DraftBody {
    text: String,
}

async fn append_draft(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: DraftBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::AppendDraft {
            session: id,
            text: b.text,
        },
    )
}

async fn submit_draft(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    run(&st, &headers, Command::SubmitDraft { session: id })
}

#[derive(Deserialize)]
struct ConsolidateBody {
    #[serde(default)]
    talking_points: Option<Vec<String>>,
}

/// Without explicit talking points the provider summarizes the session's
/// submissions; only its output is logged.
async fn consolidate(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: ConsolidateBody = parse_body(&body)?;
    let actor = caller(&st, &headers)?;
    let talking_points = match b.talking_points {
        Some(t) => t,
        None => {
            let inputs = {
                let classroom = st.lock();
                let course = classroom.state().session(&id)?.course.clone();
                if !is_staff_of(&classroom, &actor, &course)? {
                    return Err(ApiError::forbidden("staff only"));
                }
                classroom.consolidation_inputs(&id)?
            };
            if inputs.is_empty() {
                Vec::new()
            } else {
                let provider = st.provider();
                blocking(move || consolidate_responses(&inputs, provider.as_ref())).await??
            }
        }
    };
    let at = request_time(&st, &headers)?;
    ok(st.execute(
        &actor,
        Command::Consolidate {
            session: id,
            talking_points,
        },
        at,
    )?)
}

#[derive(Deserialize)]
struct GroupsBody {
    groups: Vec<Vec<String>>,
}

async fn record_groups(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: GroupsBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::RecordGroups {
            session: id,
            groups: b.groups,
        },
    )
}

async fn selection(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let actor = caller(&st, &headers)?;
    let classroom = st.lock();
    ok(classroom.selection_for(&id, actor.id())?)
}

#[derive(Deserialize)]
struct TranscriptBody {
    transcript: FipTranscript,
}

async fn record_transcript(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: TranscriptBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::RecordTranscript {
            transcript: b.transcript,
        },
    )
}

#[derive(Deserialize)]
struct FipBody {
    goal: QuestionGoal,
    #[serde(default)]
    max_turns: Option<usize>,
}

/// Runs a flipped-interaction session against the configured provider and
/// records the transcript under the caller.
async fn run_fip(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: FipBody = parse_body(&body)?;
    let actor = caller(&st, &headers)?;
    let mut policy = FipPolicy::default();
    if let Some(m) = b.max_turns {
        policy.max_turns = m;
    }
    let provider = st.provider();
    let transcript = blocking(move || run_fip_session(&b.goal, provider.as_ref(), &policy)).await??;
    let at = request_time(&st, &headers)?;
    let reply = st.execute(
        &actor,
        Command::RecordTranscript {
            transcript: transcript.clone(),
        },
        at,
    )?;
    let Reply::Transcript { id } = reply else {
        return Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "Internal",
            "unexpected reply",
        ));
    };
    ok(json!({"transcript_id": id, "transcript": transcript}))
}

/// What a participant may see of an instance: no answer key while it is open.
pub fn instance_view(inst: &QuestionInstance, reveal: bool) -> Value {
    let content = match &inst.content {
        InstanceContent::Mcq(q) => json!({
            "stem": q.stem(),
            "options": q.options().iter().map(|o| json!({"label": o.label, "text": o.text})).collect::<Vec<_>>(),
            "answer_key": reveal.then(|| q.answer_key().clone()),
        }),
        InstanceContent::OpenEnded(t) => json!({ "text": t }),
    };
    json!({
        "id": inst.id,
        "session": inst.session,
        "kind": inst.kind,
        "deadline": inst.deadline,
        "closed": !inst.is_open(),
        "content": content,
    })
}

async fn get_instance(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let actor = caller(&st, &headers)?;
    let classroom = st.lock();
    let inst = classroom.state().instance(&id)?;
    ok(instance_view(inst, is_staff(&actor) || !inst.is_open()))
}

#[derive(Deserialize)]
struct VoteBody {
    labels: LabelSet,
}

async fn cast_vote(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: VoteBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::CastVote {
            instance: id,
            labels: b.labels,
        },
    )
}

async fn close_instance(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    run(&st, &headers, Command::CloseInstance { instance: id })
}

async fn get_tally(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let actor = caller(&st, &headers)?;
    let classroom = st.lock();
    ok(classroom.view_tally(&id, &actor)?)
}

async fn vetting_queue(
    State(st): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let actor = caller(&st, &headers)?;
    if !actor.role().can_review() {
        return Err(ApiError::forbidden("reviewers only"));
    }
    let classroom = st.lock();
    ok(classroom.vetting_queue(q.get("course").map(String::as_str)))
}

#[derive(Deserialize)]
struct ReproduceBody {
    #[serde(default)]
    regenerated: Option<String>,
    #[serde(default)]
    provider: Option<ProviderIdentity>,
}

/// Without `regenerated`, the configured provider replays the entry's prompts.
async fn reproduce(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: ReproduceBody = parse_body(&body)?;
    let actor = caller(&st, &headers)?;
    let (regenerated, provider) = match b.regenerated {
        Some(r) => (r, b.provider),
        None => {
            let prompts = {
                let classroom = st.lock();
                let entry = classroom.state().bank.get(&id).ok_or_else(|| {
                    ApiError::from(EngineError::from(flipdeck_core::vetting::VettingError::UnknownEntry(
                        id.clone(),
                    )))
                })?;
                entry.provenance.prompts.clone()
            };
            if prompts.is_empty() {
                return Err(ApiError::invalid("entry has no recorded prompts to replay"));
            }
            let p = st.provider();
            let identity = p.identity();
            let text = blocking(move || regenerate(p.as_ref(), &prompts))
                .await?
                .map_err(FipError::from)?;
            (text, Some(identity))
        }
    };
    let at = request_time(&st, &headers)?;
    ok(st.execute(
        &actor,
        Command::ReproduceCheck {
            entry: id,
            regenerated,
            provider,
        },
        at,
    )?)
}

#[derive(Deserialize)]
struct VerdictBody {
    decision: Decision,
    #[serde(default)]
    initial_difficulty: Option<u8>,
}

async fn verdict(State(st): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: VerdictBody = parse_body(&body)?;
    run(
        &st,
        &headers,
        Command::RecordVerdict {
            entry: id,
            decision: b.decision,
            initial_difficulty: b.initial_difficulty,
        },
    )
}

fn enum_param<T: DeserializeOwned>(name: &str, value: &str) -> Result<T, ApiError> {
    serde_json::from_value(Value::String(value.to_string()))
        .map_err(|_| ApiError::invalid(format!("bad {name} `{value}`")))
}

fn num_param(name: &str, value: &str) -> Result<f64, ApiError> {
    value
        .parse()
        .map_err(|_| ApiError::invalid(format!("bad {name} `{value}`")))
}

pub fn bank_filter(q: &HashMap<String, String>) -> Result<BankFilter, ApiError> {
    let mut f = BankFilter {
        course: q.get("course").cloned(),
        topic: q.get("topic").cloned(),
        ..Default::default()
    };
    if let Some(s) = q.get("status") {
        f.status = Some(enum_param::<EntryStatus>("status", s)?);
    }
    if let Some(k) = q.get("kind") {
        f.kind = Some(enum_param::<EntryKind>("kind", k)?);
    }
    match (q.get("lo"), q.get("hi")) {
        (None, None) => {}
        (lo, hi) => {
            let lo = lo.map_or(Ok(1.0), |v| num_param("lo", v))?;
            let hi = hi.map_or(Ok(10.0), |v| num_param("hi", v))?;
            f.band = Some(DifficultyBand::new(lo, hi));
        }
    }
    Ok(f)
}

async fn query_bank(
    State(st): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let actor = caller(&st, &headers)?;
    if !is_staff(&actor) {
        return Err(ApiError::forbidden("staff only"));
    }
    let filter = bank_filter(&q)?;
    let classroom = st.lock();
    ok(classroom.query_bank(&filter))
}

#[derive(Deserialize)]
struct ImportBody {
    course: String,
    #[serde(default)]
    topic: Option<String>,
    #[serde(default)]
    item: Option<BankItem>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    kind: Option<QuestionKind>,
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    prompts: Vec<String>,
    #[serde(default)]
    provider: Option<ProviderIdentity>,
    #[serde(default)]
    attachment: Option<Attachment>,
}

/// Bank item from raw text: a parsed MCQ, or open-ended text for JiTT.
pub fn item_from_text(text: &str, kind: QuestionKind) -> Result<BankItem, ApiError> {
    match parse_mcq(text, kind).into_result() {
        Ok(q) => Ok(BankItem::Mcq(q)),
        Err(_) if kind == QuestionKind::JittQuiz => Ok(BankItem::OpenEnded(text.to_string())),
        Err(f) => Err(ApiError::invalid(format!("question text does not parse: {f:?}"))),
    }
}

async fn import_entry(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let b: ImportBody = parse_body(&body)?;
    let item = match (b.item, b.text) {
        (Some(i), None) => i,
        (None, Some(t)) => item_from_text(&t, b.kind.unwrap_or(QuestionKind::ClickerQuiz))?,
        _ => return Err(ApiError::invalid("give exactly one of item or text")),
    };
    run(
        &st,
        &headers,
        Command::ImportEntry {
            course: b.course,
            topic: b.topic,
            item,
            author: b.author,
            prompts: b.prompts,
            provider: b.provider,
            attachment: b.attachment,
        },
    )
}

async fn get_pacing(State(st): State<Shared>, Path(course): Path<String>, headers: HeaderMap) -> ApiResult {
    caller(&st, &headers)?;
    let classroom = st.lock();
    ok(classroom.state().course(&course)?.pacing)
}

async fn get_recommendation(State(st): State<Shared>, Path(course): Path<String>, headers: HeaderMap) -> ApiResult {
    caller(&st, &headers)?;
    let classroom = st.lock();
    ok(classroom.recommendation(&course)?)
}

async fn new_topic(State(st): State<Shared>, Path(course): Path<String>, headers: HeaderMap) -> ApiResult {
    run(&st, &headers, Command::StartNewTopic { course })
}

/// CSV export. Students may read only the leaderboard.
async fn export(
    State(st): State<Shared>,
    Path((course, what)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult {
    let actor = caller(&st, &headers)?;
    if !EXPORTS.contains(&what.as_str()) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "NotFound",
            format!("unknown export {what}; expected one of {}", EXPORTS.join(", ")),
        ));
    }
    let classroom = st.lock();
    if what != "leaderboard" && !is_staff_of(&classroom, &actor, &course)? {
        return Err(ApiError::forbidden("staff only"));
    }
    let csv = classroom.analytics().export(&course, &what)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

fn visible(ev: &LiveEvent, student: &Option<String>, voted: &BTreeSet<String>) -> bool {
    match (student, &ev.instance) {
        (None, _) | (_, None) => true,
        (Some(_), Some(inst)) => ev.tally.as_ref().is_some_and(|t| t.closed) || voted.contains(inst),
    }
}

struct LiveCursor {
    rx: broadcast::Receiver<LiveEvent>,
    session: String,
    student: Option<String>,
    voted: BTreeSet<String>,
}

fn live_stream(cursor: LiveCursor) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            match c.rx.recv().await {
                Ok(ev) => {
                    if ev.session != c.session {
                        continue;
                    }
                    if let (Some(me), Some(v), Some(i)) = (&c.student, &ev.voter, &ev.instance) {
                        if me == v {
                            c.voted.insert(i.clone());
                        }
                    }
                    if !visible(&ev, &c.student, &c.voted) {
                        continue;
                    }
                    let sse = SseEvent::default()
                        .event(ev.event)
                        .id(ev.seq.to_string())
                        .json_data(&ev)
                        .unwrap_or_default();
                    return Some((Ok(sse), c));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let sse = SseEvent::default().event("lagged").data(n.to_string());
                    return Some((Ok(sse), c));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

/// Server-sent tallies for one session. Students only receive tallies for
/// instances they have voted on, or that have closed.
async fn live(
    State(st): State<Shared>,
    Path(session): Path<String>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let token = bearer(&headers)
        .or(q.get("token").map(String::as_str))
        .ok_or_else(ApiError::unauthenticated)?;
    let actor = st.resolve_token(token).ok_or_else(ApiError::unauthenticated)?;
    let classroom = st.lock();
    classroom.state().session(&session)?;
    let rx = st.subscribe();
    let student = (actor.role() == Role::Student).then(|| actor.id().to_string());
    let voted = classroom
        .state()
        .instances
        .values()
        .filter(|i| i.session == session && i.ballots.contains_key(actor.id()))
        .map(|i| i.id.clone())
        .collect();
    drop(classroom);
    Ok(Sse::new(live_stream(LiveCursor {
        rx,
        session,
        student,
        voted,
    }))
    .keep_alive(KeepAlive::default()))
}

async fn chat_inbound(State(st): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult {
    if let Some(secret) = &st.chat_secret {
        let given = headers.get(CHAT_SECRET_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(secret.as_str()) {
            return Err(ApiError::unauthenticated());
        }
    }
    let msg: ChatInbound = parse_body(&body)?;
    let at = request_time(&st, &headers)?;
    ok(chat::handle(&st, msg, at)?)
}
