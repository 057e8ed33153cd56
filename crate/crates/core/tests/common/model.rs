//! A from-scratch model of the session rules, used to predict the outcome of
//! every command in a random sequence and to check the engine against it.

use std::collections::{BTreeMap, BTreeSet};

use flipdeck_core::classroom::{inline_mcq, QuestionSource, SubmissionRequest};
use flipdeck_core::domain::Label;
use flipdeck_core::routine::{DifficultyChoice, InstanceContent, Phase, RoutineKind, SessionConfig, SubmissionContent};
use flipdeck_core::{ActorRef, Classroom, Command, EngineConfig, LabelSet, McqQuestion, QuestionKind, Role, Timestamp};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gen::{rng, sys};

const COURSE: &str = "c";
const STUDENTS: [&str; 5] = ["st0", "st1", "st2", "st3", "st4"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    OpenPoll,
    ClosePoll,
    Advance,
    OpenQuiz,
    CloseQuiz,
    OpenJitt,
    Consolidate,
}

/// Legal edges, written out per routine.
fn edge(kind: RoutineKind, prompt: bool, from: Phase, op: Op) -> Option<Phase> {
    use Phase::*;
    match kind {
        RoutineKind::PollPromptQuiz => match (from, op) {
            (Created, Op::OpenPoll) => Some(PollOpen),
            (PollOpen, Op::ClosePoll) => Some(PollClosed),
            (PollClosed, Op::Advance) if prompt => Some(PromptPhase),
            (PollClosed, Op::OpenQuiz) | (PromptPhase, Op::OpenQuiz) => Some(QuizOpen),
            (QuizOpen, Op::CloseQuiz) => Some(QuizClosed),
            (QuizClosed, Op::Advance) => Some(Discussed),
            _ => None,
        },
        RoutineKind::QuizPromptDiscuss => match (from, op) {
            (Created, Op::OpenJitt) => Some(JittOpen),
            (JittOpen, Op::Advance) => Some(PromptPhase),
            (PromptPhase, Op::Consolidate) => Some(Consolidated),
            (Consolidated, Op::Advance) => Some(Discussed),
            _ => None,
        },
    }
}

fn rank(kind: RoutineKind, p: Phase) -> usize {
    let order: &[Phase] = match kind {
        RoutineKind::PollPromptQuiz => &[
            Phase::Created,
            Phase::PollOpen,
            Phase::PollClosed,
            Phase::PromptPhase,
            Phase::QuizOpen,
            Phase::QuizClosed,
            Phase::Discussed,
        ],
        RoutineKind::QuizPromptDiscuss => &[
            Phase::Created,
            Phase::JittOpen,
            Phase::PromptPhase,
            Phase::Consolidated,
            Phase::Discussed,
        ],
    };
    order.iter().position(|q| *q == p).unwrap_or(usize::MAX)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum InstKind {
    Poll,
    Quiz,
    Jitt,
}

struct MSession {
    kind: RoutineKind,
    prompt: bool,
    limit: i64,
    phase: Phase,
    jitt: Option<String>,
}

struct MInst {
    session: String,
    kind: InstKind,
    options: Option<usize>,
    open: bool,
    deadline: Option<i64>,
    ballots: BTreeMap<String, BTreeSet<char>>,
}

#[derive(Default)]
struct Model {
    sessions: BTreeMap<String, MSession>,
    instances: BTreeMap<String, MInst>,
    next_session: u64,
    next: [u64; 3],
    last_ts: i64,
}

#[derive(Debug, Default, Clone)]
pub struct SuiteStats {
    pub sequences: usize,
    pub commands: usize,
    pub accepted: usize,
    pub errors: BTreeMap<String, usize>,
    pub votes_at_deadline: usize,
    pub votes_after_deadline: usize,
    pub gated_views: usize,
    pub violations: Vec<String>,
}

/// What the generator asked for, kept alongside the engine command.
enum Planned {
    Cmd(ActorRef, Command),
    View(ActorRef, String),
}

fn actor(rng: &mut ChaCha8Rng) -> ActorRef {
    match rng.random_range(0..20) {
        0..=2 => ActorRef::new("prof", Role::Instructor),
        3 => ActorRef::new("ta", Role::Assistant),
        4 => ActorRef::new("other", Role::Instructor),
        5 => ActorRef::new("ghost", Role::Student),
        _ => ActorRef::new(*STUDENTS.choose(rng).unwrap(), Role::Student),
    }
}

fn staff(rng: &mut ChaCha8Rng) -> ActorRef {
    match rng.random_range(0..10) {
        0..=6 => ActorRef::new("prof", Role::Instructor),
        7 | 8 => ActorRef::new("ta", Role::Assistant),
        _ => actor(rng),
    }
}

fn question(rng: &mut ChaCha8Rng, n: usize) -> McqQuestion {
    let texts: Vec<String> = (0..n).map(|i| format!("choice {i}")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let key: LabelSet = [Label::from_index(rng.random_range(0..n)).unwrap()].into();
    McqQuestion::from_texts("m", "Pick one?", &refs, key, QuestionKind::ClickerQuiz).unwrap()
}

impl Model {
    fn pick_session(&self, rng: &mut ChaCha8Rng) -> String {
        if self.sessions.is_empty() || rng.random_bool(0.05) {
            return "s99".into();
        }
        let ids: Vec<&String> = self.sessions.keys().collect();
        (*ids.choose(rng).unwrap()).clone()
    }

    fn pick_instance(&self, rng: &mut ChaCha8Rng, prefer_open: bool) -> String {
        let open: Vec<&String> = self.instances.iter().filter(|(_, i)| i.open).map(|(k, _)| k).collect();
        if prefer_open && !open.is_empty() && rng.random_bool(0.85) {
            return (*open.choose(rng).unwrap()).clone();
        }
        if self.instances.is_empty() || rng.random_bool(0.05) {
            return "q99".into();
        }
        let ids: Vec<&String> = self.instances.keys().collect();
        (*ids.choose(rng).unwrap()).clone()
    }

    /// Time for the next command: usually a small step, sometimes exactly on
    /// or just past an open quiz deadline, sometimes in the past.
    fn pick_time(&self, rng: &mut ChaCha8Rng) -> i64 {
        let deadlines: Vec<i64> = self
            .instances
            .values()
            .filter(|i| i.open)
            .filter_map(|i| i.deadline)
            .collect();
        match rng.random_range(0..10) {
            0 | 1 if !deadlines.is_empty() => *deadlines.choose(rng).unwrap(),
            2 if !deadlines.is_empty() => deadlines.choose(rng).unwrap() + 1,
            3 => self.last_ts - rng.random_range(1..100),
            _ => self.last_ts + *[0, 1, 5, 30].choose(rng).unwrap(),
        }
    }

    fn plan(&self, rng: &mut ChaCha8Rng) -> Planned {
        let roll = rng.random_range(0..100);
        match roll {
            0..=6 => {
                let cfg = SessionConfig {
                    quiz_time_limit_s: *[30, 60, 300].choose(rng).unwrap(),
                    prompt_phase_enabled: rng.random_bool(0.7),
                };
                let kind = if rng.random_bool(0.5) {
                    RoutineKind::PollPromptQuiz
                } else {
                    RoutineKind::QuizPromptDiscuss
                };
                Planned::Cmd(
                    staff(rng),
                    Command::CreateSession {
                        course: COURSE.into(),
                        kind,
                        config: Some(cfg),
                        idempotency_key: None,
                    },
                )
            }
            7..=20 => {
                let session = self.pick_session(rng);
                let source = if rng.random_bool(0.85) {
                    let n = rng.random_range(2..=5);
                    inline_mcq(question(rng, n))
                } else {
                    QuestionSource::Inline(InstanceContent::OpenEnded("Why?".into()))
                };
                let cmd = match rng.random_range(0..3) {
                    0 => Command::OpenPoll { session, source },
                    1 => Command::OpenQuiz { session, source },
                    _ => Command::OpenJitt { session, source },
                };
                Planned::Cmd(staff(rng), cmd)
            }
            21..=55 => {
                let instance = self.pick_instance(rng, true);
                let mut labels = LabelSet::new();
                match rng.random_range(0..10) {
                    0 => {}
                    1 => {
                        labels.insert(Label::from_index(rng.random_range(4..8)).unwrap());
                    }
                    2 => {
                        labels.insert(Label::from_index(0).unwrap());
                        labels.insert(Label::from_index(1).unwrap());
                    }
                    _ => {
                        labels.insert(Label::from_index(rng.random_range(0..2)).unwrap());
                    }
                }
                Planned::Cmd(actor(rng), Command::CastVote { instance, labels })
            }
            56..=63 => Planned::Cmd(
                staff(rng),
                Command::CloseInstance {
                    instance: self.pick_instance(rng, true),
                },
            ),
            64..=75 => {
                let to = if rng.random_bool(0.7) {
                    None
                } else {
                    Some(
                        *[
                            Phase::Created,
                            Phase::PollOpen,
                            Phase::PollClosed,
                            Phase::PromptPhase,
                            Phase::QuizOpen,
                            Phase::QuizClosed,
                            Phase::JittOpen,
                            Phase::Consolidated,
                            Phase::Discussed,
                        ]
                        .choose(rng)
                        .unwrap(),
                    )
                };
                Planned::Cmd(
                    staff(rng),
                    Command::Advance {
                        session: self.pick_session(rng),
                        to,
                    },
                )
            }
            76..=79 => Planned::Cmd(
                actor(rng),
                Command::ChooseDifficulty {
                    session: self.pick_session(rng),
                    choice: DifficultyChoice::Elevated,
                },
            ),
            80..=84 => {
                let n = *[0, 2, 11].choose(rng).unwrap();
                Planned::Cmd(
                    staff(rng),
                    Command::Consolidate {
                        session: self.pick_session(rng),
                        talking_points: (0..n).map(|i| format!("point {i}")).collect(),
                    },
                )
            }
            85..=89 => {
                let prompts = match rng.random_range(0..3) {
                    0 => vec![],
                    1 => vec!["  ".into()],
                    _ => vec!["ask me about gates".into()],
                };
                let submission = SubmissionRequest {
                    content: SubmissionContent::OpenEnded("Why NAND?".into()),
                    prompts,
                    transcript_ref: None,
                    summary: None,
                    topic: None,
                    attachment: None,
                };
                Planned::Cmd(
                    actor(rng),
                    Command::Submit {
                        session: self.pick_session(rng),
                        submission,
                    },
                )
            }
            _ => Planned::View(actor(rng), self.pick_instance(rng, true)),
        }
    }

    fn known(a: &ActorRef) -> bool {
        a.id() != "ghost"
    }

    fn is_staff(a: &ActorRef) -> Result<(), &'static str> {
        match a.id() {
            "prof" | "ta" => Ok(()),
            _ => Err("Unauthorized"),
        }
    }

    fn is_student(a: &ActorRef) -> Result<(), &'static str> {
        if a.role() == Role::Student {
            Ok(())
        } else {
            Err("Unauthorized")
        }
    }

    fn session(&self, id: &str) -> Result<&MSession, &'static str> {
        self.sessions.get(id).ok_or("NotFound")
    }

    fn instance(&self, id: &str) -> Result<&MInst, &'static str> {
        self.instances.get(id).ok_or("NotFound")
    }

    fn predict_view(&self, a: &ActorRef, inst: &str) -> Result<(), &'static str> {
        if !Self::known(a) {
            return Err("Unauthorized");
        }
        let i = self.instance(inst)?;
        if a.role() == Role::Student && i.open && !i.ballots.contains_key(a.id()) {
            return Err("VoteRequired");
        }
        Ok(())
    }

    fn predict(&self, a: &ActorRef, cmd: &Command, at: i64) -> Result<(), &'static str> {
        if !Self::known(a) {
            return Err("Unauthorized");
        }
        match cmd {
            Command::CreateSession { .. } => Self::is_staff(a),
            Command::OpenPoll { session, source }
            | Command::OpenQuiz { session, source }
            | Command::OpenJitt { session, source } => {
                let s = self.session(session)?;
                Self::is_staff(a)?;
                let op = match cmd {
                    Command::OpenPoll { .. } => Op::OpenPoll,
                    Command::OpenQuiz { .. } => Op::OpenQuiz,
                    _ => Op::OpenJitt,
                };
                edge(s.kind, s.prompt, s.phase, op).ok_or("PhaseViolation")?;
                let open_ended = matches!(source, QuestionSource::Inline(InstanceContent::OpenEnded(_)));
                if open_ended && op != Op::OpenJitt {
                    return Err("InvalidRequest");
                }
                Ok(())
            }
            Command::CastVote { instance, labels } => {
                let i = self.instance(instance)?;
                Self::is_student(a)?;
                let Some(n) = i.options else { return Err("NotVotable") };
                if !i.open || i.deadline.is_some_and(|d| at > d) {
                    return Err("DeadlineExpired");
                }
                if i.ballots.contains_key(a.id()) {
                    return Err("AlreadyVoted");
                }
                if labels.is_empty() {
                    return Err("EmptyBallot");
                }
                if labels.iter().any(|l| l.index() >= n) {
                    return Err("UnknownLabel");
                }
                Ok(())
            }
            Command::CloseInstance { instance } => {
                let i = self.instance(instance)?;
                self.session(&i.session)?;
                Self::is_staff(a)?;
                if !i.open {
                    return Err("PhaseViolation");
                }
                Ok(())
            }
            Command::Advance { session, to } => {
                let s = self.session(session)?;
                Self::is_staff(a)?;
                let next = edge(s.kind, s.prompt, s.phase, Op::Advance);
                match (to, next) {
                    (None, Some(_)) => Ok(()),
                    (Some(t), Some(n)) if *t == n => Ok(()),
                    _ => Err("PhaseViolation"),
                }
            }
            Command::ChooseDifficulty { session, .. } => {
                let s = self.session(session)?;
                Self::is_student(a)?;
                if s.kind == RoutineKind::QuizPromptDiscuss && s.phase == Phase::JittOpen {
                    Ok(())
                } else {
                    Err("PhaseViolation")
                }
            }
            Command::Consolidate {
                session,
                talking_points,
            } => {
                let s = self.session(session)?;
                Self::is_staff(a)?;
                edge(s.kind, s.prompt, s.phase, Op::Consolidate).ok_or("PhaseViolation")?;
                if talking_points.len() > 10 {
                    return Err("InvalidRequest");
                }
                Ok(())
            }
            Command::Submit { session, submission } => {
                let s = self.session(session)?;
                Self::is_student(a)?;
                let open = match s.kind {
                    RoutineKind::PollPromptQuiz => s.phase == Phase::PromptPhase,
                    RoutineKind::QuizPromptDiscuss => matches!(s.phase, Phase::JittOpen | Phase::PromptPhase),
                };
                if !open {
                    return Err("PhaseViolation");
                }
                if submission.prompts.iter().all(|p| p.trim().is_empty()) {
                    return Err("InvalidSubmission");
                }
                Ok(())
            }
            _ => unreachable!("not generated"),
        }
    }

    fn apply(&mut self, a: &ActorRef, cmd: &Command, at: i64) {
        self.last_ts = at;
        match cmd {
            Command::CreateSession { kind, config, .. } => {
                self.next_session += 1;
                let cfg = config.unwrap();
                self.sessions.insert(
                    format!("s{}", self.next_session),
                    MSession {
                        kind: *kind,
                        prompt: cfg.prompt_phase_enabled,
                        limit: cfg.quiz_time_limit_s,
                        phase: Phase::Created,
                        jitt: None,
                    },
                );
            }
            Command::OpenPoll { session, source }
            | Command::OpenQuiz { session, source }
            | Command::OpenJitt { session, source } => {
                let (kind, slot, prefix, op) = match cmd {
                    Command::OpenPoll { .. } => (InstKind::Poll, 0, "p", Op::OpenPoll),
                    Command::OpenQuiz { .. } => (InstKind::Quiz, 1, "q", Op::OpenQuiz),
                    _ => (InstKind::Jitt, 2, "j", Op::OpenJitt),
                };
                self.next[slot] += 1;
                let id = format!("{prefix}{}", self.next[slot]);
                let s = self.sessions.get_mut(session).unwrap();
                s.phase = edge(s.kind, s.prompt, s.phase, op).unwrap();
                if kind == InstKind::Jitt {
                    s.jitt = Some(id.clone());
                }
                let options = match source {
                    QuestionSource::Inline(InstanceContent::Mcq(q)) => Some(q.options().len()),
                    _ => None,
                };
                let deadline = (kind == InstKind::Quiz).then_some(at + s.limit);
                self.instances.insert(
                    id,
                    MInst {
                        session: session.clone(),
                        kind,
                        options,
                        open: true,
                        deadline,
                        ballots: BTreeMap::new(),
                    },
                );
            }
            Command::CastVote { instance, labels } => {
                let ballot = labels.iter().map(|l| l.as_char()).collect();
                self.instances
                    .get_mut(instance)
                    .unwrap()
                    .ballots
                    .insert(a.id().to_string(), ballot);
            }
            Command::CloseInstance { instance } => {
                let i = self.instances.get_mut(instance).unwrap();
                i.open = false;
                let (kind, session) = (i.kind, i.session.clone());
                let s = self.sessions.get_mut(&session).unwrap();
                match kind {
                    InstKind::Poll => s.phase = Phase::PollClosed,
                    InstKind::Quiz => s.phase = Phase::QuizClosed,
                    InstKind::Jitt => {}
                }
            }
            Command::Advance { session, .. } => {
                let s = self.sessions.get_mut(session).unwrap();
                s.phase = edge(s.kind, s.prompt, s.phase, Op::Advance).unwrap();
                if let Some(j) = s.jitt.clone() {
                    self.instances.get_mut(&j).unwrap().open = false;
                }
            }
            Command::Consolidate { session, .. } => {
                self.sessions.get_mut(session).unwrap().phase = Phase::Consolidated;
            }
            _ => {}
        }
    }
}

fn setup() -> Classroom {
    let mut room = Classroom::in_memory(EngineConfig::default());
    let sys = sys();
    for (id, role) in [
        ("prof", Role::Instructor),
        ("ta", Role::Assistant),
        ("other", Role::Instructor),
    ]
    .into_iter()
    .chain(STUDENTS.iter().map(|s| (*s, Role::Student)))
    {
        room.execute(&sys, Command::RegisterActor { id: id.into(), role }, Timestamp(0))
            .unwrap();
    }
    let prof = ActorRef::new("prof", Role::Instructor);
    room.execute(
        &prof,
        Command::OpenCourse {
            course: COURSE.into(),
            instructor: "prof".into(),
            params: None,
        },
        Timestamp(0),
    )
    .unwrap();
    room
}

/// Compares engine state with the model after a step.
fn compare(room: &Classroom, model: &Model, stats: &mut SuiteStats, step: &str) {
    let st = room.state();
    let mut fail = |m: String| stats.violations.push(format!("{step}: {m}"));
    for (id, mi) in &model.instances {
        let Some(ei) = st.instances.get(id) else {
            fail(format!("instance {id} missing"));
            continue;
        };
        let engine_ballots: BTreeMap<String, BTreeSet<char>> = ei
            .ballots
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|l| l.as_char()).collect()))
            .collect();
        if engine_ballots != mi.ballots {
            fail(format!("instance {id}: ballots differ from the model (immutability)"));
        }
        let tally = ei.tally();
        let mut expected: BTreeMap<char, u64> = BTreeMap::new();
        for b in mi.ballots.values() {
            for c in b {
                *expected.entry(*c).or_default() += 1;
            }
        }
        for (l, n) in &tally.counts {
            if expected.get(&l.as_char()).copied().unwrap_or(0) != *n {
                fail(format!("instance {id}: count for {l} is {n}"));
            }
        }
        let sum: u64 = tally.counts.values().sum();
        let ballots: u64 = mi.ballots.values().map(|b| b.len() as u64).sum();
        if sum != ballots || tally.voters.len() != mi.ballots.len() {
            fail(format!("instance {id}: tally not conserved"));
        }
        if mi.ballots.values().all(|b| b.len() == 1) && sum != tally.voters.len() as u64 {
            fail(format!("instance {id}: single-label counts differ from voters"));
        }
        if ei.is_open() != mi.open || ei.deadline.map(|d| d.0) != mi.deadline {
            fail(format!("instance {id}: open/deadline differ"));
        }
    }
    for (id, ms) in &model.sessions {
        let Some(es) = st.sessions.get(id) else {
            fail(format!("session {id} missing"));
            continue;
        };
        if es.phase != ms.phase {
            fail(format!("session {id}: phase {} but model says {}", es.phase, ms.phase));
        }
        let ranks: Vec<usize> = es.history.iter().map(|(p, _)| rank(es.kind, *p)).collect();
        if ranks.windows(2).any(|w| w[0] >= w[1]) || ranks.contains(&usize::MAX) {
            fail(format!("session {id}: phase history not monotone"));
        }
    }
    if st.sessions.len() != model.sessions.len() || st.instances.len() != model.instances.len() {
        fail("engine created objects the model did not".into());
    }
}

/// Runs one generated sequence of `len` steps.
pub fn run_sequence(seed: u64, len: usize, stats: &mut SuiteStats) {
    let mut rng = rng(seed);
    let mut room = setup();
    let mut model = Model::default();
    for step in 0..len {
        stats.commands += 1;
        let label = format!("seed {seed} step {step}");
        match model.plan(&mut rng) {
            Planned::View(a, inst) => {
                let predicted = model.predict_view(&a, &inst);
                let got = room.view_tally(&inst, &a).map(|_| ()).map_err(|e| e.code());
                if predicted != got {
                    stats.violations.push(format!(
                        "{label}: view {inst} by {}: model {predicted:?}, engine {got:?}",
                        a.id()
                    ));
                }
                if got == Err("VoteRequired") {
                    stats.gated_views += 1;
                }
                if let Err(code) = got {
                    *stats.errors.entry(code.to_string()).or_default() += 1;
                }
            }
            Planned::Cmd(a, cmd) => {
                let at = model.pick_time(&mut rng);
                let effective = at.max(model.last_ts);
                let predicted = model.predict(&a, &cmd, effective);
                let got = room
                    .execute(&a, cmd.clone(), Timestamp(at))
                    .map(|_| ())
                    .map_err(|e| e.code());
                if predicted != got {
                    stats.violations.push(format!(
                        "{label}: {cmd:?} by {}: model {predicted:?}, engine {got:?}",
                        a.id()
                    ));
                    return;
                }
                match got {
                    Ok(()) => {
                        stats.accepted += 1;
                        if let Command::CastVote { instance, .. } = &cmd {
                            if model.instances[instance].deadline == Some(effective) {
                                stats.votes_at_deadline += 1;
                            }
                        }
                        model.apply(&a, &cmd, effective);
                    }
                    Err(code) => {
                        *stats.errors.entry(code.to_string()).or_default() += 1;
                        if code == "DeadlineExpired" {
                            if let Command::CastVote { instance, .. } = &cmd {
                                let i = &model.instances[instance];
                                if i.open && i.deadline.is_some_and(|d| effective > d) {
                                    stats.votes_after_deadline += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        compare(&room, &model, stats, &label);
        if !stats.violations.is_empty() {
            return;
        }
    }
    if let Err(e) = flipdeck_core::classroom::check_invariants(room.state()) {
        stats.violations.push(format!("seed {seed}: {e}"));
    }
    stats.sequences += 1;
}

/// The full property suite: `sequences` generated sequences of `len` steps.
pub fn routine_suite(first_seed: u64, sequences: usize, len: usize) -> SuiteStats {
    let mut stats = SuiteStats::default();
    for seed in first_seed..first_seed + sequences as u64 {
        run_sequence(seed, len, &mut stats);
        if !stats.violations.is_empty() {
            break;
        }
    }
    stats
}

/// Error codes the suite must provoke at least once.
pub const NAMED_ERRORS: [&str; 11] = [
    "PhaseViolation",
    "AlreadyVoted",
    "DeadlineExpired",
    "UnknownLabel",
    "EmptyBallot",
    "VoteRequired",
    "InvalidSubmission",
    "NotVotable",
    "Unauthorized",
    "NotFound",
    "InvalidRequest",
];
