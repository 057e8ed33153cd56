//! Messaging-platform webhook. Each inbound update gets one reply message,
//! optionally with inline buttons whose callback data comes back as the next
//! update.
//!
//! Callback data: `vote:<instance>:<labels>` and
//! `diff:<session>:<moderate|elevated>`. Text: `/question`, `/submit`,
//! `/help`; anything else is added to the sender's draft question.

use flipdeck_core::classroom::SYSTEM_ACTOR;
use flipdeck_core::domain::parse_label_set;
use flipdeck_core::routine::{DifficultyChoice, InstanceContent, Phase, RoutineKind, RoutineSession, VoteTally};
use flipdeck_core::vetting::id_number;
use flipdeck_core::{ActorRef, Command, EngineError, Reply, Role, Timestamp};
use serde::{Deserialize, Serialize};

use crate::app::AppState;

pub const MAX_BUTTONS: usize = 8;

pub const UNKNOWN_CHOICE: &str = "I didn't understand that choice.";
pub const ALREADY_VOTED: &str = "Your vote is already recorded.";
pub const VOTING_CLOSED: &str = "Voting on this question has closed.";
pub const NO_QUESTION: &str = "There is no open question right now.";
pub const NO_SESSION: &str = "There is no class activity right now.";
pub const HELP: &str = "Send /question to see the open question. Type lines to draft your own question, starting a line with `prompt:` to record a prompt you used. Send /submit to hand it in.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatInbound {
    pub platform: String,
    pub chat_id: String,
    pub user_ref: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub callback_data: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatButton {
    pub label: String,
    pub callback_data: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatOutbound {
    pub chat_id: String,
    pub text: String,
    #[serde(default)]
    pub buttons: Vec<ChatButton>,
}

pub fn actor_id(platform: &str, user_ref: &str) -> String {
    format!("{platform}:{user_ref}")
}

fn reply(msg: &ChatInbound, text: impl Into<String>) -> ChatOutbound {
    ChatOutbound {
        chat_id: msg.chat_id.clone(),
        text: text.into(),
        buttons: vec![],
    }
}

/// Chat users become students the first time they write.
fn provision(st: &AppState, msg: &ChatInbound, at: Timestamp) -> Result<ActorRef, EngineError> {
    let id = actor_id(&msg.platform, &msg.user_ref);
    if let Some(a) = st.lock().state().actor(&id) {
        return Ok(a);
    }
    let system = ActorRef::new(SYSTEM_ACTOR, Role::System);
    st.execute(
        &system,
        Command::RegisterActor {
            id: id.clone(),
            role: Role::Student,
        },
        at,
    )?;
    Ok(ActorRef::new(id, Role::Student))
}

/// The newest session that has not finished.
fn active_session(st: &AppState) -> Option<RoutineSession> {
    let classroom = st.lock();
    classroom
        .state()
        .sessions
        .values()
        .filter(|s| s.phase != Phase::Discussed)
        .max_by_key(|s| id_number(&s.id))
        .cloned()
}

fn tally_line(t: &VoteTally) -> String {
    t.counts
        .iter()
        .map(|(l, n)| format!("{l}: {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn failure_text(e: &EngineError) -> String {
    match e.code() {
        "AlreadyVoted" => ALREADY_VOTED.into(),
        "DeadlineExpired" => VOTING_CLOSED.into(),
        "UnknownLabel" | "EmptyBallot" | "NotFound" | "NotVotable" => UNKNOWN_CHOICE.into(),
        _ => format!("Sorry, that did not work: {e}"),
    }
}

fn on_vote(
    st: &AppState,
    msg: &ChatInbound,
    actor: &ActorRef,
    instance: &str,
    labels: &str,
    at: Timestamp,
) -> ChatOutbound {
    let Ok(labels) = parse_label_set(labels) else {
        return reply(msg, UNKNOWN_CHOICE);
    };
    let shown = labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
    match st.execute(
        actor,
        Command::CastVote {
            instance: instance.to_string(),
            labels,
        },
        at,
    ) {
        Ok(_) => {
            let tally = st.lock().view_tally(instance, actor);
            match tally {
                Ok(t) => reply(
                    msg,
                    format!("Vote recorded: {shown}. Current tally: {}", tally_line(&t)),
                ),
                Err(_) => reply(msg, format!("Vote recorded: {shown}.")),
            }
        }
        Err(e) => reply(msg, failure_text(&e)),
    }
}

fn on_difficulty(
    st: &AppState,
    msg: &ChatInbound,
    actor: &ActorRef,
    session: &str,
    choice: &str,
    at: Timestamp,
) -> ChatOutbound {
    let choice = match choice {
        "moderate" => DifficultyChoice::Moderate,
        "elevated" => DifficultyChoice::Elevated,
        _ => return reply(msg, UNKNOWN_CHOICE),
    };
    match st.execute(
        actor,
        Command::ChooseDifficulty {
            session: session.to_string(),
            choice,
        },
        at,
    ) {
        Ok(_) => reply(
            msg,
            match choice {
                DifficultyChoice::Moderate => "Practice set to moderate questions.",
                DifficultyChoice::Elevated => "Practice set to elevated questions.",
            },
        ),
        Err(e) => reply(msg, failure_text(&e)),
    }
}

fn on_callback(st: &AppState, msg: &ChatInbound, actor: &ActorRef, data: &str, at: Timestamp) -> ChatOutbound {
    let parts: Vec<&str> = data.split(':').collect();
    match parts.as_slice() {
        ["vote", instance, labels] if !instance.is_empty() => on_vote(st, msg, actor, instance, labels, at),
        ["diff", session, choice] if !session.is_empty() => on_difficulty(st, msg, actor, session, choice, at),
        _ => reply(msg, UNKNOWN_CHOICE),
    }
}

fn show_question(st: &AppState, msg: &ChatInbound) -> ChatOutbound {
    let Some(session) = active_session(st) else {
        return reply(msg, NO_QUESTION);
    };
    let classroom = st.lock();
    let open = [&session.poll_instance, &session.quiz_instance, &session.jitt_instance]
        .into_iter()
        .flatten()
        .filter_map(|id| classroom.state().instance(id).ok())
        .find(|i| i.is_open());
    let Some(inst) = open else {
        return reply(msg, NO_QUESTION);
    };
    let mut out = reply(msg, String::new());
    match &inst.content {
        InstanceContent::Mcq(q) => {
            let mut text = q.stem().to_string();
            for o in q.options() {
                text.push_str(&format!("\n{}) {}", o.label, o.text));
            }
            out.text = text;
            out.buttons = q
                .options()
                .iter()
                .take(MAX_BUTTONS)
                .map(|o| ChatButton {
                    label: o.label.to_string(),
                    callback_data: format!("vote:{}:{}", inst.id, o.label),
                })
                .collect();
        }
        InstanceContent::OpenEnded(t) => out.text = t.clone(),
    }
    if session.kind == RoutineKind::QuizPromptDiscuss
        && session.phase == Phase::JittOpen
        && out.buttons.len() + 2 <= MAX_BUTTONS
    {
        out.buttons
            .extend(["moderate", "elevated"].into_iter().map(|c| ChatButton {
                label: format!("Practice: {c}"),
                callback_data: format!("diff:{}:{c}", session.id),
            }));
    }
    out
}

fn on_text(st: &AppState, msg: &ChatInbound, actor: &ActorRef, text: &str, at: Timestamp) -> ChatOutbound {
    let text = text.trim();
    match text {
        "/start" | "/help" => return reply(msg, HELP),
        "/question" => return show_question(st, msg),
        _ => {}
    }
    let Some(session) = active_session(st) else {
        return reply(msg, NO_SESSION);
    };
    if text == "/submit" {
        return match st.execute(actor, Command::SubmitDraft { session: session.id }, at) {
            Ok(Reply::Submission { id, .. }) => reply(
                msg,
                format!("Submitted as {id}. It will be reviewed before it is used."),
            ),
            Ok(_) => reply(msg, "Submitted."),
            Err(e) => reply(msg, failure_text(&e)),
        };
    }
    if text.starts_with('/') {
        return reply(msg, format!("Unknown command. {HELP}"));
    }
    match st.execute(
        actor,
        Command::AppendDraft {
            session: session.id,
            text: text.to_string(),
        },
        at,
    ) {
        Ok(_) => reply(msg, "Added to your draft. Send /submit when it is ready."),
        Err(e) => reply(msg, failure_text(&e)),
    }
}

pub fn handle(st: &AppState, msg: ChatInbound, at: Timestamp) -> Result<ChatOutbound, EngineError> {
    let actor = provision(st, &msg, at)?;
    if actor.role() != Role::Student {
        return Ok(reply(&msg, "Chat is for students."));
    }
    Ok(match (&msg.callback_data, &msg.text) {
        (Some(data), _) => on_callback(st, &msg, &actor, data, at),
        (None, Some(text)) => on_text(st, &msg, &actor, text, at),
        (None, None) => reply(&msg, HELP),
    })
}
