use std::path::Path;

use anyhow::{bail, Context, Result};
use flipdeck_core::classroom::SYSTEM_ACTOR;
use flipdeck_core::vetting::BankItem;
use flipdeck_core::{parse_mcq, ActorRef, Classroom, Command, QuestionKind, Role, Timestamp};
use rand::Rng;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub course: CourseSpec,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub questions: Vec<QuestionSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseSpec {
    pub id: String,
    pub instructor: String,
    #[serde(default)]
    pub topic: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub id: String,
    pub role: Role,
    /// Minted at random when absent.
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionSpec {
    pub name: String,
    pub kind: QuestionKind,
    pub prompt: String,
    /// Generated text. When missing or unparseable the entry is open-ended.
    #[serde(default)]
    pub response: Option<String>,
}

pub fn load(path: &Path) -> Result<Fixture> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug)]
pub struct Seeded {
    pub tokens: Vec<(String, Role, String)>,
    pub entries: Vec<(String, String)>,
}

fn bank_item(q: &QuestionSpec) -> BankItem {
    let text = q.response.as_deref().map(str::trim).filter(|t| !t.is_empty());
    match text {
        Some(t) => match parse_mcq(t, q.kind).question {
            Some(mcq) => BankItem::Mcq(mcq),
            None => BankItem::OpenEnded(t.to_string()),
        },
        None => BankItem::OpenEnded(q.prompt.trim().to_string()),
    }
}

fn fresh_token(id: &str) -> String {
    let bytes: [u8; 12] = rand::rng().random();
    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    format!("{id}-{hex}")
}

/// Registers the fixture's people and course and queues every question for
/// review.
pub fn apply(room: &mut Classroom, fixture: &Fixture, at: Timestamp) -> Result<Seeded> {
    let system = ActorRef::new(SYSTEM_ACTOR, Role::System);
    let Some(lead) = fixture.actors.iter().find(|a| a.id == fixture.course.instructor) else {
        bail!(
            "instructor {:?} is not among the fixture actors",
            fixture.course.instructor
        );
    };
    let mut tokens = Vec::new();
    for a in &fixture.actors {
        room.execute(
            &system,
            Command::RegisterActor {
                id: a.id.clone(),
                role: a.role,
            },
            at,
        )
        .with_context(|| format!("registering {}", a.id))?;
        let token = a.token.clone().unwrap_or_else(|| fresh_token(&a.id));
        room.execute(
            &system,
            Command::MintToken {
                actor: a.id.clone(),
                token: token.clone(),
            },
            at,
        )
        .with_context(|| format!("minting a token for {}", a.id))?;
        tokens.push((a.id.clone(), a.role, token));
    }
    room.execute(
        &system,
        Command::OpenCourse {
            course: fixture.course.id.clone(),
            instructor: fixture.course.instructor.clone(),
            params: None,
        },
        at,
    )
    .with_context(|| format!("opening {}", fixture.course.id))?;
    let instructor = ActorRef::new(lead.id.clone(), lead.role);
    let mut entries = Vec::new();
    for q in &fixture.questions {
        let done = room
            .execute(
                &instructor,
                Command::ImportEntry {
                    course: fixture.course.id.clone(),
                    topic: fixture.course.topic.clone(),
                    item: bank_item(q),
                    author: None,
                    prompts: vec![q.prompt.trim().to_string()],
                    provider: None,
                    attachment: None,
                },
                at,
            )
            .with_context(|| format!("importing {:?}", q.name))?;
        let id = match done.reply {
            flipdeck_core::Reply::Entry { id } => id,
            other => bail!("unexpected reply {other:?}"),
        };
        entries.push((id, q.name.clone()));
    }
    Ok(Seeded { tokens, entries })
}
