//! Seeded workloads shared by the benchmarks.

use flipdeck_core::classroom::{inline_mcq, SYSTEM_ACTOR};
use flipdeck_core::domain::parse_label_set;
use flipdeck_core::routine::RoutineKind;
use flipdeck_core::{
    render_mcq, ActorRef, Classroom, Command, EngineConfig, Label, LabelSet, McqQuestion, QuestionKind, Reply, Role,
    Timestamp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TERMS: [&str; 8] = [
    "A AND B", "A OR B", "NOT A", "NOT B", "A XOR B", "A NAND B", "A NOR B", "TRUE",
];

pub fn question(rng: &mut ChaCha8Rng, id: usize) -> McqQuestion {
    let n = rng.random_range(2..=TERMS.len());
    let key: LabelSet = [Label::from_index(rng.random_range(0..n)).unwrap()].into();
    McqQuestion::from_texts(
        format!("q{id}"),
        format!("Which expression is equivalent to NOT (A AND B) in case {id}?"),
        &TERMS[..n],
        key,
        QuestionKind::ClickerQuiz,
    )
    .unwrap()
}

/// Rendered question texts, as a provider would return them.
pub fn rendered_questions(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| render_mcq(&question(&mut rng, i))).collect()
}

pub fn accuracy_stream(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0.0..=1.0)).collect()
}

fn run(room: &mut Classroom, actor: &ActorRef, cmd: Command, at: i64) -> Reply {
    room.execute(actor, cmd, Timestamp(at)).unwrap().reply
}

/// A class of `students` voting through `sessions` poll-then-quiz sessions.
/// Returns the classroom with its log.
pub fn recorded_class(students: usize, sessions: usize, seed: u64) -> Classroom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut room = Classroom::in_memory(EngineConfig::default());
    let sys = ActorRef::new(SYSTEM_ACTOR, Role::System);
    let prof = ActorRef::new("prof", Role::Instructor);
    let mut t = 1_700_000_000;
    run(
        &mut room,
        &sys,
        Command::RegisterActor {
            id: "prof".into(),
            role: Role::Instructor,
        },
        t,
    );
    let people: Vec<ActorRef> = (0..students)
        .map(|i| ActorRef::new(format!("s{i}"), Role::Student))
        .collect();
    for p in &people {
        run(
            &mut room,
            &sys,
            Command::RegisterActor {
                id: p.id().into(),
                role: Role::Student,
            },
            t,
        );
    }
    let open = Command::OpenCourse {
        course: "logic".into(),
        instructor: "prof".into(),
        params: None,
    };
    run(&mut room, &prof, open, t);
    for s in 0..sessions {
        t += 86_400;
        let create = Command::CreateSession {
            course: "logic".into(),
            kind: RoutineKind::PollPromptQuiz,
            config: None,
            idempotency_key: None,
        };
        let Reply::Session { id: session, .. } = run(&mut room, &prof, create, t) else {
            unreachable!()
        };
        let q = question(&mut rng, 2 * s);
        let options = q.options().len();
        let poll = Command::OpenPoll {
            session: session.clone(),
            source: inline_mcq(q),
        };
        vote_round(&mut room, &prof, &people, poll, options, &mut rng, &mut t);
        let q = question(&mut rng, 2 * s + 1);
        let options = q.options().len();
        let quiz = Command::OpenQuiz {
            session: session.clone(),
            source: inline_mcq(q),
        };
        vote_round(&mut room, &prof, &people, quiz, options, &mut rng, &mut t);
        run(&mut room, &prof, Command::Advance { session, to: None }, t);
    }
    room
}

fn vote_round(
    room: &mut Classroom,
    prof: &ActorRef,
    people: &[ActorRef],
    open: Command,
    options: usize,
    rng: &mut ChaCha8Rng,
    t: &mut i64,
) {
    let Reply::Instance { id, .. } = run(room, prof, open, *t) else {
        unreachable!()
    };
    for p in people {
        *t += rng.random_range(0..3);
        let label = Label::from_index(rng.random_range(0..options)).unwrap().to_string();
        let vote = Command::CastVote {
            instance: id.clone(),
            labels: parse_label_set(&label).unwrap(),
        };
        run(room, p, vote, *t);
    }
    run(room, prof, Command::CloseInstance { instance: id }, *t);
}
