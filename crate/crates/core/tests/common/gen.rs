//! Seeded generators for questions, accuracy streams and whole classes.

use flipdeck_core::classroom::{inline_mcq, QuestionSource, SubmissionRequest, SYSTEM_ACTOR};
use flipdeck_core::domain::{Label, McqDraft, McqOption};
use flipdeck_core::fip::{run_fip_session, FipPolicy, QuestionFormat, QuestionGoal, ScriptedProvider};
use flipdeck_core::routine::{DifficultyChoice, InstanceContent, RoutineKind, SessionConfig, SubmissionContent};
use flipdeck_core::samples::LOGIC_SAMPLES;
use flipdeck_core::vetting::{BankItem, Decision, EntryStatus};
use flipdeck_core::{ActorRef, Classroom, Command, LabelSet, McqQuestion, QuestionKind, Role, Timestamp};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: &[&str] = &[
    "gate",
    "NAND",
    "NOR",
    "output",
    "input",
    "truth",
    "table",
    "value",
    "carry",
    "adder",
    "latch",
    "clock",
    "signal",
    "inverter",
    "Boolean",
    "expression",
    "variable",
    "minterm",
    "maxterm",
    "café",
    "naïve",
    "x1",
    "y2",
];

const OPERANDS: &[&str] = &["A", "B", "C", "X", "Y", "1", "0"];

fn phrase(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn expression(rng: &mut ChaCha8Rng) -> String {
    let a = OPERANDS.choose(rng).unwrap();
    let b = OPERANDS.choose(rng).unwrap();
    match rng.random_range(0..4) {
        0 => format!("NOT ({a} AND {b})"),
        1 => format!("{a} OR NOT {b}"),
        2 => format!("({a} XOR {b}) = {}", OPERANDS.choose(rng).unwrap()),
        _ => format!("{a} AND {b}"),
    }
}

/// A random valid question in canonical form. Stems and options avoid
/// anything that reads as an option label or an answer note.
pub fn random_question(rng: &mut ChaCha8Rng, kind: QuestionKind) -> McqQuestion {
    let lines = rng.random_range(1..=2);
    let stem: Vec<String> = (0..lines)
        .map(|i| {
            let mut l = format!("which {}", phrase(rng, 1, 6));
            if i + 1 == lines {
                l.push('?');
            }
            l
        })
        .collect();
    let n = rng.random_range(2..=8);
    let mut texts: Vec<String> = Vec::new();
    while texts.len() < n {
        let t = if rng.random_bool(0.5) {
            expression(rng)
        } else {
            phrase(rng, 1, 4)
        };
        if !texts.iter().any(|o| o.eq_ignore_ascii_case(&t)) {
            texts.push(t);
        }
    }
    let mut key = LabelSet::new();
    while key.is_empty() {
        for i in 0..n {
            if rng.random_bool(0.3) {
                key.insert(Label::from_index(i).unwrap());
            }
        }
    }
    let degenerate = kind.is_quiz() && key.len() == n;
    let draft = McqDraft {
        id: format!("g{}", rng.random::<u32>()),
        stem: stem.join("\n"),
        options: texts
            .iter()
            .enumerate()
            .map(|(i, t)| McqOption {
                label: Label::from_index(i).unwrap(),
                text: t.clone(),
            })
            .collect(),
        answer_key: key,
        note: None,
        kind,
        degenerate,
    };
    McqQuestion::try_from(draft).expect("generated question is valid")
}

/// Accuracy stream that hits both thresholds exactly now and then.
pub fn accuracies(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.7,
            1 => 0.5,
            2 => 1.0,
            3 => 0.0,
            _ => rng.random_range(0..=1000) as f64 / 1000.0,
        })
        .collect()
}

pub fn sys() -> ActorRef {
    ActorRef::new(SYSTEM_ACTOR, Role::System)
}

/// Drives a randomized class through every command the engine knows.
/// Rejected commands are part of the workload and are simply skipped.
pub struct ClassDriver {
    pub rng: ChaCha8Rng,
    pub now: i64,
    pub prof: ActorRef,
    pub ta: ActorRef,
    pub students: Vec<ActorRef>,
    pub course: String,
    pub accepted: usize,
    pub rejected: usize,
}

impl ClassDriver {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng(seed);
        let n = rng.random_range(5..=20);
        ClassDriver {
            rng,
            now: 1_700_000_000,
            prof: ActorRef::new("prof", Role::Instructor),
            ta: ActorRef::new("ta", Role::Assistant),
            students: (0..n).map(|i| ActorRef::new(format!("st{i}"), Role::Student)).collect(),
            course: "logic".into(),
            accepted: 0,
            rejected: 0,
        }
    }

    fn run(&mut self, room: &mut Classroom, actor: &ActorRef, cmd: Command) -> Option<flipdeck_core::Reply> {
        self.now += self.rng.random_range(0..90);
        match room.execute(actor, cmd, Timestamp(self.now)) {
            Ok(e) => {
                self.accepted += 1;
                Some(e.reply)
            }
            Err(_) => {
                self.rejected += 1;
                None
            }
        }
    }

    fn setup(&mut self, room: &mut Classroom) {
        let sys = sys();
        let mut people = vec![self.prof.clone(), self.ta.clone()];
        people.extend(self.students.iter().cloned());
        for a in &people {
            self.run(
                room,
                &sys,
                Command::RegisterActor {
                    id: a.id().into(),
                    role: a.role(),
                },
            );
            let token = format!("tok-{}-{:08x}", a.id(), self.rng.random::<u32>());
            self.run(
                room,
                &sys,
                Command::MintToken {
                    actor: a.id().into(),
                    token,
                },
            );
        }
        let prof = self.prof.clone();
        self.run(
            room,
            &prof,
            Command::OpenCourse {
                course: self.course.clone(),
                instructor: prof.id().into(),
                params: None,
            },
        );
        for s in LOGIC_SAMPLES {
            let item = match s.response {
                Some(text) => match flipdeck_core::parse_mcq(text, s.kind.question_kind()).question {
                    Some(q) => BankItem::Mcq(q),
                    None => BankItem::OpenEnded(text.into()),
                },
                None => BankItem::OpenEnded(s.prompt.into()),
            };
            self.import(room, item, vec![s.prompt.to_string()]);
        }
        for _ in 0..self.rng.random_range(2..6) {
            let kind = *[QuestionKind::Poll, QuestionKind::ClickerQuiz]
                .choose(&mut self.rng)
                .unwrap();
            let q = random_question(&mut self.rng, kind);
            self.import(room, BankItem::Mcq(q), vec![]);
        }
        self.vet_pending(room);
    }

    fn import(&mut self, room: &mut Classroom, item: BankItem, prompts: Vec<String>) {
        let prof = self.prof.clone();
        self.run(
            room,
            &prof,
            Command::ImportEntry {
                course: self.course.clone(),
                topic: Some("boolean logic".into()),
                item,
                author: None,
                prompts,
                provider: None,
                attachment: None,
            },
        );
    }

    fn vet_pending(&mut self, room: &mut Classroom) {
        let pending: Vec<(String, String)> = room
            .state()
            .bank
            .entries()
            .filter(|e| e.status == EntryStatus::Pending)
            .map(|e| (e.id.clone(), e.item.text()))
            .collect();
        let ta = self.ta.clone();
        for (id, text) in pending {
            let regenerated = if self.rng.random_bool(0.7) {
                text
            } else {
                phrase(&mut self.rng, 3, 9)
            };
            self.run(
                room,
                &ta,
                Command::ReproduceCheck {
                    entry: id.clone(),
                    regenerated,
                    provider: None,
                },
            );
            let approve = self.rng.random_bool(0.8);
            let cmd = Command::RecordVerdict {
                entry: id,
                decision: if approve { Decision::Approve } else { Decision::Reject },
                initial_difficulty: approve.then(|| self.rng.random_range(1..=10)),
            };
            self.run(room, &ta, cmd);
        }
    }

    fn approved(&self, room: &Classroom, mcq: bool) -> Vec<String> {
        room.state()
            .bank
            .entries()
            .filter(|e| e.status == EntryStatus::Approved && matches!(e.item, BankItem::Mcq(_)) == mcq)
            .map(|e| e.id.clone())
            .collect()
    }

    fn source(&mut self, room: &Classroom, mcq: bool) -> QuestionSource {
        let ids = self.approved(room, mcq);
        if !ids.is_empty() && self.rng.random_bool(0.7) {
            return QuestionSource::Bank(ids.choose(&mut self.rng).unwrap().clone());
        }
        if mcq {
            inline_mcq(random_question(&mut self.rng, QuestionKind::ClickerQuiz))
        } else {
            QuestionSource::Inline(InstanceContent::OpenEnded(format!(
                "Explain {}.",
                phrase(&mut self.rng, 2, 5)
            )))
        }
    }

    /// Votes from a random subset of students, skewed by `skill`.
    fn votes(&mut self, room: &mut Classroom, instance: &str, options: usize, key: &LabelSet, skill: f64) {
        let students = self.students.clone();
        for st in &students {
            if self.rng.random_bool(0.15) {
                continue;
            }
            let labels: LabelSet = if self.rng.random_bool(skill) {
                key.clone()
            } else {
                [Label::from_index(self.rng.random_range(0..options.max(1))).unwrap()].into()
            };
            let cmd = Command::CastVote {
                instance: instance.into(),
                labels: labels.clone(),
            };
            self.run(room, st, cmd.clone());
            if self.rng.random_bool(0.05) {
                self.run(room, st, cmd);
            }
        }
    }

    fn instance_shape(room: &Classroom, id: &str) -> (usize, LabelSet) {
        match room.state().instances.get(id).and_then(|i| i.content.mcq()) {
            Some(q) => (q.options().len(), q.answer_key().clone()),
            None => (0, LabelSet::new()),
        }
    }

    fn ppq(&mut self, room: &mut Classroom) {
        let prof = self.prof.clone();
        let config = SessionConfig {
            quiz_time_limit_s: *[60, 300].choose(&mut self.rng).unwrap(),
            prompt_phase_enabled: self.rng.random_bool(0.8),
        };
        let Some(flipdeck_core::Reply::Session { id: sid, .. }) = self.run(
            room,
            &prof,
            Command::CreateSession {
                course: self.course.clone(),
                kind: RoutineKind::PollPromptQuiz,
                config: Some(config),
                idempotency_key: None,
            },
        ) else {
            return;
        };
        let skill = self.rng.random_range(0.2..0.95);
        let source = self.source(room, true);
        if let Some(flipdeck_core::Reply::Instance { id, .. }) = self.run(
            room,
            &prof,
            Command::OpenPoll {
                session: sid.clone(),
                source,
            },
        ) {
            let (n, key) = Self::instance_shape(room, &id);
            self.votes(room, &id, n, &key, skill);
            self.run(room, &prof, Command::CloseInstance { instance: id });
        }
        if config.prompt_phase_enabled {
            self.run(
                room,
                &prof,
                Command::Advance {
                    session: sid.clone(),
                    to: None,
                },
            );
            self.submissions(room, &sid);
        }
        let source = self.source(room, true);
        if let Some(flipdeck_core::Reply::Instance { id, .. }) = self.run(
            room,
            &prof,
            Command::OpenQuiz {
                session: sid.clone(),
                source,
            },
        ) {
            let (n, key) = Self::instance_shape(room, &id);
            self.votes(room, &id, n, &key, skill);
            if self.rng.random_bool(0.2) {
                self.now += 400;
                let late = self.students[0].clone();
                self.run(
                    room,
                    &late,
                    Command::CastVote {
                        instance: id.clone(),
                        labels: key,
                    },
                );
            }
            self.run(room, &prof, Command::CloseInstance { instance: id });
        }
        self.run(room, &prof, Command::Advance { session: sid, to: None });
    }

    fn submissions(&mut self, room: &mut Classroom, sid: &str) {
        let students = self.students.clone();
        for st in &students {
            if !self.rng.random_bool(0.3) {
                continue;
            }
            if self.rng.random_bool(0.5) {
                let q = random_question(&mut self.rng, QuestionKind::JittQuiz);
                let req = SubmissionRequest {
                    content: SubmissionContent::Mcq(q),
                    prompts: vec![format!("create a quiz about {}", phrase(&mut self.rng, 1, 3))],
                    transcript_ref: None,
                    summary: Some(phrase(&mut self.rng, 3, 8)),
                    topic: Some("boolean logic".into()),
                    attachment: None,
                };
                self.run(
                    room,
                    st,
                    Command::Submit {
                        session: sid.into(),
                        submission: req,
                    },
                );
            } else {
                for line in [
                    "prompt: ask me about gates".to_string(),
                    format!("Why is {}?", phrase(&mut self.rng, 2, 4)),
                ] {
                    self.run(
                        room,
                        st,
                        Command::AppendDraft {
                            session: sid.into(),
                            text: line,
                        },
                    );
                }
                self.run(room, st, Command::SubmitDraft { session: sid.into() });
            }
        }
    }

    fn qpd(&mut self, room: &mut Classroom) {
        let prof = self.prof.clone();
        let key = format!("k{}", self.rng.random::<u16>());
        let Some(flipdeck_core::Reply::Session { id: sid, .. }) = self.run(
            room,
            &prof,
            Command::CreateSession {
                course: self.course.clone(),
                kind: RoutineKind::QuizPromptDiscuss,
                config: None,
                idempotency_key: Some(key),
            },
        ) else {
            return;
        };
        let source = self.source(room, false);
        self.run(
            room,
            &prof,
            Command::OpenJitt {
                session: sid.clone(),
                source,
            },
        );
        let students = self.students.clone();
        for st in &students {
            let choice = if self.rng.random_bool(0.5) {
                DifficultyChoice::Moderate
            } else {
                DifficultyChoice::Elevated
            };
            self.run(
                room,
                st,
                Command::ChooseDifficulty {
                    session: sid.clone(),
                    choice,
                },
            );
        }
        self.now += self.rng.random_range(0..3 * 86_400);
        self.transcript(room);
        self.submissions(room, &sid);
        self.run(
            room,
            &prof,
            Command::Advance {
                session: sid.clone(),
                to: None,
            },
        );
        let points = (0..self.rng.random_range(0..4))
            .map(|_| phrase(&mut self.rng, 2, 6))
            .collect();
        self.run(
            room,
            &prof,
            Command::Consolidate {
                session: sid.clone(),
                talking_points: points,
            },
        );
        let groups = students
            .chunks(4)
            .map(|g| g.iter().map(|a| a.id().to_string()).collect())
            .collect();
        self.run(
            room,
            &prof,
            Command::RecordGroups {
                session: sid.clone(),
                groups,
            },
        );
        self.run(room, &prof, Command::Advance { session: sid, to: None });
    }

    fn transcript(&mut self, room: &mut Classroom) {
        let goal = QuestionGoal {
            topic: "universal gates".into(),
            focus: None,
            format: QuestionFormat::ClickerQuiz,
            option_count: Some(2),
            constraints: vec![],
        };
        let provider = ScriptedProvider::new([
            "What do you know already?".to_string(),
            "Which gate is universal?\nA) AND\nB) NAND\n(Note: The correct answer is B) NAND)".to_string(),
        ]);
        let t = run_fip_session(&goal, &provider, &FipPolicy::default()).expect("valid goal");
        let author = self.students.choose(&mut self.rng).unwrap().clone();
        self.run(room, &author, Command::RecordTranscript { transcript: t });
    }

    /// Runs setup plus `rounds` alternating sessions with vetting in between.
    pub fn drive(&mut self, room: &mut Classroom, rounds: usize) {
        self.setup(room);
        let prof = self.prof.clone();
        for r in 0..rounds {
            if self.rng.random_bool(0.5) {
                self.ppq(room);
            } else {
                self.qpd(room);
            }
            self.vet_pending(room);
            if r % 3 == 2 {
                self.run(
                    room,
                    &prof,
                    Command::StartNewTopic {
                        course: self.course.clone(),
                    },
                );
            }
            if self.rng.random_bool(0.1) {
                let mut ids: Vec<String> = room.state().instances.keys().cloned().collect();
                ids.shuffle(&mut self.rng);
                if let Some(id) = ids.first() {
                    // Closing twice or out of phase is rejected; kept as noise.
                    self.run(room, &prof, Command::CloseInstance { instance: id.clone() });
                }
            }
        }
    }
}
