//! Seeded class simulator. Drives a whole course through the HTTP surface:
//! staff setup, vetting, alternating routines, chat and token students, then
//! pacing and analytics reads.
//!
//! Everything random comes from one seeded generator and every request
//! carries an explicit logical time, so equal seeds against a logical-clock
//! server produce byte-identical logs.

use std::collections::BTreeMap;

use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use flipdeck_core::classroom::EXPORTS;
use flipdeck_core::domain::{Label, LabelSet};
use flipdeck_core::fip::MAX_TALKING_POINTS;
use flipdeck_core::routine::DEFAULT_QUIZ_TIME_LIMIT_S;
use flipdeck_core::samples::LOGIC_SAMPLES;
use flipdeck_core::vetting::{BankEntry, BankItem, EntryKind};
use flipdeck_core::PacingState;
use rand::distr::{Alphanumeric, SampleString};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tower::ServiceExt;

use crate::app::{router, AppState, Shared};
use crate::chat;
use crate::clock::TIME_HEADER;
use crate::config::Config;

pub const COURSE: &str = "logic101";
pub const TOPIC: &str = "boolean-logic";
pub const START_TIME: i64 = 1_700_000_000;
const DAY: i64 = 86_400;
const PRACTICE_PROMPT: &str = "Help me ask a good question about universal gate sets.";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("{method} {path}: expected {expected}, got {status}: {body}")]
    Unexpected {
        method: String,
        path: String,
        expected: u16,
        status: u16,
        body: String,
    },
    #[error("restart failed: {0}")]
    Restart(String),
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub students: usize,
    /// Routine sessions to run, alternating poll-prompt-quiz and
    /// quiz-prompt-discuss.
    pub sessions: usize,
    pub seed: u64,
    /// Every n-th student uses the chat webhook instead of a token. 0 disables chat.
    pub chat_every: usize,
    /// Must match the server's admin token.
    pub admin_token: String,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            students: 30,
            sessions: 2,
            seed: 7,
            chat_every: 5,
            admin_token: "sim-admin-token".into(),
        }
    }
}

#[derive(Debug)]
pub struct Response {
    pub status: u16,
    pub text: String,
}

impl Response {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or(Value::Null)
    }
}

struct Restart {
    every: u64,
    config: Config,
}

enum Transport {
    InProcess {
        server: Option<(Shared, Router)>,
        restart: Option<Restart>,
    },
    Loopback {
        client: reqwest::Client,
        base: String,
    },
}

/// Sends requests with a logical time header and keeps status counts.
pub struct SimClient {
    transport: Transport,
    pub now: i64,
    pub requests: u64,
    pub restarts: u64,
    pub statuses: BTreeMap<u16, u64>,
}

impl SimClient {
    pub fn in_process(state: Shared) -> Self {
        Self::with(Transport::InProcess {
            server: Some((state.clone(), router(state))),
            restart: None,
        })
    }

    /// In-process, rebuilding the server from its log every `every`
    /// requests. `config` must point at file storage.
    pub fn restarting(config: Config, every: u64) -> Result<Self, SimError> {
        let state = AppState::from_config(&config).map_err(|e| SimError::Restart(e.to_string()))?;
        Ok(Self::with(Transport::InProcess {
            server: Some((state.clone(), router(state))),
            restart: Some(Restart { every, config }),
        }))
    }

    pub fn loopback(base: impl Into<String>) -> Self {
        Self::with(Transport::Loopback {
            client: reqwest::Client::new(),
            base: base.into(),
        })
    }

    fn with(transport: Transport) -> Self {
        SimClient {
            transport,
            now: START_TIME,
            requests: 0,
            restarts: 0,
            statuses: BTreeMap::new(),
        }
    }

    /// Server state, when running in process.
    pub fn state(&self) -> Option<&Shared> {
        match &self.transport {
            Transport::InProcess { server, .. } => server.as_ref().map(|(s, _)| s),
            Transport::Loopback { .. } => None,
        }
    }

    fn maybe_restart(&mut self) -> Result<(), SimError> {
        if let Transport::InProcess {
            server,
            restart: Some(restart),
        } = &mut self.transport
        {
            if self.requests > 0 && self.requests.is_multiple_of(restart.every) {
                // The old server goes first so the log file has one writer.
                drop(server.take());
                let fresh = AppState::from_config(&restart.config).map_err(|e| SimError::Restart(e.to_string()))?;
                *server = Some((fresh.clone(), router(fresh)));
                self.restarts += 1;
            }
        }
        Ok(())
    }

    pub async fn call(
        &mut self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> Result<Response, SimError> {
        self.maybe_restart()?;
        self.requests += 1;
        let resp = match &self.transport {
            Transport::InProcess { server, .. } => {
                let (_, router) = server
                    .as_ref()
                    .ok_or_else(|| SimError::Restart("server is down".into()))?;
                let mut req = Request::builder()
                    .method(method.clone())
                    .uri(path)
                    .header(TIME_HEADER, self.now.to_string())
                    .header("content-type", "application/json");
                if let Some(t) = token {
                    req = req.header("authorization", format!("Bearer {t}"));
                }
                let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
                let req = req.body(body).map_err(|e| SimError::Transport(e.to_string()))?;
                let resp = router
                    .clone()
                    .oneshot(req)
                    .await
                    .map_err(|e| SimError::Transport(e.to_string()))?;
                let status = resp.status().as_u16();
                let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
                    .await
                    .map_err(|e| SimError::Transport(e.to_string()))?;
                Response {
                    status,
                    text: String::from_utf8_lossy(&bytes).into_owned(),
                }
            }
            Transport::Loopback { client, base } => {
                let mut req = client
                    .request(method.clone(), format!("{base}{path}"))
                    .header(TIME_HEADER, self.now.to_string());
                if let Some(t) = token {
                    req = req.bearer_auth(t);
                }
                if let Some(b) = body {
                    req = req.json(b);
                }
                let resp = req.send().await.map_err(|e| SimError::Transport(e.to_string()))?;
                let status = resp.status().as_u16();
                let text = resp.text().await.map_err(|e| SimError::Transport(e.to_string()))?;
                Response { status, text }
            }
        };
        *self.statuses.entry(resp.status).or_default() += 1;
        Ok(resp)
    }

    pub async fn expect(
        &mut self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
        expected: u16,
    ) -> Result<Response, SimError> {
        let resp = self.call(method.clone(), path, token, body).await?;
        if resp.status != expected {
            return Err(SimError::Unexpected {
                method: method.to_string(),
                path: path.to_string(),
                expected,
                status: resp.status,
                body: resp.text,
            });
        }
        Ok(resp)
    }

    async fn post(&mut self, path: &str, token: &str, body: Value) -> Result<Value, SimError> {
        Ok(self
            .expect(Method::POST, path, Some(token), Some(&body), 200)
            .await?
            .json())
    }

    async fn get(&mut self, path: &str, token: &str) -> Result<Response, SimError> {
        self.expect(Method::GET, path, Some(token), None, 200).await
    }
}

#[derive(Debug, Clone)]
struct Student {
    id: String,
    token: Option<String>,
    /// Chance of answering a mid-difficulty question correctly.
    skill: f64,
}

impl Student {
    fn is_chat(&self) -> bool {
        self.token.is_none()
    }

    fn user_ref(&self) -> &str {
        self.id.split_once(':').map_or(self.id.as_str(), |(_, r)| r)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PacingPoint {
    pub session: String,
    pub kind: String,
    pub pace: f64,
    pub comprehension: f64,
    pub mode: String,
}

/// Behaviour the simulator saw and checked along the way.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SimChecks {
    pub tally_gated: u64,
    pub duplicate_votes_rejected: u64,
    pub late_votes_rejected: u64,
    pub votes_accepted: u64,
    pub chat_messages: u64,
    pub submissions: u64,
    pub approved: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub trajectory: Vec<PacingPoint>,
    pub recommendation: Value,
    pub exports: BTreeMap<String, String>,
    pub bank_size: usize,
    pub checks: SimChecks,
    pub requests: u64,
    pub restarts: u64,
    pub statuses: BTreeMap<u16, u64>,
}

fn token(rng: &mut ChaCha8Rng) -> String {
    Alphanumeric.sample_string(rng, 24)
}

fn mcq_key(entry: &BankEntry) -> Option<(Vec<Label>, LabelSet)> {
    match &entry.item {
        BankItem::Mcq(q) => Some((q.labels().collect(), q.answer_key().clone())),
        _ => None,
    }
}

fn labels_json(labels: &LabelSet) -> Value {
    json!(labels.iter().map(|l| l.to_string()).collect::<Vec<_>>())
}

fn label_str(labels: &LabelSet) -> String {
    labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

struct Sim<'a> {
    c: &'a mut SimClient,
    rng: ChaCha8Rng,
    admin: String,
    prof: String,
    ta: String,
    students: Vec<Student>,
    checks: SimChecks,
    used: BTreeMap<String, u32>,
}

impl Sim<'_> {
    fn tick(&mut self, lo: i64, hi: i64) {
        self.c.now += self.rng.random_range(lo..=hi);
    }

    fn pick_ballot(&mut self, student: &Student, entry: &BankEntry) -> LabelSet {
        let (labels, key) = mcq_key(entry).expect("votable entries are MCQs");
        let d = entry.difficulty.unwrap_or(5.0);
        let p = (student.skill - (d - 5.0) * 0.05).clamp(0.05, 0.98);
        if self.rng.random_bool(p) {
            return key;
        }
        let wrong: Vec<Label> = labels.iter().copied().filter(|l| !key.contains(l)).collect();
        let l = *wrong.choose(&mut self.rng).unwrap_or(&labels[0]);
        LabelSet::from([l])
    }

    async fn chat(
        &mut self,
        student: &Student,
        text: Option<&str>,
        callback: Option<&str>,
    ) -> Result<String, SimError> {
        self.checks.chat_messages += 1;
        let body = json!({
            "platform": "chat",
            "chat_id": format!("room-{}", student.user_ref()),
            "user_ref": student.user_ref(),
            "text": text,
            "callback_data": callback,
        });
        let resp = self
            .c
            .expect(Method::POST, "/chat/inbound", None, Some(&body), 200)
            .await?;
        Ok(resp.json()["text"].as_str().unwrap_or_default().to_string())
    }

    /// Casts a ballot and reports the status the server gave it.
    async fn vote(&mut self, student: &Student, instance: &str, labels: &LabelSet) -> Result<u16, SimError> {
        let mut detail = String::new();
        let status = match &student.token {
            Some(t) => {
                let body = json!({ "labels": labels_json(labels) });
                let path = format!("/instances/{instance}/votes");
                self.c.call(Method::POST, &path, Some(t), Some(&body)).await?.status
            }
            None => {
                let data = format!("vote:{instance}:{}", label_str(labels));
                let text = self.chat(student, None, Some(&data)).await?;
                if text.starts_with("Vote recorded") {
                    200
                } else if text == chat::VOTING_CLOSED {
                    410
                } else if text == chat::ALREADY_VOTED {
                    409
                } else {
                    detail = text;
                    422
                }
            }
        };
        match status {
            200 => self.checks.votes_accepted += 1,
            409 => self.checks.duplicate_votes_rejected += 1,
            410 => self.checks.late_votes_rejected += 1,
            other => {
                return Err(SimError::Unexpected {
                    method: "vote".into(),
                    path: instance.into(),
                    expected: 200,
                    status: other,
                    body: detail,
                })
            }
        }
        Ok(status)
    }

    async fn approved(&mut self) -> Result<Vec<BankEntry>, SimError> {
        let path = format!("/bank?course={COURSE}&status=Approved");
        let prof = self.prof.clone();
        let text = self.c.get(&path, &prof).await?.text;
        serde_json::from_str(&text).map_err(|e| SimError::Transport(e.to_string()))
    }

    /// Least-used approved MCQ of one of `kinds`, preferring the
    /// recommended difficulty band.
    async fn choose(&mut self, kinds: &[EntryKind]) -> Result<Option<BankEntry>, SimError> {
        let rec = self
            .c
            .get(&format!("/pacing/{COURSE}/recommendation"), &self.prof.clone())
            .await?
            .json();
        let lo = rec["band"]["lo"].as_f64().unwrap_or(1.0);
        let hi = rec["band"]["hi"].as_f64().unwrap_or(10.0);
        let entries = self.approved().await?;
        let best = entries
            .into_iter()
            .filter(|e| kinds.contains(&e.item.kind()) && matches!(e.item, BankItem::Mcq(_)))
            .min_by_key(|e| {
                let d = e.difficulty.unwrap_or(5.0);
                let off_band = !(lo..=hi).contains(&d);
                (self.used.get(&e.id).copied().unwrap_or(0), off_band)
            });
        if let Some(e) = &best {
            *self.used.entry(e.id.clone()).or_default() += 1;
        }
        Ok(best)
    }

    async fn setup(&mut self, opts: &SimOptions) -> Result<(), SimError> {
        let admin = self.admin.clone();
        for (id, role) in [("prof", "instructor"), ("ta", "assistant")] {
            let t = token(&mut self.rng);
            self.c
                .expect(
                    Method::POST,
                    "/actors",
                    Some(&admin),
                    Some(&json!({"id": id, "role": role, "token": t})),
                    201,
                )
                .await?;
            if id == "prof" {
                self.prof = t;
            } else {
                self.ta = t;
            }
        }
        for i in 0..opts.students {
            let skill = self.rng.random_range(0.35..0.95);
            let chat = opts.chat_every > 0 && i % opts.chat_every == opts.chat_every - 1;
            let student = if chat {
                Student {
                    id: chat::actor_id("chat", &format!("u{i}")),
                    token: None,
                    skill,
                }
            } else {
                let t = token(&mut self.rng);
                let id = format!("st{i}");
                self.c
                    .expect(
                        Method::POST,
                        "/actors",
                        Some(&admin),
                        Some(&json!({"id": id, "role": "student", "token": t})),
                        201,
                    )
                    .await?;
                Student {
                    id,
                    token: Some(t),
                    skill,
                }
            };
            self.students.push(student);
        }
        self.c
            .post("/courses", &admin, json!({"course": COURSE, "instructor": "prof"}))
            .await?;
        let prof = self.prof.clone();
        for s in LOGIC_SAMPLES {
            self.c
                .post(
                    "/bank",
                    &prof,
                    json!({
                        "course": COURSE,
                        "topic": TOPIC,
                        "text": s.question_text(),
                        "kind": s.kind.question_kind(),
                        "prompts": [s.prompt],
                        "provider": {"provider": "demo", "model": "canned"},
                    }),
                )
                .await?;
        }
        self.vet().await
    }

    /// The assistant reviews everything pending: replays prompts when there
    /// are any, then approves matches and a share of the rest.
    async fn vet(&mut self) -> Result<(), SimError> {
        let ta = self.ta.clone();
        let queue = self
            .c
            .get(&format!("/vetting/queue?course={COURSE}"), &ta)
            .await?
            .json();
        let entries: Vec<BankEntry> = serde_json::from_value(queue).map_err(|e| SimError::Transport(e.to_string()))?;
        for e in entries {
            self.tick(30, 120);
            let matched = if e.provenance.prompts.is_empty() {
                None
            } else {
                let r = self
                    .c
                    .post(&format!("/vetting/{}/reproduce", e.id), &ta, json!({}))
                    .await?;
                Some(r["check"]["verdict"] == "Match")
            };
            let approve = match (matched, &e.item) {
                (Some(m), _) => m,
                (None, BankItem::Mcq(_)) => self.rng.random_bool(0.8),
                (None, _) => self.rng.random_bool(0.5),
            };
            let body = if approve {
                self.checks.approved += 1;
                json!({"decision": "approve", "initial_difficulty": self.rng.random_range(2..=8)})
            } else {
                self.checks.rejected += 1;
                json!({"decision": "reject"})
            };
            self.c.post(&format!("/vetting/{}/verdict", e.id), &ta, body).await?;
        }
        Ok(())
    }

    async fn submit_question(&mut self, student: &Student, session: &str, n: usize) -> Result<(), SimError> {
        let stem = format!("Which gate outputs 1 only when all {} of its inputs are 1?", n % 3 + 2);
        match &student.token {
            Some(t) => {
                let goal = json!({"goal": {"topic": "Boolean logic", "format": "clicker_quiz", "option_count": 4}});
                let run = self.c.post("/fip/run", t, goal).await?;
                let transcript = &run["transcript"];
                let text = transcript["turns"]
                    .as_array()
                    .and_then(|turns| turns.iter().rev().find(|x| x["speaker"] == "model"))
                    .and_then(|x| x["text"].as_str())
                    .unwrap_or(&stem)
                    .to_string();
                let prompts: Vec<Value> = transcript["turns"]
                    .as_array()
                    .map(|turns| {
                        turns
                            .iter()
                            .filter(|x| x["speaker"] == "user")
                            .map(|x| x["text"].clone())
                            .collect()
                    })
                    .unwrap_or_default();
                let body = json!({
                    "text": text,
                    "prompts": prompts,
                    "transcript_ref": run["transcript_id"],
                    "topic": TOPIC,
                });
                self.c
                    .post(&format!("/sessions/{session}/submissions"), t, body)
                    .await?;
            }
            None => {
                for line in [
                    "prompt: Quiz me on logic gates, then help me write a four-choice question.",
                    stem.as_str(),
                    "A) AND",
                    "B) OR",
                    "C) XOR",
                    "D) NOR",
                    "(Note: The correct answer is A) AND)",
                ] {
                    self.chat(student, Some(line), None).await?;
                }
                let text = self.chat(student, Some("/submit"), None).await?;
                if !text.starts_with("Submitted") {
                    return Err(SimError::Unexpected {
                        method: "chat".into(),
                        path: "/submit".into(),
                        expected: 200,
                        status: 422,
                        body: text,
                    });
                }
            }
        }
        self.checks.submissions += 1;
        Ok(())
    }

    async fn poll_prompt_quiz(&mut self) -> Result<String, SimError> {
        let prof = self.prof.clone();
        let s = self
            .c
            .post("/sessions", &prof, json!({"course": COURSE, "kind": "PollPromptQuiz"}))
            .await?;
        let sid = s["id"].as_str().unwrap_or_default().to_string();

        if let Some(poll) = self.choose(&[EntryKind::Poll]).await? {
            let r = self
                .c
                .post(&format!("/sessions/{sid}/polls"), &prof, json!({"entry": poll.id}))
                .await?;
            let inst = r["id"].as_str().unwrap_or_default().to_string();
            let mut roster = self.students.clone();
            roster.shuffle(&mut self.rng);
            if let Some(first) = roster.iter().find(|s| !s.is_chat()) {
                let t = first.token.clone().unwrap_or_default();
                self.c
                    .expect(Method::GET, &format!("/instances/{inst}/tally"), Some(&t), None, 403)
                    .await?;
                self.checks.tally_gated += 1;
            }
            let mut voted_http = None;
            for st in &roster {
                if !self.rng.random_bool(0.9) {
                    continue;
                }
                self.tick(2, 20);
                let ballot = self.pick_ballot(st, &poll);
                if self.vote(st, &inst, &ballot).await? == 200 && !st.is_chat() {
                    voted_http = Some((st.clone(), ballot));
                }
            }
            if let Some((st, ballot)) = voted_http {
                let t = st.token.clone().unwrap_or_default();
                self.c.get(&format!("/instances/{inst}/tally"), &t).await?;
                self.vote(&st, &inst, &ballot).await?;
            }
            self.tick(10, 30);
            self.c
                .post(&format!("/instances/{inst}/close"), &prof, json!({}))
                .await?;
        }

        self.tick(10, 30);
        self.c
            .post(&format!("/sessions/{sid}/advance"), &prof, json!({}))
            .await?;
        let mut ids: Vec<String> = self.students.iter().map(|s| s.id.clone()).collect();
        ids.shuffle(&mut self.rng);
        let groups: Vec<Vec<String>> = ids.chunks(3).map(<[String]>::to_vec).collect();
        self.c
            .post(&format!("/sessions/{sid}/groups"), &prof, json!({ "groups": groups }))
            .await?;
        let roster = self.students.clone();
        for (n, st) in roster.iter().enumerate() {
            if self.rng.random_bool(0.3) {
                self.tick(30, 90);
                self.submit_question(st, &sid, n).await?;
            }
        }

        self.tick(30, 60);
        if let Some(quiz) = self.choose(&[EntryKind::ClickerQuiz, EntryKind::JittQuiz]).await? {
            let r = self
                .c
                .post(&format!("/sessions/{sid}/quizzes"), &prof, json!({"entry": quiz.id}))
                .await?;
            let inst = r["id"].as_str().unwrap_or_default().to_string();
            let opened = self.c.now;
            let deadline = r["deadline"].as_i64().unwrap_or(opened + DEFAULT_QUIZ_TIME_LIMIT_S);
            let limit = deadline - opened;
            let mut plan: Vec<(i64, Student)> = Vec::new();
            for st in &roster {
                if self.rng.random_bool(0.95) {
                    let at = opened + self.rng.random_range(5..=limit + limit / 4);
                    plan.push((at, st.clone()));
                }
            }
            plan.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
            for (at, st) in plan {
                self.c.now = self.c.now.max(at);
                let ballot = self.pick_ballot(&st, &quiz);
                self.vote(&st, &inst, &ballot).await?;
            }
            self.c.now = self.c.now.max(deadline) + 5;
            self.c
                .post(&format!("/instances/{inst}/close"), &prof, json!({}))
                .await?;
        } else {
            self.c
                .post(&format!("/sessions/{sid}/advance"), &prof, json!({}))
                .await?;
        }
        self.tick(60, 300);
        self.c
            .post(&format!("/sessions/{sid}/advance"), &prof, json!({}))
            .await?;
        Ok(sid)
    }

    async fn quiz_prompt_discuss(&mut self) -> Result<String, SimError> {
        let prof = self.prof.clone();
        let s = self
            .c
            .post(
                "/sessions",
                &prof,
                json!({"course": COURSE, "kind": "QuizPromptDiscuss"}),
            )
            .await?;
        let sid = s["id"].as_str().unwrap_or_default().to_string();
        let entry = self.choose(&[EntryKind::JittQuiz, EntryKind::ClickerQuiz]).await?;
        let body = match &entry {
            Some(e) => json!({"entry": e.id}),
            None => json!({"text": LOGIC_SAMPLES[4].prompt}),
        };
        let r = self.c.post(&format!("/sessions/{sid}/jitt"), &prof, body).await?;
        let inst = r["id"].as_str().unwrap_or_default().to_string();
        let assigned = self.c.now;

        let mut plan: Vec<(i64, Student)> = Vec::new();
        for st in self.students.clone() {
            if self.rng.random_bool(0.85) {
                plan.push((assigned + self.rng.random_range(600..3 * DAY), st));
            }
        }
        plan.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        for (n, (at, st)) in plan.into_iter().enumerate() {
            self.c.now = self.c.now.max(at);
            let choice = if st.skill > 0.7 { "elevated" } else { "moderate" };
            match &st.token {
                Some(t) => {
                    self.c
                        .post(&format!("/sessions/{sid}/difficulty"), t, json!({ "choice": choice }))
                        .await?;
                    self.c.get(&format!("/sessions/{sid}/selection"), t).await?;
                }
                None => {
                    self.chat(&st, Some("/question"), None).await?;
                    self.chat(&st, None, Some(&format!("diff:{sid}:{choice}"))).await?;
                }
            }
            if let Some(e) = &entry {
                let ballot = self.pick_ballot(&st, e);
                self.vote(&st, &inst, &ballot).await?;
            }
            if self.rng.random_bool(0.5) {
                match &st.token {
                    Some(t) => {
                        let text = format!(
                            "Student {} asks: why does a universal gate set need negation? Attempt {n}.",
                            st.id
                        );
                        self.c
                            .post(
                                &format!("/sessions/{sid}/submissions"),
                                t,
                                json!({ "text": text, "prompts": [PRACTICE_PROMPT] }),
                            )
                            .await?;
                        self.checks.submissions += 1;
                    }
                    None => self.submit_question(&st, &sid, n).await?,
                }
            }
        }
        self.c.now = self.c.now.max(assigned + 3 * DAY) + 600;
        self.c
            .post(&format!("/sessions/{sid}/advance"), &prof, json!({}))
            .await?;
        self.tick(60, 600);
        let r = self
            .c
            .post(&format!("/sessions/{sid}/consolidate"), &prof, json!({}))
            .await?;
        debug_assert!(r["phase"] == "Consolidated");
        let session = self.c.get(&format!("/sessions/{sid}"), &prof).await?.json();
        let points = session["talking_points"].as_array().map_or(0, Vec::len);
        if points > MAX_TALKING_POINTS {
            return Err(SimError::Transport(format!("{points} talking points")));
        }
        self.tick(600, 1800);
        self.c
            .post(&format!("/sessions/{sid}/advance"), &prof, json!({}))
            .await?;
        Ok(sid)
    }
}

/// Runs a full simulated course and reports what it observed.
pub async fn simulate(client: &mut SimClient, opts: &SimOptions) -> Result<SimReport, SimError> {
    let mut sim = Sim {
        c: client,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        admin: opts.admin_token.clone(),
        prof: String::new(),
        ta: String::new(),
        students: Vec::new(),
        checks: SimChecks::default(),
        used: BTreeMap::new(),
    };
    sim.setup(opts).await?;
    let mut trajectory = Vec::new();
    for i in 0..opts.sessions {
        sim.c.now += DAY;
        let (sid, kind) = if i % 2 == 0 {
            (sim.poll_prompt_quiz().await?, "PollPromptQuiz")
        } else {
            (sim.quiz_prompt_discuss().await?, "QuizPromptDiscuss")
        };
        sim.tick(600, 3600);
        sim.vet().await?;
        let prof = sim.prof.clone();
        let pacing: PacingState = serde_json::from_str(&sim.c.get(&format!("/pacing/{COURSE}"), &prof).await?.text)
            .map_err(|e| SimError::Transport(e.to_string()))?;
        trajectory.push(PacingPoint {
            session: sid,
            kind: kind.into(),
            pace: pacing.pace,
            comprehension: pacing.comprehension,
            mode: format!("{:?}", pacing.mode),
        });
    }
    let prof = sim.prof.clone();
    let recommendation = sim
        .c
        .get(&format!("/pacing/{COURSE}/recommendation"), &prof)
        .await?
        .json();
    let bank_size = sim
        .c
        .get(&format!("/bank?course={COURSE}"), &prof)
        .await?
        .json()
        .as_array()
        .map_or(0, Vec::len);
    let mut exports = BTreeMap::new();
    for what in EXPORTS {
        let csv = sim.c.get(&format!("/analytics/{COURSE}/{what}"), &prof).await?.text;
        exports.insert(what.to_string(), csv);
    }
    if let Some(t) = sim.students.iter().find_map(|s| s.token.clone()) {
        sim.c.get(&format!("/analytics/{COURSE}/leaderboard"), &t).await?;
        sim.c
            .expect(
                Method::GET,
                &format!("/analytics/{COURSE}/histogram"),
                Some(&t),
                None,
                403,
            )
            .await?;
    }
    let checks = sim.checks.clone();
    Ok(SimReport {
        trajectory,
        recommendation,
        exports,
        bank_size,
        checks,
        requests: client.requests,
        restarts: client.restarts,
        statuses: client.statuses.clone(),
    })
}
