#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use flipdeck_core::fip::Provider;
use flipdeck_core::{Classroom, EngineConfig};
use flipdeck_gateway::config::ClockMode;
use flipdeck_gateway::provider::DemoProvider;
use flipdeck_gateway::{router, AppState, Shared};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const ADMIN: &str = "admin-token-0001";
pub const PROF: &str = "prof-token-0001";
pub const TA: &str = "ta-token-00001";

pub fn student_token(i: usize) -> String {
    format!("student-token-{i:04}")
}

pub struct Harness {
    pub state: Shared,
    pub router: Router,
    pub now: i64,
}

pub struct Resp {
    pub status: StatusCode,
    pub body: Value,
    pub text: String,
    pub content_type: String,
}

impl Harness {
    pub fn with_provider(provider: Arc<dyn Provider>) -> Self {
        let state = AppState::new(
            Classroom::in_memory(EngineConfig::default()),
            ClockMode::Logical,
            provider,
            Some(ADMIN.into()),
            None,
        );
        Harness {
            router: router(state.clone()),
            state,
            now: 1_000,
        }
    }

    pub fn new() -> Self {
        Self::with_provider(Arc::new(DemoProvider))
    }

    pub async fn raw(&mut self, method: &str, path: &str, token: Option<&str>, body: Option<String>) -> Resp {
        self.raw_with(method, path, token, body, &[]).await
    }

    pub async fn raw_with(
        &mut self,
        method: &str,
        path: &str,
        token: Option<&str>,
        body: Option<String>,
        headers: &[(&str, &str)],
    ) -> Resp {
        self.now += 1;
        let mut req = Request::builder().method(method).uri(path);
        if !headers.iter().any(|(k, _)| *k == "x-flipdeck-time") {
            req = req.header("x-flipdeck-time", self.now.to_string());
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        Resp {
            status,
            body: serde_json::from_str(&text).unwrap_or(Value::Null),
            text,
            content_type,
        }
    }

    pub async fn post(&mut self, path: &str, token: &str, body: Value) -> Resp {
        self.raw("POST", path, Some(token), Some(body.to_string())).await
    }

    pub async fn get(&mut self, path: &str, token: &str) -> Resp {
        self.raw("GET", path, Some(token), None).await
    }

    pub async fn ok(&mut self, path: &str, token: &str, body: Value) -> Value {
        let r = self.post(path, token, body).await;
        assert!(r.status.is_success(), "POST {path}: {} {}", r.status, r.text);
        r.body
    }

    /// Staff, `students` token students, the course and the six sample
    /// questions, all approved at difficulty 4.
    pub async fn seeded(students: usize) -> Self {
        let mut h = Self::new();
        h.ok(
            "/actors",
            ADMIN,
            json!({"id": "prof", "role": "instructor", "token": PROF}),
        )
        .await;
        h.ok("/actors", ADMIN, json!({"id": "ta", "role": "assistant", "token": TA}))
            .await;
        for i in 0..students {
            h.ok(
                "/actors",
                ADMIN,
                json!({"id": format!("st{i}"), "role": "student", "token": student_token(i)}),
            )
            .await;
        }
        h.ok("/courses", ADMIN, json!({"course": "cs", "instructor": "prof"}))
            .await;
        for s in flipdeck_core::samples::LOGIC_SAMPLES {
            h.ok(
                "/bank",
                PROF,
                json!({"course": "cs", "text": s.question_text(), "kind": s.kind.question_kind(), "prompts": [s.prompt]}),
            )
            .await;
        }
        for e in 1..=6 {
            h.ok(
                &format!("/vetting/b{e}/verdict"),
                TA,
                json!({"decision": "approve", "initial_difficulty": 4}),
            )
            .await;
        }
        h
    }
}
