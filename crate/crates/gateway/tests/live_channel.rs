mod common;

use std::time::Duration;

use common::{student_token, Harness, PROF};
use flipdeck_gateway::spawn_loopback;
use serde_json::{json, Value};

struct SseReader {
    resp: reqwest::Response,
    buf: String,
}

impl SseReader {
    async fn open(base: &str, session: &str, token: &str) -> SseReader {
        let resp = reqwest::get(format!("{base}/live/{session}?token={token}"))
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        SseReader {
            resp,
            buf: String::new(),
        }
    }

    /// Next non-comment event as (name, data).
    async fn next(&mut self) -> (String, Value) {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let frame: String = self.buf.drain(..end + 2).collect();
                let mut name = String::from("message");
                let mut data = String::new();
                for line in frame.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        name = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim());
                    }
                }
                if data.is_empty() {
                    continue;
                }
                return (name, serde_json::from_str(&data).unwrap_or(Value::String(data)));
            }
            let chunk = tokio::time::timeout(Duration::from_secs(10), self.resp.chunk())
                .await
                .expect("live event within 10s")
                .unwrap()
                .expect("stream still open");
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }
}

async fn post(client: &reqwest::Client, base: &str, path: &str, token: &str, body: Value) -> reqwest::Response {
    client
        .post(format!("{base}{path}"))
        .bearer_auth(token)
        .json(&body)
        .send()
        .await
        .unwrap()
}

async fn setup(students: usize) -> (String, String, String) {
    let mut h = Harness::seeded(students).await;
    let sid = h
        .ok("/sessions", PROF, json!({"course": "cs", "kind": "PollPromptQuiz"}))
        .await["id"]
        .as_str()
        .unwrap()
        .to_string();
    let pid = h
        .ok(&format!("/sessions/{sid}/polls"), PROF, json!({"entry": "b1"}))
        .await["id"]
        .as_str()
        .unwrap()
        .to_string();
    let (addr, _server) = spawn_loopback(h.state.clone()).await.unwrap();
    (format!("http://{addr}"), sid, pid)
}

#[tokio::test(flavor = "multi_thread")]
async fn live_tallies_arrive_in_order_and_are_gated_for_students() {
    let (base, sid, pid) = setup(3).await;
    let client = reqwest::Client::new();
    let unauth = client.get(format!("{base}/live/{sid}")).send().await.unwrap();
    assert_eq!(unauth.status(), 401);

    let mut staff = SseReader::open(&base, &sid, PROF).await;
    let mut late_voter = SseReader::open(&base, &sid, &student_token(2)).await;
    for (i, label) in [(0, "B"), (1, "A"), (2, "B")] {
        let r = post(
            &client,
            &base,
            &format!("/instances/{pid}/votes"),
            &student_token(i),
            json!({"labels": [label]}),
        )
        .await;
        assert_eq!(r.status(), 200);
    }
    let mut last_seq = 0;
    for expected in 1..=3 {
        let (name, ev) = staff.next().await;
        assert_eq!(name, "vote");
        assert_eq!(ev["tally"]["voters"], expected);
        let seq = ev["seq"].as_u64().unwrap();
        assert!(seq > last_seq);
        last_seq = seq;
        assert!(ev.get("voter").is_none());
    }
    let (name, ev) = late_voter.next().await;
    assert_eq!(name, "vote");
    assert_eq!(ev["tally"]["voters"], 3, "a student sees nothing before their own vote");

    assert_eq!(
        post(&client, &base, &format!("/instances/{pid}/close"), PROF, json!({}))
            .await
            .status(),
        200
    );
    let (name, ev) = staff.next().await;
    assert_eq!(name, "closed");
    assert_eq!(ev["tally"]["closed"], true);
    assert_eq!(ev["phase"], "PollClosed");
    assert_eq!(late_voter.next().await.0, "closed");
    post(&client, &base, &format!("/sessions/{sid}/advance"), PROF, json!({})).await;
    let (name, ev) = staff.next().await;
    assert_eq!(name, "phase");
    assert_eq!(ev["phase"], "PromptPhase");
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_votes_stream_in_log_order() {
    let students = 24;
    let (base, sid, pid) = setup(students).await;
    let mut staff = SseReader::open(&base, &sid, PROF).await;
    let client = reqwest::Client::new();
    let tasks: Vec<_> = (0..students)
        .map(|i| {
            let (client, base, pid) = (client.clone(), base.clone(), pid.clone());
            tokio::spawn(async move {
                post(
                    &client,
                    &base,
                    &format!("/instances/{pid}/votes"),
                    &student_token(i),
                    json!({"labels": ["B"]}),
                )
                .await
                .status()
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), 200);
    }
    let mut last_seq = 0;
    for expected in 1..=students {
        let (_, ev) = staff.next().await;
        assert_eq!(ev["tally"]["voters"], expected as u64);
        assert_eq!(ev["tally"]["counts"]["B"], expected as u64);
        let seq = ev["seq"].as_u64().unwrap();
        assert!(seq > last_seq);
        last_seq = seq;
    }
}
