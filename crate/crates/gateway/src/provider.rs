//! Text-generation backends for the gateway.

use std::time::Duration;

use flipdeck_core::fip::{Provider, ProviderError, ProviderIdentity, Speaker, Turn, JITT_MARKER, MAX_TALKING_POINTS};
use flipdeck_core::samples::{Sample, SampleKind, LOGIC_SAMPLES};
use serde::{Deserialize, Serialize};

use crate::config::{ProviderConfig, ProviderKind};

pub fn from_config(config: &ProviderConfig) -> Box<dyn Provider> {
    match (config.kind, &config.url) {
        (ProviderKind::Http, Some(url)) => Box::new(HttpProvider::new(
            url.clone(),
            config.key.clone(),
            config.model.clone(),
            Duration::from_secs(config.timeout_s),
        )),
        _ => Box::new(DemoProvider),
    }
}

/// Remote model behind a small JSON contract:
/// `POST {model, prompt, history}` answered by `{text}`.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    url: String,
    key: Option<String>,
    model: String,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    history: &'a [Turn],
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

impl HttpProvider {
    pub fn new(url: String, key: Option<String>, model: String, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .unwrap_or_else(|_| reqwest::Client::new());
        HttpProvider {
            url,
            key,
            model,
            client,
        }
    }

    async fn call(&self, prompt: &str, history: &[Turn]) -> Result<String, ProviderError> {
        let body = GenerateRequest {
            model: &self.model,
            prompt,
            history,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ProviderError(format!("request failed: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError(format!("provider answered {status}")));
        }
        let parsed: GenerateResponse = resp
            .json()
            .await
            .map_err(|e| ProviderError(format!("unreadable reply: {e}")))?;
        Ok(parsed.text)
    }
}

impl Provider for HttpProvider {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            provider: self.url.clone(),
            model: self.model.clone(),
        }
    }

    /// Blocks. Inside a runtime, call from a blocking task.
    fn generate(&self, prompt: &str, history: &[Turn]) -> Result<String, ProviderError> {
        let fut = self.call(prompt, history);
        match tokio::runtime::Handle::try_current() {
            Ok(handle) => handle.block_on(fut),
            Err(_) => tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| ProviderError(e.to_string()))?
                .block_on(fut),
        }
    }
}

/// Offline stand-in. Replies depend only on the prompt and history, so a
/// recorded conversation regenerates identically.
#[derive(Debug, Clone, Copy, Default)]
pub struct DemoProvider;

const SUMMARY_LEAD: &str = "Summarize the following student responses";
const FLIPPED_LEAD: &str = "Please ask me questions";

fn pick<'a>(seed: &str, pool: &[&'a Sample]) -> &'a Sample {
    let h = seed
        .bytes()
        .fold(0u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32));
    pool[h as usize % pool.len()]
}

fn samples_of(kind: SampleKind) -> Vec<&'static Sample> {
    LOGIC_SAMPLES.iter().filter(|s| s.kind == kind).collect()
}

fn topic_of(seed: &str) -> &str {
    seed.strip_prefix("Please ask me questions to help me understand ")
        .and_then(|rest| rest.split(". ").next())
        .unwrap_or("this topic")
}

fn final_reply(seed: &str) -> String {
    if let Some(s) = LOGIC_SAMPLES.iter().find(|s| s.prompt.trim() == seed.trim()) {
        return s.question_text().to_string();
    }
    if seed.contains(JITT_MARKER) {
        return format!("{JITT_MARKER} {}", pick(seed, &samples_of(SampleKind::JittQuiz)).prompt);
    }
    let kind = if seed.to_ascii_lowercase().contains("poll") {
        SampleKind::Poll
    } else {
        SampleKind::ClickerQuiz
    };
    pick(seed, &samples_of(kind)).question_text().to_string()
}

fn talking_points(prompt: &str) -> String {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .take(MAX_TALKING_POINTS)
        .map(|r| {
            let words: Vec<&str> = r.split_whitespace().take(12).collect();
            format!("- Compare answers on: {}", words.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Provider for DemoProvider {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            provider: "demo".into(),
            model: "canned".into(),
        }
    }

    fn generate(&self, prompt: &str, history: &[Turn]) -> Result<String, ProviderError> {
        if prompt.starts_with(SUMMARY_LEAD) {
            return Ok(talking_points(prompt));
        }
        let seed = history
            .first()
            .filter(|t| t.speaker == Speaker::User)
            .map_or(prompt, |t| t.text.as_str());
        let asked = history.iter().filter(|t| t.speaker == Speaker::Model).count();
        if seed.starts_with(FLIPPED_LEAD) && asked == 0 {
            return Ok(format!(
                "Before I write it: which part of {} do you find least clear?",
                topic_of(seed)
            ));
        }
        Ok(final_reply(seed))
    }
}

/// Replays `prompts` as one conversation and returns the last reply.
pub fn regenerate(provider: &dyn Provider, prompts: &[String]) -> Result<String, ProviderError> {
    let mut history: Vec<Turn> = Vec::new();
    let mut last = None;
    for p in prompts {
        let at = history.len() as u64;
        history.push(Turn {
            speaker: Speaker::User,
            text: p.clone(),
            at,
        });
        let reply = provider.generate(p, &history)?;
        history.push(Turn {
            speaker: Speaker::Model,
            text: reply.clone(),
            at: at + 1,
        });
        last = Some(reply);
    }
    last.ok_or_else(|| ProviderError("nothing to regenerate".into()))
}
