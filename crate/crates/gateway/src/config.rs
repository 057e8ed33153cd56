//! Server configuration: a `key = value` file, then `FLIPDECK_*` environment
//! overrides.
//!
//! ```text
//! # flipdeck.conf
//! listen = 127.0.0.1:8080
//! storage = /var/lib/flipdeck/class.log
//! clock = system
//! provider.kind = http
//! provider.url = https://llm.example/v1/generate
//! provider.model = gpt-4
//! pacing.alpha = 1.0
//! ```
//!
//! `provider.key` becomes `FLIPDECK_PROVIDER_KEY`, and so on for every key.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use flipdeck_core::pacing::PacingParams;
use flipdeck_core::store::DEFAULT_SNAPSHOT_EVERY;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StorageConfig {
    Memory,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Wall-clock UTC seconds.
    System,
    /// Time advances only through the `x-flipdeck-time` request header.
    Logical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    /// Built-in canned replies; no network.
    Demo,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub url: Option<String>,
    pub key: Option<String>,
    pub model: String,
    pub timeout_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub listen: SocketAddr,
    pub storage: StorageConfig,
    pub fsync: bool,
    pub clock: ClockMode,
    pub provider: ProviderConfig,
    pub pacing: PacingParams,
    pub snapshot_every: u64,
    /// Bearer token that acts as the system actor (registration, courses).
    pub admin_token: Option<String>,
    /// When set, chat webhooks must send it in `x-flipdeck-chat-secret`.
    pub chat_secret: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            storage: StorageConfig::Memory,
            fsync: true,
            clock: ClockMode::System,
            provider: ProviderConfig {
                kind: ProviderKind::Demo,
                url: None,
                key: None,
                model: "demo".into(),
                timeout_s: 60,
            },
            pacing: PacingParams::default(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            admin_token: None,
            chat_secret: None,
        }
    }
}

/// Where a bad setting came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: usize },
    Env(String),
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Origin,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Origin::File { path, line } => write!(f, "{path}:{line}: {}", self.message),
            Origin::Env(var) => write!(f, "{var}: {}", self.message),
            Origin::Final => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub const KEYS: &[&str] = &[
    "listen",
    "storage",
    "fsync",
    "clock",
    "snapshot_every",
    "admin.token",
    "chat.secret",
    "provider.kind",
    "provider.url",
    "provider.key",
    "provider.model",
    "provider.timeout_s",
    "pacing.alpha",
    "pacing.beta",
    "pacing.theta_hi",
    "pacing.theta_lo",
    "pacing.lambda",
    "pacing.pace_min",
    "pacing.ssthresh",
    "pacing.comprehension_prior",
];

pub fn env_var_for(key: &str) -> String {
    format!("FLIPDECK_{}", key.replace('.', "_").to_ascii_uppercase())
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("`{value}` is not a valid number"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean")),
    }
}

impl Config {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let optional = |v: &str| (!v.is_empty()).then(|| v.to_string());
        match key {
            "listen" => {
                self.listen = value
                    .parse()
                    .map_err(|_| format!("`{value}` is not a socket address"))?
            }
            "storage" => {
                self.storage = match value {
                    "" => return Err("storage path is empty".into()),
                    ":memory:" => StorageConfig::Memory,
                    p => StorageConfig::File(PathBuf::from(p)),
                }
            }
            "fsync" => self.fsync = parse_bool(value)?,
            "clock" => {
                self.clock = match value {
                    "system" => ClockMode::System,
                    "logical" => ClockMode::Logical,
                    _ => return Err(format!("clock must be `system` or `logical`, not `{value}`")),
                }
            }
            "snapshot_every" => self.snapshot_every = parse_num(value)?,
            "admin.token" => self.admin_token = optional(value),
            "chat.secret" => self.chat_secret = optional(value),
            "provider.kind" => {
                self.provider.kind = match value {
                    "demo" => ProviderKind::Demo,
                    "http" => ProviderKind::Http,
                    _ => return Err(format!("provider.kind must be `demo` or `http`, not `{value}`")),
                }
            }
            "provider.url" => self.provider.url = optional(value),
            "provider.key" => self.provider.key = optional(value),
            "provider.model" => self.provider.model = value.to_string(),
            "provider.timeout_s" => self.provider.timeout_s = parse_num(value)?,
            "pacing.alpha" => self.pacing.alpha = parse_num(value)?,
            "pacing.beta" => self.pacing.beta = parse_num(value)?,
            "pacing.theta_hi" => self.pacing.theta_hi = parse_num(value)?,
            "pacing.theta_lo" => self.pacing.theta_lo = parse_num(value)?,
            "pacing.lambda" => self.pacing.lambda = parse_num(value)?,
            "pacing.pace_min" => self.pacing.pace_min = parse_num(value)?,
            "pacing.ssthresh" => self.pacing.initial_ssthresh = parse_num(value)?,
            "pacing.comprehension_prior" => self.pacing.initial_comprehension = parse_num(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| ConfigError {
                origin: Origin::File {
                    path: path.to_string(),
                    line: i + 1,
                },
                message,
            };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected `key = value`, found `{line}`")));
            };
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            self.set(key.trim(), value).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let vars: Vec<(String, String)> = vars
            .into_iter()
            .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
            .filter(|(k, _)| k.starts_with("FLIPDECK_"))
            .collect();
        for (var, value) in &vars {
            let Some(key) = KEYS.iter().find(|k| env_var_for(k) == *var) else {
                return Err(ConfigError {
                    origin: Origin::Env(var.clone()),
                    message: "not a recognised setting".into(),
                });
            };
            self.set(key, value.trim()).map_err(|message| ConfigError {
                origin: Origin::Env(var.clone()),
                message,
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |message: String| ConfigError {
            origin: Origin::Final,
            message,
        };
        self.pacing.validate().map_err(|e| fail(e.to_string()))?;
        if self.snapshot_every == 0 {
            return Err(fail("snapshot_every must be positive".into()));
        }
        if self.provider.kind == ProviderKind::Http && self.provider.url.is_none() {
            return Err(fail("provider.kind = http needs provider.url".into()));
        }
        if self.admin_token.as_ref().is_some_and(|t| t.len() < 8) {
            return Err(fail("admin.token must be at least 8 characters".into()));
        }
        Ok(())
    }

    /// Defaults, then the file if given, then the environment.
    pub fn load<I, K, V>(path: Option<&Path>, env: I) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut config = Config::default();
        if let Some(path) = path {
            let shown = path.display().to_string();
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
                origin: Origin::File {
                    path: shown.clone(),
                    line: 0,
                },
                message: e.to_string(),
            })?;
            config.apply_text(&text, &shown)?;
        }
        config.apply_env(env)?;
        config.validate()?;
        Ok(config)
    }
}
