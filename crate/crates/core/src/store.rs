//! Append-only event log.
//!
//! On-disk layout (version 1):
//!
//! ```text
//! flipdeck-log v1
//! {"checksum":1234,"kind":"session.created","payload":{...},"seq":1,"ts":1700000000}
//! ...
//! ```
//!
//! One canonical JSON object per line, keys sorted at every depth. The
//! checksum is the CRC-32 of the canonical JSON of the same record with the
//! `checksum` field omitted. A snapshot file sits beside the log:
//!
//! ```text
//! flipdeck-snapshot v1
//! {"checksum":...,"seq":10000,"state":{...}}
//! ```

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::Timestamp;

pub const LOG_MAGIC: &str = "flipdeck-log v1";
pub const SNAPSHOT_MAGIC: &str = "flipdeck-snapshot v1";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 10_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("not a flipdeck log (bad header)")]
    BadHeader,
    #[error("corrupt record after seq {last_valid}: {reason}")]
    CorruptRecord { last_valid: u64, reason: String },
    #[error("encoding failure: {0}")]
    Encoding(String),
}

/// Serializes a JSON value with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub ts: Timestamp,
    pub kind: String,
    pub payload: Value,
    pub checksum: u32,
}

fn body_value(seq: u64, ts: Timestamp, kind: &str, payload: &Value) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), Value::String(kind.to_string()));
    m.insert("payload".into(), payload.clone());
    m.insert("seq".into(), Value::from(seq));
    m.insert("ts".into(), Value::from(ts.0));
    Value::Object(m)
}

impl EventEnvelope {
    pub fn new(seq: u64, ts: Timestamp, kind: impl Into<String>, payload: Value) -> Self {
        let kind = kind.into();
        let checksum = crc32fast::hash(canonical_json(&body_value(seq, ts, &kind, &payload)).as_bytes());
        EventEnvelope {
            seq,
            ts,
            kind,
            payload,
            checksum,
        }
    }

    pub fn verify(&self) -> bool {
        let body = canonical_json(&body_value(self.seq, self.ts, &self.kind, &self.payload));
        crc32fast::hash(body.as_bytes()) == self.checksum
    }

    pub fn to_line(&self) -> String {
        let mut v = body_value(self.seq, self.ts, &self.kind, &self.payload);
        if let Value::Object(m) = &mut v {
            m.insert("checksum".into(), Value::from(self.checksum));
        }
        canonical_json(&v)
    }

    fn from_line(line: &str) -> Result<Self, String> {
        let env: EventEnvelope = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if !env.verify() {
            return Err(format!("checksum mismatch at seq {}", env.seq));
        }
        Ok(env)
    }
}

/// Byte-level persistence behind the log. `append` must either make all of
/// `bytes` visible or none of them.
pub trait LogStorage: Send {
    fn read_all(&mut self) -> io::Result<Vec<u8>>;
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn truncate(&mut self, len: u64) -> io::Result<()>;
    fn read_snapshot(&mut self) -> io::Result<Option<Vec<u8>>>;
    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStorage {
    pub log: Vec<u8>,
    pub snapshot: Option<Vec<u8>>,
}

impl LogStorage for MemoryStorage {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        Ok(self.log.clone())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.log.extend_from_slice(bytes);
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.log.truncate(len as usize);
        Ok(())
    }

    fn read_snapshot(&mut self) -> io::Result<Option<Vec<u8>>> {
        Ok(self.snapshot.clone())
    }

    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.snapshot = Some(bytes.to_vec());
        Ok(())
    }
}

#[derive(Debug)]
pub struct FileStorage {
    path: PathBuf,
    file: File,
    len: u64,
    sync: bool,
}

impl FileStorage {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().read(true).create(true).append(true).open(&path)?;
        let len = file.metadata()?.len();
        Ok(FileStorage {
            path,
            file,
            len,
            sync: true,
        })
    }

    /// Skips `fsync` after each append. Acknowledged writes may then be lost
    /// on power failure; only meant for throwaway simulation logs.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn snapshot_path(&self) -> PathBuf {
        let mut p = self.path.clone().into_os_string();
        p.push(".snap");
        PathBuf::from(p)
    }
}

impl LogStorage for FileStorage {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.file.seek(SeekFrom::Start(0))?;
        self.file.read_to_end(&mut buf)?;
        Ok(buf)
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        let result = self
            .file
            .write_all(bytes)
            .and_then(|_| if self.sync { self.file.sync_data() } else { Ok(()) });
        match result {
            Ok(()) => {
                self.len += bytes.len() as u64;
                Ok(())
            }
            Err(e) => {
                let _ = self.file.set_len(self.len);
                Err(e)
            }
        }
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)?;
        self.file.sync_all()?;
        self.len = len;
        Ok(())
    }

    fn read_snapshot(&mut self) -> io::Result<Option<Vec<u8>>> {
        match std::fs::read(self.snapshot_path()) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()> {
        let target = self.snapshot_path();
        let mut tmp = target.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, target)
    }
}

/// Outcome of scanning raw log bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScan {
    pub events: Vec<EventEnvelope>,
    /// Byte length of the valid prefix (header plus intact records).
    pub valid_len: u64,
    /// Why scanning stopped early, if it did.
    pub corruption: Option<String>,
    /// True when the first bad record is also the last line of the file.
    pub torn_tail: bool,
}

impl LogScan {
    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }
}

/// Parses log bytes, stopping at the first record that fails to decode,
/// fails its checksum, or breaks the gap-free sequence.
pub fn scan_log(bytes: &[u8]) -> Result<LogScan, StoreError> {
    if bytes.is_empty() {
        return Ok(LogScan {
            events: vec![],
            valid_len: 0,
            corruption: None,
            torn_tail: false,
        });
    }
    let header = format!("{LOG_MAGIC}\n");
    if !bytes.starts_with(header.as_bytes()) {
        if header.as_bytes().starts_with(bytes) {
            return Ok(LogScan {
                events: vec![],
                valid_len: 0,
                corruption: Some("partial header".into()),
                torn_tail: true,
            });
        }
        return Err(StoreError::BadHeader);
    }
    let mut events = Vec::new();
    let mut offset = header.len();
    let mut corruption = None;
    let mut torn_tail = false;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let (line, complete) = match rest.iter().position(|b| *b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let next_offset = offset + line.len() + usize::from(complete);
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|l| {
                if complete {
                    EventEnvelope::from_line(l)
                } else {
                    Err("unterminated record".into())
                }
            })
            .and_then(|env| {
                let expected = events.last().map_or(1, |e: &EventEnvelope| e.seq + 1);
                if env.seq == expected {
                    Ok(env)
                } else {
                    Err(format!("sequence gap: expected {expected}, found {}", env.seq))
                }
            });
        match parsed {
            Ok(env) => {
                events.push(env);
                offset = next_offset;
            }
            Err(reason) => {
                corruption = Some(reason);
                torn_tail = next_offset >= bytes.len();
                break;
            }
        }
    }
    Ok(LogScan {
        events,
        valid_len: offset as u64,
        corruption,
        torn_tail,
    })
}

pub struct EventLog {
    storage: Box<dyn LogStorage>,
    last_seq: u64,
    len: u64,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("last_seq", &self.last_seq)
            .field("len", &self.len)
            .finish()
    }
}

impl EventLog {
    /// Opens a log for appending and returns the events already in it.
    ///
    /// A torn final record, left by a crash mid-append, is cut off. Damage
    /// anywhere before the final record is refused.
    pub fn open(mut storage: Box<dyn LogStorage>) -> Result<(EventLog, Vec<EventEnvelope>), StoreError> {
        let bytes = storage.read_all()?;
        let scan = scan_log(&bytes)?;
        if let Some(reason) = &scan.corruption {
            if !scan.torn_tail {
                return Err(StoreError::CorruptRecord {
                    last_valid: scan.last_seq(),
                    reason: reason.clone(),
                });
            }
            storage.truncate(scan.valid_len)?;
        }
        let mut len = scan.valid_len;
        if len == 0 {
            let header = format!("{LOG_MAGIC}\n");
            storage.append(header.as_bytes())?;
            len = header.len() as u64;
        }
        let last_seq = scan.last_seq();
        Ok((EventLog { storage, last_seq, len }, scan.events))
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Appends records atomically; on failure nothing is written and the
    /// sequence counter is unchanged.
    pub fn append_batch(
        &mut self,
        ts: Timestamp,
        records: Vec<(String, Value)>,
    ) -> Result<Vec<EventEnvelope>, StoreError> {
        let mut envs = Vec::with_capacity(records.len());
        let mut buf = String::new();
        for (i, (kind, payload)) in records.into_iter().enumerate() {
            let env = EventEnvelope::new(self.last_seq + 1 + i as u64, ts, kind, payload);
            buf.push_str(&env.to_line());
            buf.push('\n');
            envs.push(env);
        }
        if let Err(e) = self.storage.append(buf.as_bytes()) {
            let _ = self.storage.truncate(self.len);
            return Err(StoreError::StorageFailure(e));
        }
        self.len += buf.len() as u64;
        self.last_seq += envs.len() as u64;
        Ok(envs)
    }

    pub fn append(&mut self, ts: Timestamp, kind: &str, payload: Value) -> Result<u64, StoreError> {
        let envs = self.append_batch(ts, vec![(kind.to_string(), payload)])?;
        Ok(envs[0].seq)
    }

    pub fn replay(&mut self, from_seq: u64) -> Result<Vec<EventEnvelope>, StoreError> {
        let bytes = self.storage.read_all()?;
        let scan = scan_log(&bytes)?;
        Ok(scan.events.into_iter().filter(|e| e.seq >= from_seq).collect())
    }

    pub fn read_bytes(&mut self) -> Result<Vec<u8>, StoreError> {
        Ok(self.storage.read_all()?)
    }

    pub fn write_snapshot(&mut self, seq: u64, state: &Value) -> Result<(), StoreError> {
        let bytes = encode_snapshot(seq, state);
        self.storage.write_snapshot(bytes.as_bytes())?;
        Ok(())
    }

    pub fn read_snapshot(&mut self) -> Result<Option<(u64, Value)>, StoreError> {
        Ok(self.storage.read_snapshot()?.and_then(|b| decode_snapshot(&b)))
    }
}

pub fn encode_snapshot(seq: u64, state: &Value) -> String {
    let body = canonical_json(state);
    let checksum = crc32fast::hash(body.as_bytes());
    let mut m = Map::new();
    m.insert("checksum".into(), Value::from(checksum));
    m.insert("seq".into(), Value::from(seq));
    m.insert("state".into(), state.clone());
    format!("{SNAPSHOT_MAGIC}\n{}\n", canonical_json(&Value::Object(m)))
}

/// Returns `None` for anything that is not an intact snapshot.
pub fn decode_snapshot(bytes: &[u8]) -> Option<(u64, Value)> {
    let text = std::str::from_utf8(bytes).ok()?;
    let body = text.strip_prefix(SNAPSHOT_MAGIC)?.strip_prefix('\n')?;
    let v: Value = serde_json::from_str(body.trim_end()).ok()?;
    let seq = v.get("seq")?.as_u64()?;
    let checksum = v.get("checksum")?.as_u64()?;
    let state = v.get("state")?.clone();
    (u64::from(crc32fast::hash(canonical_json(&state).as_bytes())) == checksum).then_some((seq, state))
}

/// Injects write failures for crash-consistency tests.
pub struct FaultyStorage<S> {
    pub inner: S,
    /// Appends allowed before the first failure.
    pub healthy_appends: usize,
    /// When set, a failing append first writes this many bytes, like a torn write.
    pub torn_bytes: Option<usize>,
    /// When set, the rollback after a failed append also fails, leaving the torn bytes.
    pub crash_on_failure: bool,
    appends: usize,
}

impl<S: LogStorage> FaultyStorage<S> {
    pub fn new(inner: S, healthy_appends: usize) -> Self {
        FaultyStorage {
            inner,
            healthy_appends,
            torn_bytes: None,
            crash_on_failure: false,
            appends: 0,
        }
    }

    fn failing(&self) -> bool {
        self.appends > self.healthy_appends
    }
}

impl<S: LogStorage> LogStorage for FaultyStorage<S> {
    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        self.inner.read_all()
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.appends += 1;
        if !self.failing() {
            return self.inner.append(bytes);
        }
        if let Some(n) = self.torn_bytes {
            self.inner.append(&bytes[..n.min(bytes.len())])?;
        }
        Err(io::Error::other("injected write failure"))
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        if self.crash_on_failure && self.failing() {
            return Err(io::Error::other("injected crash"));
        }
        self.inner.truncate(len)
    }

    fn read_snapshot(&mut self) -> io::Result<Option<Vec<u8>>> {
        self.inner.read_snapshot()
    }

    fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.inner.write_snapshot(bytes)
    }
}
