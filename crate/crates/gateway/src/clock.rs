use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use flipdeck_core::Timestamp;

use crate::config::ClockMode;

/// Header carrying the caller's logical time, in seconds.
pub const TIME_HEADER: &str = "x-flipdeck-time";

#[derive(Debug)]
pub enum Clock {
    System,
    /// Never moves backwards; requests may push it forward.
    Logical(AtomicI64),
}

impl Clock {
    pub fn new(mode: ClockMode, start: Timestamp) -> Clock {
        match mode {
            ClockMode::System => Clock::System,
            ClockMode::Logical => Clock::Logical(AtomicI64::new(start.0)),
        }
    }

    /// Current time. A logical clock first advances to `hint` if it is later.
    pub fn now(&self, hint: Option<i64>) -> Timestamp {
        match self {
            Clock::System => Timestamp(
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs() as i64)
                    .unwrap_or(0),
            ),
            Clock::Logical(t) => match hint {
                Some(h) => Timestamp(t.fetch_max(h, Ordering::SeqCst).max(h)),
                None => Timestamp(t.load(Ordering::SeqCst)),
            },
        }
    }
}
