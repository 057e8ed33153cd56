//! Statistics over recorded class activity, and their CSV exports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Timestamp;
use crate::pacing::ewma_step;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("answer at {answered} precedes assignment at {assigned}")]
    NegativeLatency { assigned: Timestamp, answered: Timestamp },
    #[error("no values")]
    EmptyInput,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaysHistogram {
    pub buckets: BTreeMap<i64, u64>,
    pub n: u64,
    /// Assignments never answered; kept out of the buckets.
    pub unanswered: u64,
}

/// Whole elapsed days, counted in UTC seconds.
pub fn time_to_answer(assignments: &[(Timestamp, Option<Timestamp>)]) -> Result<DaysHistogram, AnalyticsError> {
    let mut h = DaysHistogram::default();
    for &(assigned, answered) in assignments {
        let Some(answered) = answered else {
            h.unanswered += 1;
            continue;
        };
        let latency = answered.0 - assigned.0;
        if latency < 0 {
            return Err(AnalyticsError::NegativeLatency { assigned, answered });
        }
        *h.buckets.entry(latency.div_euclid(SECONDS_PER_DAY)).or_insert(0) += 1;
        h.n += 1;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyStats {
    pub mean: f64,
    /// Population variance (divides by `n`).
    pub variance: f64,
    pub n: usize,
}

pub fn difficulty_stats(values: &[f64]) -> Result<DifficultyStats, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(DifficultyStats {
        mean,
        variance,
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Standing {
    pub rank: usize,
    pub actor: String,
    pub score: i64,
}

/// Competition ranking ("1224"): tied scores share a rank and the next rank
/// skips. Ties list in ascending actor id.
pub fn leaderboard(scores: &BTreeMap<String, i64>) -> Vec<Standing> {
    let mut rows: Vec<(&String, i64)> = scores.iter().map(|(a, s)| (a, *s)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = Vec::with_capacity(rows.len());
    for (i, (actor, score)) in rows.iter().enumerate() {
        let rank = match out.last() {
            Some(Standing { rank, score: prev, .. }) if prev == score => *rank,
            _ => i + 1,
        };
        out.push(Standing {
            rank,
            actor: (*actor).clone(),
            score: *score,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComprehensionPoint {
    pub session_ref: String,
    pub accuracy: f64,
    pub ewma: f64,
}

/// Per-quiz accuracy with the running comprehension estimate beside it.
pub fn comprehension_series(quizzes: &[(String, f64)], prior: f64, lambda: f64) -> Vec<ComprehensionPoint> {
    let mut ewma = prior;
    quizzes
        .iter()
        .map(|(session, accuracy)| {
            ewma = ewma_step(ewma, *accuracy, lambda);
            ComprehensionPoint {
                session_ref: session.clone(),
                accuracy: *accuracy,
                ewma,
            }
        })
        .collect()
}

pub fn histogram_csv(h: &DaysHistogram) -> String {
    let mut out = String::from("day,count\n");
    for (day, count) in &h.buckets {
        out.push_str(&format!("{day},{count}\n"));
    }
    out
}

pub fn unanswered_csv(h: &DaysHistogram) -> String {
    format!("unanswered\n{}\n", h.unanswered)
}

pub fn difficulty_csv(stats: Option<&DifficultyStats>) -> String {
    let mut out = String::from("mean,variance,n,variance_convention\n");
    if let Some(s) = stats {
        out.push_str(&format!("{},{},{},population\n", s.mean, s.variance, s.n));
    }
    out
}

pub fn leaderboard_csv(rows: &[Standing]) -> String {
    let mut out = String::from("rank,actor,score\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.rank, r.actor, r.score));
    }
    out
}

pub fn comprehension_csv(points: &[ComprehensionPoint]) -> String {
    let mut out = String::from("session,accuracy,ewma\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.session_ref, p.accuracy, p.ewma));
    }
    out
}
