//! Review queue and question bank.
//!
//! Submitted questions land here as `Pending` entries. A reviewer can
//! regenerate the question from the student's prompts and compare texts,
//! then approve (with a starting difficulty) or reject. Approved entries
//! drift toward observed class difficulty after every session that uses them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ActorRef, McqQuestion, QuestionKind, RootQuestion, Timestamp};
use crate::fip::ProviderIdentity;
use crate::mcq::render_mcq;

pub const MATCH_THRESHOLD: f64 = 0.8;
pub const DIFFICULTY_WEIGHT: f64 = 0.25;
pub const MIN_DIFFICULTY: f64 = 1.0;
pub const MAX_DIFFICULTY: f64 = 10.0;

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard index of the lowercased word-token sets. Two token-free strings
/// are treated as identical.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproduceCheck {
    pub similarity: f64,
    pub verdict: Verdict,
}

pub fn reproduce_check(original: &str, regenerated: &str) -> ReproduceCheck {
    let similarity = token_jaccard(original, regenerated);
    let verdict = if similarity >= MATCH_THRESHOLD {
        Verdict::Match
    } else {
        Verdict::Mismatch
    };
    ReproduceCheck { similarity, verdict }
}

/// Moves `difficulty` a fixed step toward the difficulty implied by the
/// class accuracy: 1 when everyone is right, 10 when nobody is.
pub fn update_difficulty(difficulty: f64, session_accuracy: f64) -> f64 {
    let observed = 1.0 + 9.0 * (1.0 - session_accuracy);
    let next = (1.0 - DIFFICULTY_WEIGHT) * difficulty + DIFFICULTY_WEIGHT * observed;
    next.clamp(MIN_DIFFICULTY, MAX_DIFFICULTY)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum BankItem {
    Mcq(McqQuestion),
    Root(RootQuestion),
    OpenEnded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Poll,
    ClickerQuiz,
    JittQuiz,
    Root,
    OpenEnded,
}

impl BankItem {
    pub fn kind(&self) -> EntryKind {
        match self {
            BankItem::Mcq(q) => match q.kind() {
                QuestionKind::Poll => EntryKind::Poll,
                QuestionKind::ClickerQuiz => EntryKind::ClickerQuiz,
                QuestionKind::JittQuiz => EntryKind::JittQuiz,
            },
            BankItem::Root(_) => EntryKind::Root,
            BankItem::OpenEnded(_) => EntryKind::OpenEnded,
        }
    }

    /// The text a reviewer compares against a regeneration.
    pub fn text(&self) -> String {
        match self {
            BankItem::Mcq(q) => render_mcq(q),
            BankItem::Root(r) => {
                let mut s = r.problem_statement().to_string();
                for item in r.items() {
                    s.push('\n');
                    s.push_str(&render_mcq(item));
                }
                s
            }
            BankItem::OpenEnded(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub author: ActorRef,
    #[serde(default)]
    pub submission_ref: Option<String>,
    #[serde(default)]
    pub provider: Option<ProviderIdentity>,
    #[serde(default)]
    pub prompts: Vec<String>,
}

/// Opaque media (code snippet, image) carried alongside an entry. Never decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub media_type: String,
    pub data: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryStatus {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub session_ref: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub id: String,
    pub course: String,
    #[serde(default)]
    pub topic: Option<String>,
    pub item: BankItem,
    pub provenance: Provenance,
    /// Set on approval; always within `[1, 10]`.
    pub difficulty: Option<f64>,
    pub initial_difficulty: Option<f64>,
    pub performance: Vec<Performance>,
    pub status: EntryStatus,
    #[serde(default)]
    pub attachment: Option<Attachment>,
    pub created_at: Timestamp,
    #[serde(default)]
    pub decided_at: Option<Timestamp>,
    #[serde(default)]
    pub reviewer: Option<String>,
}

impl BankEntry {
    pub fn is_selectable(&self) -> bool {
        self.status == EntryStatus::Approved
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VettingError {
    #[error("only instructors and assistants may record verdicts")]
    Unauthorized,
    #[error("entry {0} already has a verdict")]
    AlreadyDecided(String),
    #[error("unknown bank entry {0}")]
    UnknownEntry(String),
    #[error("initial difficulty must be an integer in 1..=10")]
    BadDifficulty,
    #[error("entry {0} is not approved for use")]
    NotSelectable(String),
}

/// Inclusive difficulty interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBand {
    pub lo: f64,
    pub hi: f64,
}

impl DifficultyBand {
    pub const fn new(lo: f64, hi: f64) -> Self {
        DifficultyBand { lo, hi }
    }

    pub fn contains(&self, d: f64) -> bool {
        self.lo <= d && d <= self.hi
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BankFilter {
    #[serde(default)]
    pub course: Option<String>,
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub band: Option<DifficultyBand>,
    #[serde(default)]
    pub status: Option<EntryStatus>,
    #[serde(default)]
    pub kind: Option<EntryKind>,
}

impl BankFilter {
    pub fn approved() -> Self {
        BankFilter {
            status: Some(EntryStatus::Approved),
            ..Default::default()
        }
    }

    pub fn admits(&self, e: &BankEntry) -> bool {
        self.course.as_ref().is_none_or(|c| *c == e.course)
            && self.topic.as_ref().is_none_or(|t| e.topic.as_ref() == Some(t))
            && self.status.is_none_or(|s| s == e.status)
            && self.kind.is_none_or(|k| k == e.item.kind())
            && self.band.is_none_or(|b| e.difficulty.is_some_and(|d| b.contains(d)))
    }
}

pub fn id_number(id: &str) -> u64 {
    id.trim_start_matches(|c: char| !c.is_ascii_digit())
        .parse()
        .unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bank {
    entries: BTreeMap<u64, BankEntry>,
    next_id: u64,
}

impl Bank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<&BankEntry> {
        self.entries.get(&id_number(id)).filter(|e| e.id == id)
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut BankEntry> {
        self.entries.get_mut(&id_number(id)).filter(|e| e.id == id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn peek_next_id(&self) -> String {
        format!("b{}", self.next_id + 1)
    }

    /// Adds a pending entry and returns its id.
    #[allow(clippy::too_many_arguments)]
    pub fn enqueue(
        &mut self,
        course: &str,
        topic: Option<String>,
        item: BankItem,
        provenance: Provenance,
        attachment: Option<Attachment>,
        at: Timestamp,
    ) -> String {
        self.next_id += 1;
        let id = format!("b{}", self.next_id);
        self.entries.insert(
            self.next_id,
            BankEntry {
                id: id.clone(),
                course: course.to_string(),
                topic,
                item,
                provenance,
                difficulty: None,
                initial_difficulty: None,
                performance: Vec::new(),
                status: EntryStatus::Pending,
                attachment,
                created_at: at,
                decided_at: None,
                reviewer: None,
            },
        );
        id
    }

    pub fn check_verdict(
        &self,
        id: &str,
        reviewer: &ActorRef,
        decision: Decision,
        initial_difficulty: Option<u8>,
    ) -> Result<(), VettingError> {
        if !reviewer.role().can_review() {
            return Err(VettingError::Unauthorized);
        }
        let entry = self.get(id).ok_or_else(|| VettingError::UnknownEntry(id.to_string()))?;
        if entry.status != EntryStatus::Pending {
            return Err(VettingError::AlreadyDecided(id.to_string()));
        }
        if decision == Decision::Approve && !matches!(initial_difficulty, Some(1..=10)) {
            return Err(VettingError::BadDifficulty);
        }
        Ok(())
    }

    /// Applies a verdict already accepted by [`Bank::check_verdict`].
    pub fn apply_verdict(
        &mut self,
        id: &str,
        reviewer: &str,
        decision: Decision,
        initial_difficulty: Option<u8>,
        at: Timestamp,
    ) {
        if let Some(e) = self.get_mut(id) {
            e.reviewer = Some(reviewer.to_string());
            e.decided_at = Some(at);
            match decision {
                Decision::Approve => {
                    let d = f64::from(initial_difficulty.unwrap_or(5));
                    e.status = EntryStatus::Approved;
                    e.difficulty = Some(d);
                    e.initial_difficulty = Some(d);
                }
                Decision::Reject => e.status = EntryStatus::Rejected,
            }
        }
    }

    pub fn record_verdict(
        &mut self,
        id: &str,
        reviewer: &ActorRef,
        decision: Decision,
        initial_difficulty: Option<u8>,
        at: Timestamp,
    ) -> Result<&BankEntry, VettingError> {
        self.check_verdict(id, reviewer, decision, initial_difficulty)?;
        self.apply_verdict(id, reviewer.id(), decision, initial_difficulty, at);
        Ok(self.get(id).expect("entry checked above"))
    }

    /// Records a session outcome for an approved entry and returns the new difficulty.
    pub fn record_performance(&mut self, id: &str, session_ref: &str, accuracy: f64) -> Option<f64> {
        let e = self.get_mut(id)?;
        e.performance.push(Performance {
            session_ref: session_ref.to_string(),
            accuracy,
        });
        let d = update_difficulty(e.difficulty?, accuracy);
        e.difficulty = Some(d);
        Some(d)
    }

    pub fn selectable(&self, id: &str) -> Result<&BankEntry, VettingError> {
        let e = self.get(id).ok_or_else(|| VettingError::UnknownEntry(id.to_string()))?;
        if e.is_selectable() {
            Ok(e)
        } else {
            Err(VettingError::NotSelectable(id.to_string()))
        }
    }

    /// Newest decision first; entries without a decision sort by creation time.
    pub fn query(&self, filter: &BankFilter) -> Vec<&BankEntry> {
        let mut out: Vec<&BankEntry> = self.entries.values().filter(|e| filter.admits(e)).collect();
        out.sort_by_key(|e| (Reverse(e.decided_at.unwrap_or(e.created_at)), id_number(&e.id)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Role;

    fn prov() -> Provenance {
        Provenance {
            author: ActorRef::new("stu1", Role::Student),
            submission_ref: None,
            provider: None,
            prompts: vec!["p".into()],
        }
    }

    fn ta() -> ActorRef {
        ActorRef::new("ta", Role::Assistant)
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(reproduce_check("same text", "same text").similarity, 1.0);
        let disjoint = reproduce_check("alpha beta", "gamma delta");
        assert_eq!((disjoint.similarity, disjoint.verdict), (0.0, Verdict::Mismatch));
        let perm = reproduce_check("NOT A OR NOT B", "NOT B OR NOT A");
        assert_eq!((perm.similarity, perm.verdict), (1.0, Verdict::Match));
    }

    #[test]
    fn threshold_is_inclusive() {
        // {a,b,c,d} vs {a,b,c,d,e}: 4 shared of 5
        assert_eq!(reproduce_check("a b c d", "a b c d e").verdict, Verdict::Match);
        // {a,b,c,d} vs {a,b,c,e}: 3 shared of 5
        assert_eq!(reproduce_check("a b c d", "a b c e").verdict, Verdict::Mismatch);
    }

    #[test]
    fn difficulty_update_examples() {
        assert_eq!(update_difficulty(5.0, 0.5), 5.125);
        // observed == current when accuracy = (10 - d) / 9
        assert_eq!(update_difficulty(5.5, 0.5), 5.5);
        assert_eq!(update_difficulty(10.0, 0.0), 10.0);
        let mut d = 9.0;
        for _ in 0..50 {
            let next = update_difficulty(d, 1.0);
            assert!(next <= d && next >= 1.0);
            d = next;
        }
        assert!((d - 1.0).abs() < 1e-5);
    }

    #[test]
    fn verdict_rules() {
        let mut bank = Bank::new();
        let id = bank.enqueue("c1", None, BankItem::OpenEnded("q".into()), prov(), None, Timestamp(1));
        let student = ActorRef::new("stu2", Role::Student);
        assert_eq!(
            bank.record_verdict(&id, &student, Decision::Approve, Some(5), Timestamp(2))
                .unwrap_err(),
            VettingError::Unauthorized
        );
        assert_eq!(
            bank.record_verdict(&id, &ta(), Decision::Approve, Some(11), Timestamp(2))
                .unwrap_err(),
            VettingError::BadDifficulty
        );
        let e = bank
            .record_verdict(&id, &ta(), Decision::Approve, Some(5), Timestamp(2))
            .unwrap();
        assert_eq!(e.difficulty, Some(5.0));
        assert!(e.is_selectable());
        assert!(matches!(
            bank.record_verdict(&id, &ta(), Decision::Reject, None, Timestamp(3)),
            Err(VettingError::AlreadyDecided(_))
        ));
    }

    #[test]
    fn rejected_entries_never_selectable() {
        let mut bank = Bank::new();
        let id = bank.enqueue("c1", None, BankItem::OpenEnded("q".into()), prov(), None, Timestamp(1));
        assert!(matches!(bank.selectable(&id), Err(VettingError::NotSelectable(_))));
        bank.record_verdict(&id, &ta(), Decision::Reject, None, Timestamp(2))
            .unwrap();
        assert!(matches!(bank.selectable(&id), Err(VettingError::NotSelectable(_))));
        assert!(bank.query(&BankFilter::approved()).is_empty());
    }

    #[test]
    fn query_filters_and_orders() {
        let mut bank = Bank::new();
        assert!(bank.query(&BankFilter::default()).is_empty());
        for (i, d) in [3u8, 7, 9].into_iter().enumerate() {
            let id = bank.enqueue(
                "c1",
                None,
                BankItem::OpenEnded(format!("q{i}")),
                prov(),
                None,
                Timestamp(0),
            );
            bank.record_verdict(&id, &ta(), Decision::Approve, Some(d), Timestamp(10))
                .unwrap();
        }
        bank.enqueue(
            "c1",
            None,
            BankItem::OpenEnded("pending".into()),
            prov(),
            None,
            Timestamp(5),
        );
        let band = BankFilter {
            band: Some(DifficultyBand::new(6.0, 10.0)),
            ..Default::default()
        };
        let ids: Vec<&str> = bank.query(&band).iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["b2", "b3"]);
        let pending = BankFilter {
            status: Some(EntryStatus::Pending),
            ..Default::default()
        };
        assert_eq!(bank.query(&pending).len(), 1);
        let all: Vec<&str> = bank
            .query(&BankFilter::approved())
            .iter()
            .map(|e| e.id.as_str())
            .collect();
        assert_eq!(all, vec!["b1", "b2", "b3"]);
    }

    #[test]
    fn performance_updates_difficulty() {
        let mut bank = Bank::new();
        let id = bank.enqueue("c1", None, BankItem::OpenEnded("q".into()), prov(), None, Timestamp(0));
        bank.record_verdict(&id, &ta(), Decision::Approve, Some(5), Timestamp(1))
            .unwrap();
        assert_eq!(bank.record_performance(&id, "s1", 0.5), Some(5.125));
        assert_eq!(bank.get(&id).unwrap().performance.len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn similarity_symmetric_and_bounded(a in "[a-zA-Z ,.]{0,40}", b in "[a-zA-Z ,.]{0,40}") {
                let ab = token_jaccard(&a, &b);
                prop_assert_eq!(ab, token_jaccard(&b, &a));
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(token_jaccard(&a, &a), 1.0);
            }

            #[test]
            fn update_monotone_and_in_range(d in 1.0f64..=10.0, a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0) {
                let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
                let from_lo = update_difficulty(d, lo);
                let from_hi = update_difficulty(d, hi);
                prop_assert!(from_lo >= from_hi);
                prop_assert!((1.0..=10.0).contains(&from_lo));
            }
        }
    }
}
