//! Shared vocabulary: questions, answer keys, grading and actor identities.
//!
//! Every type here is an immutable value once constructed. Constructors
//! enforce the structural invariants, so a `McqQuestion` that exists is
//! always well formed; deserialization goes through the same checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 8;

/// Option label, a single uppercase letter in `A..=H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(char);

impl Label {
    pub fn new(c: char) -> Option<Label> {
        let c = c.to_ascii_uppercase();
        ('A'..='H').contains(&c).then_some(Label(c))
    }

    pub fn from_index(index: usize) -> Option<Label> {
        if index < MAX_OPTIONS {
            Some(Label((b'A' + index as u8) as char))
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for Label {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Label::new(c).ok_or_else(|| DomainError::BadLabel(s.to_string())),
            _ => Err(DomainError::BadLabel(s.to_string())),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.0.encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type LabelSet = BTreeSet<Label>;

/// Parses labels such as `"B"` or `"B,C"`. Whitespace is ignored.
pub fn parse_label_set(s: &str) -> Result<LabelSet, DomainError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Poll,
    ClickerQuiz,
    JittQuiz,
}

impl QuestionKind {
    pub fn is_quiz(self) -> bool {
        !matches!(self, QuestionKind::Poll)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::Poll => "poll",
            QuestionKind::ClickerQuiz => "clicker_quiz",
            QuestionKind::JittQuiz => "jitt_quiz",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub label: Label,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("not an option label: {0:?}")]
    BadLabel(String),
    #[error("question stem is empty")]
    EmptyStem,
    #[error("expected {MIN_OPTIONS}..={MAX_OPTIONS} options, got {0}")]
    OptionCount(usize),
    #[error("option labels must run consecutively from A; found {found} at position {position}")]
    NonConsecutiveLabels { position: usize, found: Label },
    #[error("option {0} has empty text")]
    EmptyOption(Label),
    #[error("answer key is empty")]
    EmptyKey,
    #[error("answer key names {0}, which is not an option")]
    KeyNotInOptions(Label),
    #[error("a quiz answer key covering every option must be flagged degenerate")]
    UnflaggedFullKey,
    #[error("label {0} is not an option of this question")]
    UnknownLabel(Label),
    #[error("unknown root-question item {0:?}")]
    UnknownItem(String),
    #[error("root question has no items")]
    NoItems,
    #[error("incorrect option {label} of item {item:?} has no hint")]
    MissingHint { item: String, label: Label },
    #[error("duplicate root-question item id {0:?}")]
    DuplicateItem(String),
}

/// Unvalidated question fields; the serde wire shape of [`McqQuestion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqDraft {
    pub id: String,
    pub stem: String,
    pub options: Vec<McqOption>,
    pub answer_key: LabelSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub kind: QuestionKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// A validated multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "McqDraft", into = "McqDraft")]
pub struct McqQuestion {
    id: String,
    stem: String,
    options: Vec<McqOption>,
    answer_key: LabelSet,
    note: Option<String>,
    kind: QuestionKind,
    degenerate: bool,
}

pub(crate) fn normalize_line(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn normalize_block(s: &str) -> String {
    s.lines()
        .map(normalize_line)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

impl TryFrom<McqDraft> for McqQuestion {
    type Error = DomainError;

    fn try_from(draft: McqDraft) -> Result<Self, Self::Error> {
        let stem = normalize_block(&draft.stem);
        if stem.is_empty() {
            return Err(DomainError::EmptyStem);
        }
        let n = draft.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(DomainError::OptionCount(n));
        }
        let mut options = Vec::with_capacity(n);
        for (position, opt) in draft.options.into_iter().enumerate() {
            if Label::from_index(position) != Some(opt.label) {
                return Err(DomainError::NonConsecutiveLabels {
                    position,
                    found: opt.label,
                });
            }
            let text = normalize_line(&opt.text);
            if text.is_empty() {
                return Err(DomainError::EmptyOption(opt.label));
            }
            options.push(McqOption { label: opt.label, text });
        }
        if draft.answer_key.is_empty() {
            return Err(DomainError::EmptyKey);
        }
        if let Some(bad) = draft.answer_key.iter().find(|l| l.index() >= n) {
            return Err(DomainError::KeyNotInOptions(*bad));
        }
        let full = draft.answer_key.len() == n;
        if full && draft.kind.is_quiz() && !draft.degenerate {
            return Err(DomainError::UnflaggedFullKey);
        }
        Ok(McqQuestion {
            id: draft.id,
            stem,
            options,
            answer_key: draft.answer_key,
            note: draft.note.map(|n| normalize_line(&n)).filter(|n| !n.is_empty()),
            kind: draft.kind,
            degenerate: draft.degenerate && full,
        })
    }
}

impl From<McqQuestion> for McqDraft {
    fn from(q: McqQuestion) -> Self {
        McqDraft {
            id: q.id,
            stem: q.stem,
            options: q.options,
            answer_key: q.answer_key,
            note: q.note,
            kind: q.kind,
            degenerate: q.degenerate,
        }
    }
}

impl McqQuestion {
    /// Convenience constructor labelling `options` A, B, C, ... in order.
    pub fn from_texts(
        id: impl Into<String>,
        stem: impl Into<String>,
        options: &[&str],
        answer_key: LabelSet,
        kind: QuestionKind,
    ) -> Result<Self, DomainError> {
        let options = options
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let label = Label::from_index(i).ok_or(DomainError::OptionCount(options.len()))?;
                Ok(McqOption {
                    label,
                    text: (*t).to_string(),
                })
            })
            .collect::<Result<Vec<_>, DomainError>>()?;
        McqDraft {
            id: id.into(),
            stem: stem.into(),
            options,
            answer_key,
            note: None,
            kind,
            degenerate: false,
        }
        .try_into()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn options(&self) -> &[McqOption] {
        &self.options
    }

    pub fn answer_key(&self) -> &LabelSet {
        &self.answer_key
    }

    pub fn note(&self) -> Option<&str> {
        self.note.as_deref()
    }

    pub fn kind(&self) -> QuestionKind {
        self.kind
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.options.iter().map(|o| o.label)
    }

    pub fn has_label(&self, label: Label) -> bool {
        label.index() < self.options.len()
    }

    pub fn option_text(&self, label: Label) -> Option<&str> {
        self.options.get(label.index()).map(|o| o.text.as_str())
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_kind(mut self, kind: QuestionKind) -> Result<Self, DomainError> {
        let mut draft = McqDraft::from(self);
        draft.kind = kind;
        self = draft.try_into()?;
        Ok(self)
    }

    /// Equality on stem, options, key and kind; ignores id and note.
    pub fn same_structure(&self, other: &McqQuestion) -> bool {
        self.stem == other.stem
            && self.options == other.options
            && self.answer_key == other.answer_key
            && self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub correct: bool,
    pub matched: LabelSet,
    pub missing: LabelSet,
    pub spurious: LabelSet,
}

/// Exact-set grading: correct only when `chosen` equals the answer key.
pub fn grade_response(question: &McqQuestion, chosen: &LabelSet) -> Result<Grade, DomainError> {
    if let Some(bad) = chosen.iter().find(|l| !question.has_label(**l)) {
        return Err(DomainError::UnknownLabel(*bad));
    }
    let key = question.answer_key();
    let matched: LabelSet = chosen.intersection(key).copied().collect();
    let missing: LabelSet = key.difference(chosen).copied().collect();
    let spurious: LabelSet = chosen.difference(key).copied().collect();
    Ok(Grade {
        correct: missing.is_empty() && spurious.is_empty(),
        matched,
        missing,
        spurious,
    })
}

/// A problem statement worked through a series of multi-answer items, with a
/// hint attached to every incorrect option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RootQuestion {
    id: String,
    problem_statement: String,
    items: Vec<McqQuestion>,
    hints: BTreeMap<String, BTreeMap<Label, String>>,
}

#[derive(Deserialize)]
struct RootDraft {
    id: String,
    problem_statement: String,
    items: Vec<McqQuestion>,
    hints: BTreeMap<String, BTreeMap<Label, String>>,
}

impl<'de> Deserialize<'de> for RootQuestion {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let d = RootDraft::deserialize(deserializer)?;
        RootQuestion::new(d.id, d.problem_statement, d.items, d.hints).map_err(serde::de::Error::custom)
    }
}

impl RootQuestion {
    pub fn new(
        id: impl Into<String>,
        problem_statement: impl Into<String>,
        items: Vec<McqQuestion>,
        hints: BTreeMap<String, BTreeMap<Label, String>>,
    ) -> Result<Self, DomainError> {
        if items.is_empty() {
            return Err(DomainError::NoItems);
        }
        let mut seen = BTreeSet::new();
        for item in &items {
            if !seen.insert(item.id()) {
                return Err(DomainError::DuplicateItem(item.id().to_string()));
            }
            for label in item.labels().filter(|l| !item.answer_key().contains(l)) {
                let present = hints.get(item.id()).is_some_and(|m| m.contains_key(&label));
                if !present {
                    return Err(DomainError::MissingHint {
                        item: item.id().to_string(),
                        label,
                    });
                }
            }
        }
        if let Some(extra) = hints.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(DomainError::UnknownItem(extra.clone()));
        }
        Ok(RootQuestion {
            id: id.into(),
            problem_statement: problem_statement.into(),
            items,
            hints,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn problem_statement(&self) -> &str {
        &self.problem_statement
    }

    pub fn items(&self) -> &[McqQuestion] {
        &self.items
    }

    pub fn hint(&self, item: &str, label: Label) -> Option<&str> {
        self.hints.get(item)?.get(&label).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RootStep {
    Solved,
    Unsolved { hints: Vec<String> },
}

/// Grades a student's current choices on every item of a root question.
///
/// Items absent from `progress` count as unanswered. Hints are emitted, in
/// item then label order, for each chosen option that is not in the key.
pub fn step_root_question(rq: &RootQuestion, progress: &BTreeMap<String, LabelSet>) -> Result<RootStep, DomainError> {
    if let Some(unknown) = progress.keys().find(|k| rq.items.iter().all(|i| i.id() != k.as_str())) {
        return Err(DomainError::UnknownItem(unknown.clone()));
    }
    let mut solved = true;
    let mut hints = Vec::new();
    for item in &rq.items {
        let Some(chosen) = progress.get(item.id()) else {
            solved = false;
            continue;
        };
        let grade = grade_response(item, chosen)?;
        if !grade.correct {
            solved = false;
            for label in &grade.spurious {
                if let Some(h) = rq.hint(item.id(), *label) {
                    hints.push(h.to_string());
                }
            }
        }
    }
    Ok(if solved {
        RootStep::Solved
    } else {
        RootStep::Unsolved { hints }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Instructor,
    Assistant,
    System,
}

impl Role {
    pub fn can_review(self) -> bool {
        matches!(self, Role::Instructor | Role::Assistant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActorRef {
    id: String,
    role: Role,
}

impl ActorRef {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        ActorRef { id: id.into(), role }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }
}

/// Seconds since the Unix epoch, UTC. Always supplied by an injected clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn plus_secs(self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(s: &str) -> LabelSet {
        parse_label_set(s).unwrap()
    }

    fn quiz1() -> McqQuestion {
        McqQuestion::from_texts(
            "quiz1",
            "What is the output of the Boolean expression: NOT (A AND B)?",
            &["A AND B", "NOT A OR NOT B", "A OR B", "None of the above"],
            keys("B"),
            QuestionKind::ClickerQuiz,
        )
        .unwrap()
    }

    fn poll2() -> McqQuestion {
        McqQuestion::from_texts(
            "poll2",
            "Which of the following Boolean expressions are equivalent to A OR (NOT B)?",
            &["NOT A AND B", "A AND NOT B", "NOT A OR B", "NOT A AND NOT B"],
            keys("B,C"),
            QuestionKind::Poll,
        )
        .unwrap()
    }

    #[test]
    fn single_answer_quiz_graded_correct() {
        let g = grade_response(&quiz1(), &keys("B")).unwrap();
        assert!(g.correct);
        assert_eq!(g.matched, keys("B"));
    }

    #[test]
    fn partial_multi_answer_is_incorrect() {
        let g = grade_response(&poll2(), &keys("B")).unwrap();
        assert!(!g.correct);
        assert_eq!(g.missing, keys("C"));
        assert!(g.spurious.is_empty());
    }

    #[test]
    fn unknown_label_rejected() {
        let q = McqQuestion::from_texts("q", "Q?", &["x", "y"], keys("A"), QuestionKind::Poll).unwrap();
        assert_eq!(
            grade_response(&q, &keys("C")),
            Err(DomainError::UnknownLabel(Label::new('C').unwrap()))
        );
    }

    #[test]
    fn construction_invariants() {
        let one = McqQuestion::from_texts("q", "Q?", &["x"], keys("A"), QuestionKind::Poll);
        assert_eq!(one, Err(DomainError::OptionCount(1)));
        let empty = McqQuestion::from_texts("q", "Q?", &["x", "  "], keys("A"), QuestionKind::Poll);
        assert!(matches!(empty, Err(DomainError::EmptyOption(_))));
        let outside = McqQuestion::from_texts("q", "Q?", &["x", "y"], keys("C"), QuestionKind::Poll);
        assert!(matches!(outside, Err(DomainError::KeyNotInOptions(_))));
        let full_quiz = McqQuestion::from_texts("q", "Q?", &["x", "y"], keys("A,B"), QuestionKind::ClickerQuiz);
        assert_eq!(full_quiz, Err(DomainError::UnflaggedFullKey));
        let full_poll = McqQuestion::from_texts("q", "Q?", &["x", "y"], keys("A,B"), QuestionKind::Poll);
        assert!(full_poll.is_ok());
    }

    #[test]
    fn labels_are_uppercased_and_bounded() {
        assert_eq!(Label::new('b'), Label::new('B'));
        assert!(Label::new('I').is_none());
        assert!("AB".parse::<Label>().is_err());
    }

    #[test]
    fn option_text_is_nfc_normalized() {
        let decomposed = "cafe\u{301}";
        let q = McqQuestion::from_texts("q", "Q?", &[decomposed, "tea"], keys("A"), QuestionKind::Poll).unwrap();
        assert_eq!(q.options()[0].text, "caf\u{e9}");
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let q = poll2();
        let json = serde_json::to_string(&q).unwrap();
        let back: McqQuestion = serde_json::from_str(&json).unwrap();
        assert_eq!(back, q);
        let broken = json.replace("\"answer_key\":[\"B\",\"C\"]", "\"answer_key\":[]");
        assert!(serde_json::from_str::<McqQuestion>(&broken).is_err());
    }

    fn root(key: &str) -> RootQuestion {
        let item = McqQuestion::from_texts(
            "i1",
            "Which numbers divide both 12 and 18?",
            &["2", "5", "3", "7"],
            keys(key),
            QuestionKind::ClickerQuiz,
        )
        .unwrap();
        let mut hints = BTreeMap::new();
        let mut h = BTreeMap::new();
        for l in item.labels().filter(|l| !item.answer_key().contains(l)) {
            h.insert(l, format!("{} does not divide 12", item.option_text(l).unwrap()));
        }
        hints.insert("i1".to_string(), h);
        RootQuestion::new("r1", "gcd(12, 18)", vec![item], hints).unwrap()
    }

    #[test]
    fn root_question_exact_key_solves() {
        let rq = root("A,C");
        let progress = BTreeMap::from([("i1".to_string(), keys("A,C"))]);
        assert_eq!(step_root_question(&rq, &progress).unwrap(), RootStep::Solved);
    }

    #[test]
    fn root_question_wrong_choice_yields_its_hint() {
        let rq = root("A,C");
        let progress = BTreeMap::from([("i1".to_string(), keys("A,B"))]);
        assert_eq!(
            step_root_question(&rq, &progress).unwrap(),
            RootStep::Unsolved {
                hints: vec!["5 does not divide 12".to_string()]
            }
        );
    }

    #[test]
    fn root_question_untouched_item_has_no_hints() {
        let first = root("A,C").items()[0].clone();
        let second = first.clone().with_id("i2");
        let mut hints = BTreeMap::new();
        for item in [&first, &second] {
            let h: BTreeMap<Label, String> = item
                .labels()
                .filter(|l| !item.answer_key().contains(l))
                .map(|l| (l, format!("hint {l}")))
                .collect();
            hints.insert(item.id().to_string(), h);
        }
        let rq = RootQuestion::new("r2", "two parts", vec![first, second], hints).unwrap();
        let progress = BTreeMap::from([("i1".to_string(), keys("A,C"))]);
        assert_eq!(
            step_root_question(&rq, &progress).unwrap(),
            RootStep::Unsolved { hints: vec![] }
        );
    }

    #[test]
    fn root_question_rejects_unknown_item_and_missing_hints() {
        let rq = root("A,C");
        let progress = BTreeMap::from([("nope".to_string(), keys("A"))]);
        assert!(matches!(
            step_root_question(&rq, &progress),
            Err(DomainError::UnknownItem(_))
        ));

        let item = rq.items()[0].clone();
        let err = RootQuestion::new("r", "p", vec![item], BTreeMap::new()).unwrap_err();
        assert!(matches!(err, DomainError::MissingHint { .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn question() -> impl Strategy<Value = McqQuestion> {
            (2usize..=8).prop_flat_map(|n| {
                (Just(n), proptest::collection::btree_set(0..n, 1..n)).prop_map(|(n, key)| {
                    let texts: Vec<String> = (0..n).map(|i| format!("opt{i}")).collect();
                    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                    let key = key.into_iter().map(|i| Label::from_index(i).unwrap()).collect();
                    McqQuestion::from_texts("q", "stem?", &refs, key, QuestionKind::ClickerQuiz).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn correct_implies_exact_key(q in question(), picks in proptest::collection::btree_set(0usize..8, 0..8)) {
                let chosen: LabelSet = picks
                    .into_iter()
                    .filter(|i| *i < q.options().len())
                    .map(|i| Label::from_index(i).unwrap())
                    .collect();
                let g = grade_response(&q, &chosen).unwrap();
                prop_assert_eq!(g.correct, &chosen == q.answer_key());
                prop_assert_eq!(g.correct, g.missing.is_empty() && g.spurious.is_empty());
                prop_assert_eq!(grade_response(&q, &chosen).unwrap(), g);
            }
        }
    }
}
