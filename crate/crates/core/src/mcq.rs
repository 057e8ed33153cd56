//! Plain-text multiple-choice parsing and canonical rendering.
//!
//! Accepted input looks like typical chat-model output:
//!
//! ```text
//! What is the output of the Boolean expression: NOT (A AND B)?
//!
//! A) A AND B
//! B) NOT A OR NOT B
//! C) A OR B
//! D) None of the above
//!
//! (Note: The correct answer is B) NOT A OR NOT B)
//! ```
//!
//! Stem lines come first, then option lines `X) text` or `X. text` with
//! labels running from `A`, then an optional `(Note: ...)` naming the key.
//! Parsing never fails hard; problems are reported through [`ParseReport`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{normalize_line, Label, LabelSet, McqDraft, McqOption, McqQuestion, QuestionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseFailure {
    NoStem,
    NoOptions,
    BadLabels,
    NoAnswerKey,
    DuplicateOption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub question: Option<McqQuestion>,
    pub warnings: Vec<String>,
    pub failure: Option<ParseFailure>,
}

impl ParseReport {
    fn fail(failure: ParseFailure, warnings: Vec<String>) -> Self {
        ParseReport {
            question: None,
            warnings,
            failure: Some(failure),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.question.is_some()
    }

    pub fn into_result(self) -> Result<McqQuestion, ParseFailure> {
        match (self.question, self.failure) {
            (Some(q), _) => Ok(q),
            (None, Some(f)) => Err(f),
            (None, None) => Err(ParseFailure::NoStem),
        }
    }
}

/// Splits `A) text` / `A. text` into label and text.
fn option_line(line: &str) -> Option<(Label, &str)> {
    let mut chars = line.char_indices();
    let (_, c) = chars.next()?;
    if !c.is_ascii_uppercase() {
        return None;
    }
    let label = Label::new(c)?;
    let (_, punct) = chars.next()?;
    if punct != ')' && punct != '.' {
        return None;
    }
    let rest = &line[2..];
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let text = rest.trim();
    (!text.is_empty()).then_some((label, text))
}

fn is_note_line(line: &str) -> bool {
    line.starts_with('(') && line.get(..6).is_some_and(|p| p.eq_ignore_ascii_case("(note:"))
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// Locates "correct answer(s) is|are" and returns the text after it.
fn after_answer_phrase(s: &str) -> Option<&str> {
    let lower = s.to_ascii_lowercase();
    let at = lower.find("correct answer")?;
    let mut rest = &s[at + "correct answer".len()..];
    if let Some(r) = strip_prefix_ci(rest, "s") {
        rest = r;
    }
    let rest = rest.trim_start();
    let rest = strip_prefix_ci(rest, "is").or_else(|| strip_prefix_ci(rest, "are"))?;
    if !rest.is_empty() && !rest.starts_with(|c: char| c.is_whitespace() || c == ':') {
        return None;
    }
    Some(rest.trim_start_matches(':').trim_start())
}

enum KeyScan {
    Found(LabelSet),
    Empty,
    Unknown(Label),
}

/// Reads a label list such as `B) A AND NOT B and C) NOT A OR B`.
///
/// After each label, the option's own text is consumed when it follows, so
/// parentheses inside option text are never mistaken for labels.
fn scan_labels(mut s: &str, options: &[McqOption]) -> KeyScan {
    let mut key = LabelSet::new();
    loop {
        s = s.trim_start();
        if let Some(r) = strip_prefix_ci(s, "options ").or_else(|| strip_prefix_ci(s, "option ")) {
            s = r.trim_start();
        }
        let Some(c) = s.chars().next() else { break };
        let Some(label) = c.is_ascii_uppercase().then(|| Label::new(c)).flatten() else {
            break;
        };
        let after = &s[1..];
        let delimited = after
            .chars()
            .next()
            .is_none_or(|n| n.is_whitespace() || matches!(n, ')' | '.' | ':' | ',' | ';'));
        if !delimited {
            break;
        }
        let Some(opt) = options.get(label.index()) else {
            return KeyScan::Unknown(label);
        };
        key.insert(label);
        s = after.strip_prefix([')', '.', ':']).unwrap_or(after).trim_start();
        if let Some(r) = strip_prefix_ci(s, &opt.text) {
            s = r;
        }
        s = s.trim_start();
        let sep = s
            .strip_prefix([',', ';', '&'])
            .map(str::trim_start)
            .map(|r| strip_prefix_ci(r, "and ").unwrap_or(r))
            .or_else(|| strip_prefix_ci(s, "and "))
            .or_else(|| strip_prefix_ci(s, "or "));
        match sep {
            Some(r) => s = r,
            None => break,
        }
    }
    if key.is_empty() {
        KeyScan::Empty
    } else {
        KeyScan::Found(key)
    }
}

fn question_id(stem: &str, options: &[McqOption]) -> String {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(stem.as_bytes());
    for o in options {
        hasher.update(&[0, o.label.as_char() as u8]);
        hasher.update(o.text.as_bytes());
    }
    format!("q{:08x}", hasher.finalize())
}

#[derive(PartialEq)]
enum Section {
    Stem,
    Options,
    Trailing,
    AfterNote,
}

/// Parses one multiple-choice question. Total: every input yields a report.
pub fn parse_mcq(text: &str, kind: QuestionKind) -> ParseReport {
    let mut warnings = Vec::new();
    let mut stem_lines: Vec<&str> = Vec::new();
    let mut raw_options: Vec<(Label, &str)> = Vec::new();
    let mut note: Option<&str> = None;
    let mut trailing: Vec<&str> = Vec::new();
    let mut section = Section::Stem;
    let mut pending_blank = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            pending_blank = true;
            continue;
        }
        let blank_before = std::mem::take(&mut pending_blank);
        match section {
            Section::Stem => {
                if let Some(opt) = option_line(line) {
                    section = Section::Options;
                    raw_options.push(opt);
                } else {
                    stem_lines.push(line);
                }
            }
            Section::Options => {
                if let Some(opt) = option_line(line) {
                    if blank_before {
                        warnings.push(format!("line {lineno}: blank line inside option block"));
                    }
                    raw_options.push(opt);
                } else if is_note_line(line) {
                    note = Some(line);
                    section = Section::AfterNote;
                } else {
                    trailing.push(line);
                    section = Section::Trailing;
                    warnings.push(format!("line {lineno}: trailing text after options"));
                }
            }
            Section::Trailing => {
                if is_note_line(line) && note.is_none() {
                    note = Some(line);
                    section = Section::AfterNote;
                } else if option_line(line).is_some() {
                    warnings.push(format!("line {lineno}: option-like line after option block ignored"));
                } else {
                    trailing.push(line);
                }
            }
            Section::AfterNote => {
                warnings.push(format!("line {lineno}: trailing text after answer note"));
            }
        }
    }

    let stem = stem_lines
        .iter()
        .map(|l| normalize_line(l))
        .collect::<Vec<_>>()
        .join("\n");
    if stem.is_empty() {
        return ParseReport::fail(ParseFailure::NoStem, warnings);
    }
    if raw_options.len() < 2 {
        return ParseReport::fail(ParseFailure::NoOptions, warnings);
    }

    let mut seen = BTreeSet::new();
    for (position, (label, _)) in raw_options.iter().enumerate() {
        if !seen.insert(*label) {
            return ParseReport::fail(ParseFailure::DuplicateOption, warnings);
        }
        if label.index() != position {
            return ParseReport::fail(ParseFailure::BadLabels, warnings);
        }
    }
    let options: Vec<McqOption> = raw_options
        .iter()
        .map(|(label, text)| McqOption {
            label: *label,
            text: normalize_line(text),
        })
        .collect();

    let mut texts = BTreeSet::new();
    for o in &options {
        if !texts.insert(o.text.to_lowercase()) {
            warnings.push(format!("option {} repeats the text of an earlier option", o.label));
        }
    }

    let note_body = note.map(|n| {
        let inner = &n[1..];
        let inner = inner.strip_suffix(')').unwrap_or(inner);
        normalize_line(inner["note:".len()..].trim())
    });

    let scanned = match &note_body {
        Some(body) => match after_answer_phrase(body) {
            Some(rest) => scan_labels(rest, &options),
            None => KeyScan::Empty,
        },
        None => {
            let joined = normalize_line(&trailing.join(" "));
            let found = after_answer_phrase(&joined).map(|rest| scan_labels(rest, &options));
            if let Some(KeyScan::Found(_)) = found {
                warnings.push("answer key taken from trailing text".to_string());
            }
            found.unwrap_or(KeyScan::Empty)
        }
    };

    let answer_key = match scanned {
        KeyScan::Found(key) => key,
        KeyScan::Unknown(label) => {
            warnings.push(format!("answer key names {label}, which is not an option"));
            return ParseReport::fail(ParseFailure::BadLabels, warnings);
        }
        KeyScan::Empty if kind.is_quiz() || note_body.is_some() => {
            return ParseReport::fail(ParseFailure::NoAnswerKey, warnings)
        }
        KeyScan::Empty => options.iter().map(|o| o.label).collect(),
    };

    let degenerate = kind.is_quiz() && answer_key.len() == options.len();
    if degenerate {
        warnings.push("every option is marked correct; question flagged degenerate".to_string());
    }

    let draft = McqDraft {
        id: question_id(&stem, &options),
        stem,
        options,
        answer_key,
        note: note_body,
        kind,
        degenerate,
    };
    match McqQuestion::try_from(draft) {
        Ok(q) => ParseReport {
            question: Some(q),
            warnings,
            failure: None,
        },
        Err(e) => {
            warnings.push(e.to_string());
            ParseReport::fail(ParseFailure::BadLabels, warnings)
        }
    }
}

/// The note line naming the key, e.g. `(Note: The correct answers are B) x and C) y)`.
pub fn answer_note(question: &McqQuestion) -> String {
    let parts: Vec<String> = question
        .answer_key()
        .iter()
        .map(|l| format!("{l}) {}", question.option_text(*l).unwrap_or_default()))
        .collect();
    let joined = match parts.split_last() {
        Some((last, [])) => last.clone(),
        Some((last, rest)) => format!("{} and {last}", rest.join(", ")),
        None => String::new(),
    };
    if parts.len() == 1 {
        format!("(Note: The correct answer is {joined})")
    } else {
        format!("(Note: The correct answers are {joined})")
    }
}

/// Canonical text: stem, blank line, `A) ...` lines, blank line, answer note.
pub fn render_mcq(question: &McqQuestion) -> String {
    let mut out = String::new();
    out.push_str(question.stem());
    out.push_str("\n\n");
    for o in question.options() {
        out.push_str(&format!("{}) {}\n", o.label, o.text));
    }
    out.push('\n');
    out.push_str(&answer_note(question));
    out.push('\n');
    out
}
