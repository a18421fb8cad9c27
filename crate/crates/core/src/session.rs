//! Chat sessions and their token-level representation.
//!
//! A session is serialized as
//!
//! ```text
//! <bos> <uid:ID> prompt... (<user> human... <robot> code... <turn_end>)+ [<eos:success>|<eos:failure>]
//! ```
//!
//! Human text is lowercased by the tokenizer; code keeps its case and its
//! line breaks (as `<nl>` tokens). Text that has already been through
//! [`normalize_human_text`] / [`normalize_code`] survives a serialize and
//! deserialize cycle byte for byte.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOS: &str = "<bos>";
pub const EOS_SUCCESS: &str = "<eos:success>";
pub const EOS_FAILURE: &str = "<eos:failure>";
pub const USER: &str = "<user>";
pub const ROBOT: &str = "<robot>";
pub const TURN_END: &str = "<turn_end>";
pub const NEWLINE: &str = "<nl>";
pub const UID_PREFIX: &str = "<uid:";
/// The shared conditioning id given to top users.
pub const TOP_USER: &str = "top-user";

/// Fixed markers that every vocabulary contains.
pub const SPECIAL_TOKENS: [&str; 7] = [BOS, EOS_SUCCESS, EOS_FAILURE, USER, ROBOT, TURN_END, NEWLINE];

/// Default cap on chat turns per session.
pub const MAX_TURNS: usize = 7;

pub fn uid_token(uid: &str) -> String {
    format!("{UID_PREFIX}{uid}>")
}

pub fn is_uid_token(tok: &str) -> bool {
    tok.starts_with(UID_PREFIX) && tok.ends_with('>') && tok.len() > UID_PREFIX.len() + 1
}

/// True for reserved markers; the tokenizer never produces these.
pub fn is_special(tok: &str) -> bool {
    SPECIAL_TOKENS.contains(&tok) || is_uid_token(tok)
}

pub fn is_terminal(tok: &str) -> bool {
    tok == EOS_SUCCESS || tok == EOS_FAILURE
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn push(&mut self, tok: impl Into<String>) {
        self.0.push(tok.into());
    }

    pub fn extend_from(&mut self, other: &[String]) {
        self.0.extend(other.iter().cloned());
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl AsRef<[String]> for TokenSeq {
    fn as_ref(&self) -> &[String] {
        &self.0
    }
}

impl From<Vec<String>> for TokenSeq {
    fn from(v: Vec<String>) -> Self {
        Self(v)
    }
}

impl<'a> From<Vec<&'a str>> for TokenSeq {
    fn from(v: Vec<&'a str>) -> Self {
        Self(v.into_iter().map(str::to_owned).collect())
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

// ---------------------------------------------------------------------------
// Tokenizer

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Human,
    Code,
}

const TWO_CHAR_OPS: [&str; 4] = [">=", "<=", "==", "!="];

fn lex(text: &str, mode: Mode) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            if mode == Mode::Code {
                out.push(NEWLINE.to_owned());
            }
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '\'' || c == '"' {
            // quoted literal, kept whole; stops at the closing quote or end of line
            let mut j = i + 1;
            while j < chars.len() && chars[j] != c && chars[j] != '\n' {
                j += 1;
            }
            if j < chars.len() && chars[j] == c {
                j += 1;
            }
            out.push(chars[i..j].iter().collect());
            i = j;
        } else if c.is_alphanumeric() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let all_digits = chars[i..j].iter().all(|d| d.is_ascii_digit());
            if all_digits
                && j + 1 < chars.len()
                && chars[j] == '.'
                && chars[j + 1].is_ascii_digit()
            {
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            out.push(chars[i..j].iter().collect());
            i = j;
        } else {
            if i + 1 < chars.len() {
                let pair: String = chars[i..i + 2].iter().collect();
                if TWO_CHAR_OPS.contains(&pair.as_str()) {
                    out.push(pair);
                    i += 2;
                    continue;
                }
            }
            out.push(c.to_string());
            i += 1;
        }
    }
    if mode == Mode::Human {
        for t in &mut out {
            *t = t.to_lowercase();
        }
    }
    out
}

/// Tokenizes human text: lowercased, whitespace and punctuation split,
/// numeric literals and quoted strings kept whole.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(lex(text, Mode::Human))
}

/// Tokenizes robot code: case preserved, line breaks become `<nl>`.
pub fn tokenize_code(code: &str) -> TokenSeq {
    TokenSeq(lex(code, Mode::Code))
}

fn is_number(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_digit())
        && tok.chars().all(|c| c.is_ascii_digit() || c == '.')
}

fn is_word(tok: &str) -> bool {
    tok.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_')
}

fn is_operator(tok: &str) -> bool {
    matches!(
        tok,
        "+" | "-" | "*" | "/" | "<" | ">" | "<=" | ">=" | "==" | "!="
    )
}

/// Whether writing `tok` straight after `prev` would lex as something
/// other than the two tokens, as with `=` `=` becoming `==`.
fn would_merge(prev: &str, tok: &str, mode: Mode) -> bool {
    lex(&format!("{prev}{tok}"), mode) != [prev, tok]
}

const NO_SPACE_BEFORE: [&str; 8] = [",", ".", "!", "?", ";", ":", ")", "]"];

/// Joins human-text tokens back into canonical text.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for tok in tokens {
        let tok = tok.as_str();
        if let Some(p) = prev {
            let glue = NO_SPACE_BEFORE.contains(&tok) || p == "(" || p == "[";
            if !glue || would_merge(p, tok, Mode::Human) {
                out.push(' ');
            }
        }
        out.push_str(tok);
        prev = Some(tok);
    }
    out
}

/// Joins code tokens back into canonical code text.
///
/// The spacing rules match the reward-code printer, so printed programs are
/// fixed points of `detokenize_code(tokenize_code(_))`.
pub fn detokenize_code(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    let mut depth: i32 = 0;
    let mut in_comment = false;
    let mut prev_unary = false;
    for tok in tokens {
        let tok = tok.as_str();
        if tok == NEWLINE {
            out.push('\n');
            prev = None;
            in_comment = false;
            depth = 0;
            prev_unary = false;
            continue;
        }
        if in_comment {
            if let Some(p) = prev {
                let glue = NO_SPACE_BEFORE.contains(&tok) || p == "(" || p == "[";
                if !glue || would_merge(p, tok, Mode::Code) {
                    out.push(' ');
                }
            }
            out.push_str(tok);
            prev = Some(tok);
            continue;
        }
        let unary = tok == "-"
            && match prev {
                None => true,
                Some(p) => {
                    matches!(p, "(" | "[" | "," | "=" | ":" | "return") || is_operator(p)
                }
            };
        if let Some(p) = prev {
            let space = if prev_unary {
                false
            } else if tok == "(" || tok == "[" {
                !(is_word(p) && p != "return" || p == ")" || p == "]")
            } else if matches!(tok, ")" | "]" | "," | ":") {
                false
            } else if p == "(" || p == "[" {
                false
            } else if tok == "=" || p == "=" {
                depth == 0
            } else {
                true
            };
            if space || would_merge(p, tok, Mode::Code) {
                out.push(' ');
            }
        }
        match tok {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            "#" => in_comment = true,
            _ => {}
        }
        out.push_str(tok);
        prev_unary = unary;
        prev = Some(tok);
    }
    out
}

/// Canonical form of human text (lowercase, normalized spacing).
pub fn normalize_human_text(text: &str) -> String {
    detokenize(&tokenize(text))
}

/// Canonical form of code text.
pub fn normalize_code(code: &str) -> String {
    detokenize_code(&tokenize_code(code))
}

pub fn looks_numeric(tok: &str) -> bool {
    is_number(tok)
}

// ---------------------------------------------------------------------------
// Sessions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Open,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Good,
    Bad,
    #[default]
    Unrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionFlag {
    Augmented,
    Filtered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub human_text: String,
    pub robot_code: String,
    #[serde(default)]
    pub rating: Rating,
    pub turn_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub system_prompt: String,
    pub user_id: String,
    /// Id used in the serialized prefix; `None` means the real `user_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_uid: Option<String>,
    pub task_id: String,
    pub embodiment_id: String,
    pub turns: Vec<ChatTurn>,
    pub outcome: Outcome,
    #[serde(default)]
    pub flags: BTreeSet<SessionFlag>,
}

impl ChatSession {
    pub fn new(
        session_id: impl Into<String>,
        system_prompt: impl Into<String>,
        user_id: impl Into<String>,
        task_id: impl Into<String>,
        embodiment_id: impl Into<String>,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            system_prompt: system_prompt.into(),
            user_id: user_id.into(),
            condition_uid: None,
            task_id: task_id.into(),
            embodiment_id: embodiment_id.into(),
            turns: Vec::new(),
            outcome: Outcome::Open,
            flags: BTreeSet::new(),
        }
    }

    pub fn push_turn(&mut self, human_text: impl Into<String>, robot_code: impl Into<String>, rating: Rating) {
        let turn_index = self.turns.len();
        self.turns.push(ChatTurn {
            human_text: human_text.into(),
            robot_code: robot_code.into(),
            rating,
            turn_index,
        });
    }

    pub fn conditioning_uid(&self) -> &str {
        self.condition_uid.as_deref().unwrap_or(&self.user_id)
    }

    pub fn is_labeled(&self) -> bool {
        self.outcome != Outcome::Open
    }

    /// Checks the structural invariants of a session.
    pub fn validate(&self) -> Result<(), SessionError> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.turn_index != i {
                return Err(SessionError::Invalid(format!(
                    "turn {i} carries index {}",
                    t.turn_index
                )));
            }
            if t.human_text.trim().is_empty() {
                return Err(SessionError::Invalid(format!("turn {i} has empty human text")));
            }
        }
        if self.is_labeled() && self.turns.len() > MAX_TURNS {
            return Err(SessionError::Invalid(format!(
                "labeled session has {} turns (max {MAX_TURNS})",
                self.turns.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("session has no turns")]
    EmptySession,
    #[error("malformed token sequence at position {position}: {message}")]
    MalformedSequence { position: usize, message: String },
    #[error("invalid session: {0}")]
    Invalid(String),
}

fn malformed(position: usize, message: impl Into<String>) -> SessionError {
    SessionError::MalformedSequence {
        position,
        message: message.into(),
    }
}

fn push_header(out: &mut TokenSeq, system_prompt: &str, condition_uid: &str) {
    out.push(BOS);
    out.push(uid_token(condition_uid));
    out.extend_from(&tokenize_code(system_prompt));
}

fn push_turn_tokens(out: &mut TokenSeq, human: &str, code: &str) {
    out.push(USER);
    out.extend_from(&tokenize(human));
    out.push(ROBOT);
    out.extend_from(&tokenize_code(code));
    out.push(TURN_END);
}

/// Serializes a full session. Ratings are metadata and never become tokens.
pub fn serialize_session(s: &ChatSession, condition_uid: &str) -> Result<TokenSeq, SessionError> {
    if s.turns.is_empty() {
        return Err(SessionError::EmptySession);
    }
    let mut out = TokenSeq::new();
    push_header(&mut out, &s.system_prompt, condition_uid);
    for t in &s.turns {
        push_turn_tokens(&mut out, &t.human_text, &t.robot_code);
    }
    match s.outcome {
        Outcome::Success => out.push(EOS_SUCCESS),
        Outcome::Failure => out.push(EOS_FAILURE),
        Outcome::Open => {}
    }
    Ok(out)
}

/// Serializes the decoding prefix: completed turns followed by the pending
/// human message, ending right where a robot action is due.
pub fn serialize_prefix(
    system_prompt: &str,
    condition_uid: &str,
    turns: &[ChatTurn],
    pending_human: &str,
) -> TokenSeq {
    let mut out = TokenSeq::new();
    push_header(&mut out, system_prompt, condition_uid);
    for t in turns {
        push_turn_tokens(&mut out, &t.human_text, &t.robot_code);
    }
    out.push(USER);
    out.extend_from(&tokenize(pending_human));
    out
}

/// Parsed form of a decoding prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPrefix {
    pub condition_uid: String,
    pub system_prompt: String,
    pub turns: Vec<ChatTurn>,
    pub pending_human: String,
}

fn parse_header(t: &[String]) -> Result<(String, usize), SessionError> {
    match t.first() {
        Some(tok) if tok == BOS => {}
        _ => return Err(malformed(0, "expected <bos>")),
    }
    let uid = match t.get(1) {
        Some(tok) if is_uid_token(tok) => tok[UID_PREFIX.len()..tok.len() - 1].to_owned(),
        _ => return Err(malformed(1, "expected uid token")),
    };
    Ok((uid, 2))
}

fn find_from(t: &[String], start: usize, marker: &str) -> Option<usize> {
    t[start..].iter().position(|x| x == marker).map(|p| p + start)
}

fn check_plain(t: &[String], range: std::ops::Range<usize>) -> Result<(), SessionError> {
    for i in range {
        if is_special(&t[i]) && t[i] != NEWLINE {
            return Err(malformed(i, format!("unexpected marker {}", t[i])));
        }
    }
    Ok(())
}

fn check_human(t: &[String], range: std::ops::Range<usize>) -> Result<(), SessionError> {
    for i in range {
        if is_special(&t[i]) {
            return Err(malformed(i, format!("unexpected marker {} in human text", t[i])));
        }
    }
    Ok(())
}

/// Parses `(<user> h <robot> c <turn_end>)*` starting at `pos`. Returns the
/// turns and the position after the last complete block.
fn parse_turns(t: &[String], mut pos: usize) -> Result<(Vec<ChatTurn>, usize), SessionError> {
    let mut turns = Vec::new();
    while pos < t.len() && t[pos] == USER {
        let robot = match find_from(t, pos + 1, ROBOT) {
            Some(r) => r,
            None => break,
        };
        if let Some(u) = find_from(t, pos + 1, USER) {
            if u < robot {
                return Err(malformed(u, "missing <robot> marker"));
            }
        }
        check_human(t, pos + 1..robot)?;
        let end = find_from(t, robot + 1, TURN_END)
            .ok_or_else(|| malformed(t.len(), "missing <turn_end> marker"))?;
        check_plain(t, robot + 1..end)?;
        let human_text = detokenize(&t[pos + 1..robot]);
        if human_text.is_empty() {
            return Err(malformed(pos + 1, "empty human text"));
        }
        turns.push(ChatTurn {
            human_text,
            robot_code: detokenize_code(&t[robot + 1..end]),
            rating: Rating::Unrated,
            turn_index: turns.len(),
        });
        pos = end + 1;
    }
    Ok((turns, pos))
}

/// Inverse of [`serialize_session`]. A sequence without a terminal token
/// deserializes as an open session.
pub fn deserialize_session(t: &[String]) -> Result<ChatSession, SessionError> {
    let (uid, start) = parse_header(t)?;
    let user_pos = find_from(t, start, USER).ok_or_else(|| malformed(t.len(), "no <user> block"))?;
    check_plain(t, start..user_pos)?;
    let system_prompt = detokenize_code(&t[start..user_pos]);
    let (turns, pos) = parse_turns(t, user_pos)?;
    if turns.is_empty() {
        return Err(malformed(user_pos, "missing <robot> marker"));
    }
    let outcome = match t.get(pos).map(String::as_str) {
        None => Outcome::Open,
        Some(EOS_SUCCESS) => Outcome::Success,
        Some(EOS_FAILURE) => Outcome::Failure,
        Some(USER) => return Err(malformed(pos, "missing <robot> marker")),
        Some(other) => return Err(malformed(pos, format!("unexpected token {other}"))),
    };
    if outcome != Outcome::Open && pos + 1 != t.len() {
        return Err(malformed(pos + 1, "tokens after terminal marker"));
    }
    let mut s = ChatSession::new("", system_prompt, uid.clone(), "", "");
    if uid == TOP_USER {
        s.condition_uid = Some(uid);
    }
    s.turns = turns;
    s.outcome = outcome;
    Ok(s)
}

/// Parses a decoding prefix produced by [`serialize_prefix`].
pub fn parse_prefix(t: &[String]) -> Result<ParsedPrefix, SessionError> {
    let (uid, start) = parse_header(t)?;
    let user_pos = find_from(t, start, USER).ok_or_else(|| malformed(t.len(), "no <user> block"))?;
    check_plain(t, start..user_pos)?;
    let system_prompt = detokenize_code(&t[start..user_pos]);
    let (turns, pos) = parse_turns(t, user_pos)?;
    if pos >= t.len() || t[pos] != USER {
        return Err(malformed(pos, "prefix must end with a pending <user> block"));
    }
    check_human(t, pos + 1..t.len())?;
    Ok(ParsedPrefix {
        condition_uid: uid,
        system_prompt,
        turns,
        pending_human: detokenize(&t[pos + 1..]),
    })
}
