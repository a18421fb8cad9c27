//! Teaching datasets: line-delimited persistence, success filtering,
//! top-user scoring, uid conditioning and instruction augmentation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{ChatSession, ChatTurn, Outcome, Rating, SessionFlag, TOP_USER};
use crate::util::Rng;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOP_PERCENTILE: f64 = 75.0;
pub const DEFAULT_AUGMENT_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub seed: u64,
    /// Logical collection order, not wall-clock time.
    pub timestamp: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeachingDataset {
    pub sessions: Vec<ChatSession>,
    pub provenance: BTreeMap<String, Provenance>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate session id `{0}`")]
    DuplicateId(String),
    #[error("session `{0}` has no provenance")]
    MissingProvenance(String),
    #[error("no sessions to score")]
    NoData,
}

impl TeachingDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn push(&mut self, s: ChatSession, p: Provenance) -> Result<(), DataError> {
        if self.provenance.contains_key(&s.session_id) {
            return Err(DataError::DuplicateId(s.session_id));
        }
        self.provenance.insert(s.session_id.clone(), p);
        self.sessions.push(s);
        Ok(())
    }

    pub fn get(&self, session_id: &str) -> Option<&ChatSession> {
        self.sessions.iter().find(|s| s.session_id == session_id)
    }

    /// Checks id uniqueness and that every session has provenance.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for s in &self.sessions {
            if !seen.insert(&s.session_id) {
                return Err(DataError::DuplicateId(s.session_id.clone()));
            }
            if !self.provenance.contains_key(&s.session_id) {
                return Err(DataError::MissingProvenance(s.session_id.clone()));
            }
        }
        Ok(())
    }

    fn retain(&self, keep: impl Fn(&ChatSession) -> bool) -> Self {
        let sessions: Vec<ChatSession> = self.sessions.iter().filter(|s| keep(s)).cloned().collect();
        let provenance = sessions
            .iter()
            .filter_map(|s| self.provenance.get(&s.session_id).map(|p| (s.session_id.clone(), p.clone())))
            .collect();
        Self { sessions, provenance }
    }

    pub fn sort_by_id(&mut self) {
        self.sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    }
}

pub fn filter_successes(d: &TeachingDataset) -> TeachingDataset {
    d.retain(|s| s.outcome == Outcome::Success)
}

// ---------------------------------------------------------------- files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TurnRecord {
    human: String,
    code: String,
    rating: Rating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition_uid: Option<String>,
    task_id: String,
    embodiment_id: String,
    model_id: String,
    system_prompt: String,
    turns: Vec<TurnRecord>,
    outcome: Outcome,
    flags: BTreeSet<SessionFlag>,
    seed: u64,
    timestamp: u64,
}

/// One retrieval entry as stored next to the sessions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RagEntryRecord {
    pub instruction: String,
    pub code: String,
    pub embodiment_id: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Session(Box<SessionRecord>),
    RagEntry(RagEntryRecord),
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u64,
}

fn to_record(s: &ChatSession, p: &Provenance) -> SessionRecord {
    SessionRecord {
        session_id: s.session_id.clone(),
        user_id: s.user_id.clone(),
        condition_uid: s.condition_uid.clone(),
        task_id: s.task_id.clone(),
        embodiment_id: s.embodiment_id.clone(),
        model_id: p.model_id.clone(),
        system_prompt: s.system_prompt.clone(),
        turns: s
            .turns
            .iter()
            .map(|t| TurnRecord { human: t.human_text.clone(), code: t.robot_code.clone(), rating: t.rating })
            .collect(),
        outcome: s.outcome,
        flags: s.flags.clone(),
        seed: p.seed,
        timestamp: p.timestamp,
    }
}

fn from_record(r: SessionRecord) -> (ChatSession, Provenance) {
    let s = ChatSession {
        session_id: r.session_id,
        system_prompt: r.system_prompt,
        user_id: r.user_id,
        condition_uid: r.condition_uid,
        task_id: r.task_id,
        embodiment_id: r.embodiment_id,
        turns: r
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| ChatTurn { human_text: t.human, robot_code: t.code, rating: t.rating, turn_index: i })
            .collect(),
        outcome: r.outcome,
        flags: r.flags,
    };
    (s, Provenance { model_id: r.model_id, seed: r.seed, timestamp: r.timestamp })
}

fn header_line() -> String {
    serde_json::to_string(&Header { schema_version: SCHEMA_VERSION as u64 }).expect("header serializes")
}

/// Serializes sessions (and optional retrieval entries) to the
/// line-delimited format.
pub fn dataset_to_string(d: &TeachingDataset, rag: &[RagEntryRecord]) -> Result<String, DataError> {
    d.validate()?;
    let mut out = header_line();
    out.push('\n');
    for s in &d.sessions {
        let line = Line::Session(Box::new(to_record(s, &d.provenance[&s.session_id])));
        out.push_str(&serde_json::to_string(&line).expect("records serialize"));
        out.push('\n');
    }
    for e in rag {
        out.push_str(&serde_json::to_string(&Line::RagEntry(e.clone())).expect("records serialize"));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(d: &TeachingDataset, path: &Path) -> Result<(), DataError> {
    write_container(d, &[], path)
}

pub fn write_container(d: &TeachingDataset, rag: &[RagEntryRecord], path: &Path) -> Result<(), DataError> {
    let text = dataset_to_string(d, rag)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Appends one session record to an existing file, creating it with a
/// header if needed. The record is written with a single call.
pub fn append_session(path: &Path, s: &ChatSession, p: &Provenance) -> Result<(), DataError> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut buf = String::new();
    if fresh {
        buf.push_str(&header_line());
        buf.push('\n');
    }
    buf.push_str(&serde_json::to_string(&Line::Session(Box::new(to_record(s, p)))).expect("records serialize"));
    buf.push('\n');
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn dataset_from_str(text: &str) -> Result<(TeachingDataset, Vec<RagEntryRecord>), DataError> {
    read_lines(text.as_bytes())
}

fn read_lines(r: impl BufRead) -> Result<(TeachingDataset, Vec<RagEntryRecord>), DataError> {
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(DataError::Parse { line: 1, message: "missing header".into() }),
    };
    let h: Header =
        serde_json::from_str(&header).map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?;
    if h.schema_version != SCHEMA_VERSION as u64 {
        return Err(DataError::SchemaVersionMismatch { found: h.schema_version });
    }
    let mut d = TeachingDataset::new();
    let mut rag = Vec::new();
    for (i, l) in lines.enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let line: Line =
            serde_json::from_str(&l).map_err(|e| DataError::Parse { line: i + 2, message: e.to_string() })?;
        match line {
            Line::Session(r) => {
                let (s, p) = from_record(*r);
                d.push(s, p)?;
            }
            Line::RagEntry(e) => rag.push(e),
        }
    }
    Ok((d, rag))
}

pub fn read_dataset(path: &Path) -> Result<TeachingDataset, DataError> {
    Ok(read_container(path)?.0)
}

pub fn read_container(path: &Path) -> Result<(TeachingDataset, Vec<RagEntryRecord>), DataError> {
    let f = std::fs::File::open(path)?;
    read_lines(std::io::BufReader::new(f))
}

// ------------------------------------------------------------ top users

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UserScoreTable {
    /// d(n): mean failure rate of the task over the users who taught it.
    pub difficulty: BTreeMap<String, f64>,
    /// h(k) divided by the number of tasks the user taught.
    pub score: BTreeMap<String, f64>,
    /// h(k) as a plain sum.
    pub score_raw: BTreeMap<String, f64>,
    /// K_n: users per task.
    pub users_per_task: BTreeMap<String, usize>,
    /// N_k: tasks per user.
    pub tasks_per_user: BTreeMap<String, usize>,
    /// Score at the percentile cut.
    pub cut: f64,
    pub top_users: BTreeSet<String>,
}

/// Nearest-rank cut: the value at 1-based rank floor(p·K/100) + 1 of the
/// ascending scores, capped at K.
pub fn percentile_cut(scores: &[f64], percentile: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let rank = ((percentile * k as f64 / 100.0).floor() as usize + 1).clamp(1, k);
    Some(v[rank - 1])
}

/// Per-(task, user) success rates from labeled sessions.
pub fn success_rates(d: &TeachingDataset) -> BTreeMap<(String, String), f64> {
    let mut tally: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for s in d.sessions.iter().filter(|s| s.is_labeled() && !s.flags.contains(&SessionFlag::Augmented)) {
        let e = tally.entry((s.task_id.clone(), s.user_id.clone())).or_default();
        e.1 += 1;
        if s.outcome == Outcome::Success {
            e.0 += 1;
        }
    }
    tally.into_iter().map(|(k, (w, n))| (k, w as f64 / n as f64)).collect()
}

pub fn identify_top_users(d: &TeachingDataset, percentile: f64) -> Result<UserScoreTable, DataError> {
    score_users(&success_rates(d), percentile)
}

/// Scores users from `(task, user) -> success rate`; pairs that are absent
/// were never taught.
pub fn score_users(s: &BTreeMap<(String, String), f64>, percentile: f64) -> Result<UserScoreTable, DataError> {
    if s.is_empty() {
        return Err(DataError::NoData);
    }
    let mut users_per_task: BTreeMap<String, usize> = BTreeMap::new();
    let mut tasks_per_user: BTreeMap<String, usize> = BTreeMap::new();
    let mut task_sum: BTreeMap<String, f64> = BTreeMap::new();
    for ((n, k), rate) in s {
        *users_per_task.entry(n.clone()).or_default() += 1;
        *tasks_per_user.entry(k.clone()).or_default() += 1;
        *task_sum.entry(n.clone()).or_default() += rate;
    }
    let difficulty: BTreeMap<String, f64> =
        task_sum.iter().map(|(n, sum)| (n.clone(), 1.0 - sum / users_per_task[n] as f64)).collect();
    let mut score_raw: BTreeMap<String, f64> = tasks_per_user.keys().map(|k| (k.clone(), 0.0)).collect();
    for ((n, k), rate) in s {
        *score_raw.get_mut(k).expect("user seen") += difficulty[n] * rate;
    }
    let score: BTreeMap<String, f64> =
        score_raw.iter().map(|(k, h)| (k.clone(), h / tasks_per_user[k] as f64)).collect();
    let values: Vec<f64> = score.values().copied().collect();
    let cut = percentile_cut(&values, percentile).expect("non-empty");
    let top_users = score.iter().filter(|(_, h)| **h >= cut).map(|(k, _)| k.clone()).collect();
    Ok(UserScoreTable { difficulty, score, score_raw, users_per_task, tasks_per_user, cut, top_users })
}

/// Relabels sessions of top users with the shared top-user id.
pub fn apply_user_conditioning(d: &TeachingDataset, top: &BTreeSet<String>) -> TeachingDataset {
    let mut out = d.clone();
    for s in &mut out.sessions {
        s.condition_uid = top.contains(&s.user_id).then(|| TOP_USER.to_owned());
    }
    out
}

// --------------------------------------------------------- augmentation

/// Word substitutions that keep the meaning of an instruction.
pub const SYNONYMS: [(&str, &str); 10] = [
    ("push", "shove"),
    ("move", "shift"),
    ("disc", "puck"),
    ("marker", "spot"),
    ("bring", "get"),
    ("please", "kindly"),
    ("wrong", "incorrect"),
    ("nothing", "no motion"),
    ("more", "further"),
    ("again", "once more"),
];

const TRAILERS: [&str; 3] = ["", ".", "!"];

/// One paraphrase of `text`, built from the synonym table, moving a polite
/// opener to the end, and end punctuation.
pub fn paraphrase(text: &str, rng: &mut Rng) -> String {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    for w in words.iter_mut() {
        let (core, tail) = split_trailing_punct(w);
        if let Some((_, to)) = SYNONYMS.iter().find(|(from, _)| *from == core) {
            if rng.random_bool(0.5) {
                *w = format!("{to}{tail}");
            }
        }
    }
    let mut s = words.join(" ");
    for opener in ["please, ", "kindly, "] {
        if let Some(rest) = s.strip_prefix(opener) {
            if rng.random_bool(0.5) {
                s = format!("{}, {}", rest.trim_end_matches(['.', '!']), opener.trim_end_matches([',', ' ']));
            }
            break;
        }
    }
    let s = s.trim_end_matches(['.', '!']).to_owned();
    format!("{s}{}", TRAILERS[rng.random_range(0..TRAILERS.len())])
}

fn split_trailing_punct(w: &str) -> (&str, &str) {
    let cut = w.trim_end_matches([',', '.', '!', '?']).len();
    (&w[..cut], &w[cut..])
}

/// Adds `k` variants of every session with paraphrased human text. Code,
/// ratings and outcomes are copied unchanged.
pub fn augment(d: &TeachingDataset, k: usize, rng: &mut Rng) -> TeachingDataset {
    let mut out = d.clone();
    for s in &d.sessions {
        if s.flags.contains(&SessionFlag::Augmented) {
            continue;
        }
        for j in 0..k {
            let mut v = s.clone();
            v.session_id = format!("{}~aug{}", s.session_id, j + 1);
            for t in &mut v.turns {
                t.human_text = paraphrase(&t.human_text, rng);
            }
            v.flags.insert(SessionFlag::Augmented);
            let p = d.provenance.get(&s.session_id).cloned().unwrap_or(Provenance {
                model_id: String::new(),
                seed: 0,
                timestamp: 0,
            });
            out.provenance.insert(v.session_id.clone(), p);
            out.sessions.push(v);
        }
    }
    out
}
