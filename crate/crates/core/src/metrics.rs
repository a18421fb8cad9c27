//! Teachability metrics over labeled sessions, correlation, task-level
//! comparison, failure-mode and feedback-trait classification, and CSV
//! reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_and_compile, API_FUNCTIONS};
use crate::session::{looks_numeric, tokenize, tokenize_code, ChatSession, Outcome, Rating, MAX_TURNS};
use crate::teacher::KIND_WORDS;
use crate::world::Layout;

/// An exact ratio. A zero denominator means the value is undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn value(&self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }

    /// Compares two defined rates exactly.
    pub fn cmp_exact(&self, other: &Rate) -> Option<std::cmp::Ordering> {
        if self.den == 0 || other.den == 0 {
            return None;
        }
        Some((self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128)))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("NA"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("session `{0}` is not labeled")]
    UnlabeledSession(String),
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points")]
    TooFew,
    #[error("an input has zero variance")]
    DegenerateVariance,
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub sessions: u64,
    pub success_rate: Rate,
    /// Mean turns of successful sessions, as total turns over successes.
    pub num_chat_turns: Rate,
    /// Good ratings among rated turns after the first.
    pub good_rating_rate: Rate,
    pub successful_tasks_rate: Rate,
    pub one_turn_success: Rate,
    pub multi_turn_success: Rate,
}

impl MetricsSummary {
    /// `(name, value)` pairs in report order.
    pub fn rows(&self) -> [(&'static str, Rate); 6] {
        [
            ("success_rate", self.success_rate),
            ("num_chat_turns", self.num_chat_turns),
            ("good_rating_rate", self.good_rating_rate),
            ("successful_tasks_rate", self.successful_tasks_rate),
            ("one_turn_success", self.one_turn_success),
            ("multi_turn_success", self.multi_turn_success),
        ]
    }
}

fn check_labeled<'a>(sessions: impl IntoIterator<Item = &'a ChatSession>) -> Result<(), MetricsError> {
    for s in sessions {
        if !s.is_labeled() {
            return Err(MetricsError::UnlabeledSession(s.session_id.clone()));
        }
    }
    Ok(())
}

pub fn summary_metrics(sessions: &[ChatSession]) -> Result<MetricsSummary, MetricsError> {
    check_labeled(sessions)?;
    let n = sessions.len() as u64;
    let succ: Vec<&ChatSession> = sessions.iter().filter(|s| s.outcome == Outcome::Success).collect();
    let one = succ.iter().filter(|s| s.turns.len() == 1).count() as u64;
    let turns: u64 = succ.iter().map(|s| s.turns.len() as u64).sum();
    let (mut good, mut rated) = (0u64, 0u64);
    for s in sessions {
        for t in s.turns.iter().skip(1) {
            match t.rating {
                Rating::Good => {
                    good += 1;
                    rated += 1;
                }
                Rating::Bad => rated += 1,
                Rating::Unrated => {}
            }
        }
    }
    let tasks: BTreeSet<&str> = sessions.iter().map(|s| s.task_id.as_str()).collect();
    let solved: BTreeSet<&str> = succ.iter().map(|s| s.task_id.as_str()).collect();
    Ok(MetricsSummary {
        sessions: n,
        success_rate: Rate::new(succ.len() as u64, n),
        num_chat_turns: Rate::new(turns, succ.len() as u64),
        good_rating_rate: Rate::new(good, rated),
        successful_tasks_rate: Rate::new(solved.len() as u64, tasks.len() as u64),
        one_turn_success: Rate::new(one, n),
        multi_turn_success: Rate::new(succ.len() as u64 - one, n),
    })
}

/// Fraction of sessions that succeeded within `n` turns, for n = 1..=7.
pub fn teachability_curve(sessions: &[ChatSession]) -> Result<Vec<(usize, Rate)>, MetricsError> {
    check_labeled(sessions)?;
    let total = sessions.len() as u64;
    Ok((1..=MAX_TURNS)
        .map(|n| {
            let k = sessions.iter().filter(|s| s.outcome == Outcome::Success && s.turns.len() <= n).count();
            (n, Rate::new(k as u64, total))
        })
        .collect())
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-task `(success rate, good rating rate, mean turns of successes)`.
pub fn per_task_rates(sessions: &[ChatSession]) -> BTreeMap<String, (Rate, Rate, Rate)> {
    let mut by_task: BTreeMap<String, Vec<ChatSession>> = BTreeMap::new();
    for s in sessions.iter().filter(|s| s.is_labeled()) {
        by_task.entry(s.task_id.clone()).or_default().push(s.clone());
    }
    by_task
        .into_iter()
        .map(|(t, ss)| {
            let m = summary_metrics(&ss).expect("filtered to labeled sessions");
            (t, (m.success_rate, m.good_rating_rate, m.num_chat_turns))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Better,
    Same,
    Worse,
}

/// Verdict of model B against model A on each task both were taught.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLevel {
    pub per_task: BTreeMap<String, Verdict>,
}

impl TaskLevel {
    pub fn tasks_with(&self, v: Verdict) -> BTreeSet<&str> {
        self.per_task.iter().filter(|(_, x)| **x == v).map(|(t, _)| t.as_str()).collect()
    }
}

pub fn task_level_analysis(a: &[ChatSession], b: &[ChatSession]) -> TaskLevel {
    let ra = per_task_rates(a);
    let rb = per_task_rates(b);
    let per_task = ra
        .iter()
        .filter_map(|(t, (sa, _, _))| {
            let (sb, _, _) = rb.get(t)?;
            let v = match sb.cmp_exact(sa)? {
                std::cmp::Ordering::Greater => Verdict::Better,
                std::cmp::Ordering::Equal => Verdict::Same,
                std::cmp::Ordering::Less => Verdict::Worse,
            };
            Some((t.clone(), v))
        })
        .collect();
    TaskLevel { per_task }
}

/// Intersection over union of the tasks two comparisons put in the same
/// category; `None` when neither has any.
pub fn category_iou(x: &TaskLevel, y: &TaskLevel, v: Verdict) -> Option<f64> {
    let a = x.tasks_with(v);
    let b = y.tasks_with(v);
    let union = a.union(&b).count();
    (union > 0).then(|| a.intersection(&b).count() as f64 / union as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    InvalidCode,
    RepeatedCode,
    NonResponsive,
    IncompleteCode,
}

fn multiset(code: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in tokenize_code(code).iter() {
        *m.entry(t.clone()).or_default() += 1;
    }
    m
}

pub fn classify_failure_mode(s: &ChatSession) -> BTreeSet<FailureMode> {
    let mut out = BTreeSet::new();
    let layout = Layout::builtin(&s.embodiment_id);
    for (i, t) in s.turns.iter().enumerate() {
        match layout.as_ref().map(|l| parse_and_compile(&t.robot_code, l)) {
            Some(Ok((_, segs))) => {
                if segs.iter().all(|g| g.terms.is_empty()) {
                    out.insert(FailureMode::IncompleteCode);
                }
            }
            _ => {
                out.insert(FailureMode::InvalidCode);
            }
        }
        if s.turns[..i].iter().any(|p| p.robot_code == t.robot_code) {
            out.insert(FailureMode::RepeatedCode);
        }
        if i > 0 && s.turns[i - 1].rating == Rating::Bad && multiset(&s.turns[i - 1].robot_code) == multiset(&t.robot_code)
        {
            out.insert(FailureMode::NonResponsive);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    Quantitative,
    Code,
    Detailed,
    Kind,
}

pub const DETAILED_MIN_TOKENS: usize = 12;

pub fn classify_traits(msg: &str) -> BTreeSet<Trait> {
    let toks = tokenize(msg);
    let mut out = BTreeSet::new();
    if toks.iter().any(|t| looks_numeric(t)) {
        out.insert(Trait::Quantitative);
    }
    if toks.iter().any(|t| API_FUNCTIONS.contains(&t.as_str())) {
        out.insert(Trait::Code);
    }
    if toks.len() >= DETAILED_MIN_TOKENS {
        out.insert(Trait::Detailed);
    }
    if toks.iter().any(|t| KIND_WORDS.contains(&t.as_str())) {
        out.insert(Trait::Kind);
    }
    out
}

/// Metrics for one (model, split) group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupReport {
    pub model: String,
    pub split: String,
    pub summary: MetricsSummary,
    pub curve: Vec<(usize, Rate)>,
}

pub fn group_report(model: &str, split: &str, sessions: &[ChatSession]) -> Result<GroupReport, MetricsError> {
    Ok(GroupReport {
        model: model.to_owned(),
        split: split.to_owned(),
        summary: summary_metrics(sessions)?,
        curve: teachability_curve(sessions)?,
    })
}

/// One row per (model, split, metric).
pub fn write_metrics_csv(groups: &[GroupReport], out: impl Write) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(["model", "split", "metric", "value", "numerator", "denominator"]).map_err(err)?;
    for g in groups {
        for (name, r) in g.summary.rows() {
            w.write_record([&g.model, &g.split, name, &r.to_string(), &r.num.to_string(), &r.den.to_string()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// One row per (model, split, n).
pub fn write_curve_csv(groups: &[GroupReport], out: impl Write) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(["model", "split", "n", "fraction"]).map_err(err)?;
    for g in groups {
        for (n, r) in &g.curve {
            w.write_record([&g.model, &g.split, &n.to_string(), &r.to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Series description for plotting teachability curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<PlotSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub label: String,
    pub x: Vec<usize>,
    pub y: Vec<Option<f64>>,
}

pub fn curve_plot_spec(groups: &[GroupReport]) -> PlotSpec {
    PlotSpec {
        title: "teachability".into(),
        x_label: "chat turns".into(),
        y_label: "fraction of sessions successful".into(),
        series: groups
            .iter()
            .map(|g| PlotSeries {
                label: format!("{} ({})", g.model, g.split),
                x: g.curve.iter().map(|(n, _)| *n).collect(),
                y: g.curve.iter().map(|(_, r)| r.value()).collect(),
            })
            .collect(),
    }
}
