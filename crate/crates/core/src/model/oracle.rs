use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{predicted_turns, SessionModel};
use crate::session::{is_terminal, TokenSeq};
use crate::util::Rng;

pub const MAX_ORACLE_ENTRIES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub continuation: TokenSeq,
    pub probability: f64,
    pub terminates: bool,
    pub predicted_turns: usize,
}

impl OracleEntry {
    /// Builds an entry whose tags are derived from the continuation.
    pub fn new(continuation: impl Into<TokenSeq>, probability: f64) -> Self {
        let continuation = continuation.into();
        let terminates = continuation.last().is_some_and(|t| is_terminal(t));
        let predicted_turns = predicted_turns(&continuation);
        Self { continuation, probability, terminates, predicted_turns }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("rollout table is empty")]
    Empty,
    #[error("rollout table has {0} entries (max {MAX_ORACLE_ENTRIES})")]
    TooLarge(usize),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("entry {0} has a negative or non-finite probability")]
    BadProbability(usize),
    #[error("entry {0} has tags inconsistent with its continuation")]
    InconsistentTags(usize),
}

/// A model defined by an explicit, enumerable table of continuations. The
/// table is sampled as-is; temperature has no effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    entries: Vec<OracleEntry>,
}

impl OracleModel {
    pub fn new(entries: Vec<OracleEntry>) -> Result<Self, OracleError> {
        if entries.is_empty() {
            return Err(OracleError::Empty);
        }
        if entries.len() > MAX_ORACLE_ENTRIES {
            return Err(OracleError::TooLarge(entries.len()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.probability >= 0.0 && e.probability.is_finite()) {
                return Err(OracleError::BadProbability(i));
            }
            let derived = OracleEntry::new(e.continuation.clone(), e.probability);
            if derived.terminates != e.terminates || derived.predicted_turns != e.predicted_turns {
                return Err(OracleError::InconsistentTags(i));
            }
        }
        let total: f64 = entries.iter().map(|e| e.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OracleError::NotNormalized(total));
        }
        Ok(Self { entries })
    }

    /// Equal-probability table over the given continuations.
    pub fn uniform(continuations: Vec<TokenSeq>) -> Result<Self, OracleError> {
        let p = 1.0 / continuations.len().max(1) as f64;
        Self::new(continuations.into_iter().map(|c| OracleEntry::new(c, p)).collect())
    }

    /// A single continuation emitted with probability one.
    pub fn single(continuation: impl Into<TokenSeq>) -> Self {
        Self { entries: vec![OracleEntry::new(continuation, 1.0)] }
    }

    pub fn entries(&self) -> &[OracleEntry] {
        &self.entries
    }

    /// Index of the entry the next draw from `rng` selects.
    pub fn draw_index(&self, rng: &mut Rng) -> usize {
        let mut r = rng.random::<f64>();
        for (i, e) in self.entries.iter().enumerate() {
            if r < e.probability {
                return i;
            }
            r -= e.probability;
        }
        // rounding left a sliver; fall back to the last entry with mass
        self.entries.iter().rposition(|e| e.probability > 0.0).unwrap_or(0)
    }
}

impl SessionModel for OracleModel {
    fn sample_rollout(&self, _prefix: &[String], _temperature: f64, max_tokens: usize, rng: &mut Rng) -> TokenSeq {
        let e = &self.entries[self.draw_index(rng)];
        let mut out = TokenSeq::new();
        for t in e.continuation.iter().take(max_tokens) {
            out.push(t.clone());
            if is_terminal(t) {
                break;
            }
        }
        out
    }
}
