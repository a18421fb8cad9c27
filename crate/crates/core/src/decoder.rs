//! Decoding as receding-horizon control over whole chat sessions.
//!
//! [`lmpc_rollouts_step`] samples several complete continuations of the
//! session, keeps the ones that end in a terminal token, and returns the
//! first robot action of the one that finishes in the fewest turns.
//! [`lmpc_skip_step`] draws one sample and returns its first action.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{predicted_turns, SessionModel};
use crate::session::{detokenize_code, is_special, TokenSeq, EOS_FAILURE, EOS_SUCCESS, NEWLINE, ROBOT};
use crate::util::{derive_seed, rng_from_seed, Rng};

pub const DEFAULT_ROLLOUTS: usize = 8;
pub const DEFAULT_MAX_TOKENS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Success,
    Failure,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSample {
    pub continuation: TokenSeq,
    pub terminated: bool,
    pub terminal: Terminal,
    pub predicted_turns: usize,
    pub token_count: usize,
    pub sample_index: usize,
}

impl RolloutSample {
    pub fn from_continuation(continuation: TokenSeq, sample_index: usize) -> Self {
        let terminal = match continuation.last().map(String::as_str) {
            Some(EOS_SUCCESS) => Terminal::Success,
            Some(EOS_FAILURE) => Terminal::Failure,
            _ => Terminal::None,
        };
        Self {
            terminated: terminal != Terminal::None,
            terminal,
            predicted_turns: predicted_turns(&continuation),
            token_count: continuation.len(),
            sample_index,
            continuation,
        }
    }

    /// Ordering key among terminated samples.
    pub fn selection_key(&self) -> (usize, usize, usize) {
        (self.predicted_turns, self.token_count, self.sample_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeDiagnostics {
    pub samples: Vec<RolloutSample>,
    pub chosen_index: usize,
    pub fallback_used: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("sample {sample_index} has no complete robot code span")]
    NoRobotSpan { sample_index: usize },
    #[error("temperature must be positive")]
    InvalidTemperature,
    #[error("at least one rollout is required")]
    NoSamples,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DecoderMode {
    Rollouts { k: usize },
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub mode: DecoderMode,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Drop rollouts that end in a predicted failure before selection.
    pub filter_failures: bool,
}

impl DecoderConfig {
    pub fn rollouts(temperature: f64) -> Self {
        Self {
            mode: DecoderMode::Rollouts { k: DEFAULT_ROLLOUTS },
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
            filter_failures: false,
        }
    }

    pub fn skip(temperature: f64) -> Self {
        Self { mode: DecoderMode::Skip, ..Self::rollouts(temperature) }
    }

    /// One decoding step; diagnostics are present for rollouts mode only.
    pub fn step(
        &self,
        model: &dyn SessionModel,
        prefix: &[String],
        rng: &mut Rng,
    ) -> Result<(String, Option<DecodeDiagnostics>), DecodeError> {
        match self.mode {
            DecoderMode::Rollouts { k } => {
                let (code, d) = if self.filter_failures {
                    lmpc_rollouts_step_filtered(model, prefix, k, self.temperature, self.max_tokens, rng)?
                } else {
                    lmpc_rollouts_step(model, prefix, k, self.temperature, self.max_tokens, rng)?
                };
                Ok((code, Some(d)))
            }
            DecoderMode::Skip => {
                Ok((lmpc_skip_step(model, prefix, self.temperature, self.max_tokens, rng)?, None))
            }
        }
    }
}

/// Draws `k` rollouts, each from its own stream split off a seed taken
/// from `rng`. The result does not depend on thread scheduling.
pub fn draw_samples(
    model: &dyn SessionModel,
    prefix: &[String],
    k: usize,
    temperature: f64,
    max_tokens: usize,
    rng: &mut Rng,
) -> Vec<RolloutSample> {
    let call_seed: u64 = rng.random();
    (0..k)
        .into_par_iter()
        .map(|i| {
            let mut r = rng_from_seed(derive_seed(call_seed, i as u64));
            RolloutSample::from_continuation(model.sample_rollout(prefix, temperature, max_tokens, &mut r), i)
        })
        .collect()
}

/// Code between the first ROBOT marker and the next structural token,
/// normally TURN_END.
pub fn first_robot_span(continuation: &[String]) -> Option<String> {
    let start = continuation.iter().position(|t| t == ROBOT)? + 1;
    let len = continuation[start..].iter().position(|t| t != NEWLINE && is_special(t))?;
    Some(detokenize_code(&continuation[start..start + len]))
}

pub fn filter_predicted_failures(samples: &[RolloutSample]) -> Vec<RolloutSample> {
    samples.iter().filter(|s| s.terminal != Terminal::Failure).cloned().collect()
}

/// Picks among `candidates`: the terminated minimum by selection key, or a
/// uniform draw when nothing terminated. Returns the position within
/// `candidates` and whether the fallback was used.
fn select(candidates: &[&RolloutSample], rng: &mut Rng) -> (usize, bool) {
    let best = candidates
        .iter()
        .enumerate()
        .filter(|(_, s)| s.terminated)
        .min_by_key(|(_, s)| s.selection_key())
        .map(|(i, _)| i);
    match best {
        Some(i) => (i, false),
        None => (rng.random_range(0..candidates.len()), true),
    }
}

fn finish(samples: Vec<RolloutSample>, chosen_index: usize, fallback_used: bool) -> Result<(String, DecodeDiagnostics), DecodeError> {
    let code = first_robot_span(&samples[chosen_index].continuation)
        .ok_or(DecodeError::NoRobotSpan { sample_index: chosen_index })?;
    Ok((code, DecodeDiagnostics { samples, chosen_index, fallback_used }))
}

fn check(k: usize, temperature: f64) -> Result<(), DecodeError> {
    if k == 0 {
        return Err(DecodeError::NoSamples);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DecodeError::InvalidTemperature);
    }
    Ok(())
}

pub fn lmpc_rollouts_step(
    model: &dyn SessionModel,
    prefix: &[String],
    k: usize,
    temperature: f64,
    max_tokens: usize,
    rng: &mut Rng,
) -> Result<(String, DecodeDiagnostics), DecodeError> {
    check(k, temperature)?;
    let samples = draw_samples(model, prefix, k, temperature, max_tokens, rng);
    let refs: Vec<&RolloutSample> = samples.iter().collect();
    let (chosen, fallback) = select(&refs, rng);
    finish(samples, chosen, fallback)
}

/// Rollouts search for models trained on failures too: samples ending in a
/// predicted failure are ignored. If every sample predicts failure the
/// uniform fallback draws from all of them.
pub fn lmpc_rollouts_step_filtered(
    model: &dyn SessionModel,
    prefix: &[String],
    k: usize,
    temperature: f64,
    max_tokens: usize,
    rng: &mut Rng,
) -> Result<(String, DecodeDiagnostics), DecodeError> {
    check(k, temperature)?;
    let samples = draw_samples(model, prefix, k, temperature, max_tokens, rng);
    let kept: Vec<&RolloutSample> = samples.iter().filter(|s| s.terminal != Terminal::Failure).collect();
    if kept.is_empty() {
        let chosen = rng.random_range(0..samples.len());
        return finish(samples, chosen, true);
    }
    let (pos, fallback) = select(&kept, rng);
    let chosen = kept[pos].sample_index;
    finish(samples, chosen, fallback)
}

pub fn lmpc_skip_step(
    model: &dyn SessionModel,
    prefix: &[String],
    temperature: f64,
    max_tokens: usize,
    rng: &mut Rng,
) -> Result<String, DecodeError> {
    check(1, temperature)?;
    let samples = draw_samples(model, prefix, 1, temperature, max_tokens, rng);
    first_robot_span(&samples[0].continuation).ok_or(DecodeError::NoRobotSpan { sample_index: 0 })
}
