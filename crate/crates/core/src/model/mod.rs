//! Session models: anything that can continue a serialized chat session.

mod external;
mod ngram;
mod oracle;

pub use external::{CompletionParams, EndpointError, ExternalModel, RetryPolicy, TextEndpoint};
pub use external::{parse_transcript, render_transcript};
pub use ngram::{NGramError, NGramModel, DEFAULT_ALPHA, DEFAULT_ORDER};
pub use oracle::{OracleEntry, OracleError, OracleModel, MAX_ORACLE_ENTRIES};

use crate::session::{TokenSeq, USER};
use crate::util::Rng;

pub trait SessionModel: Send + Sync {
    fn supports_training(&self) -> bool {
        false
    }

    /// Token set the model can emit, when it is finite and known.
    fn vocabulary(&self) -> Option<&[String]> {
        None
    }

    /// Samples a continuation of `prefix`. The prefix itself is not part of
    /// the result. Sampling stops after a terminal token or `max_tokens`.
    fn sample_rollout(
        &self,
        prefix: &[String],
        temperature: f64,
        max_tokens: usize,
        rng: &mut Rng,
    ) -> TokenSeq;
}

impl<M: SessionModel + ?Sized> SessionModel for std::sync::Arc<M> {
    fn supports_training(&self) -> bool {
        (**self).supports_training()
    }

    fn vocabulary(&self) -> Option<&[String]> {
        (**self).vocabulary()
    }

    fn sample_rollout(&self, prefix: &[String], temperature: f64, max_tokens: usize, rng: &mut Rng) -> TokenSeq {
        (**self).sample_rollout(prefix, temperature, max_tokens, rng)
    }
}

/// Turns a continuation would take: future USER blocks plus the one being
/// completed.
pub fn predicted_turns(continuation: &[String]) -> usize {
    continuation.iter().filter(|t| *t == USER).count() + 1
}
