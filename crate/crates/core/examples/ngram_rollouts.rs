//! Trains the n-gram session model on the built-in base corpus and samples
//! a few continuations of a fresh session prefix.

use lmpc::experiment::base_corpus;
use lmpc::model::{NGramModel, SessionModel};
use lmpc::session::{serialize_prefix, TOP_USER};
use lmpc::task::system_prompt;
use lmpc::util::rng_from_seed;
use lmpc::world::Layout;

fn main() {
    let corpus = base_corpus().expect("base corpus");
    let m = NGramModel::train(&corpus, 4, 0.1).expect("train");
    println!("vocab {} tokens, {} contexts", m.vocab().len(), m.num_contexts());
    println!("mean token log-prob on its corpus: {:.3}", m.mean_token_logprob(&corpus));

    let prefix = serialize_prefix(&system_prompt(&Layout::pusher()), TOP_USER, &[], "push the blue disc to purple");
    let mut rng = rng_from_seed(1);
    for i in 0..3 {
        let c = m.sample_rollout(&prefix, 0.7, 200, &mut rng);
        println!("rollout {i} ({} tokens): {}", c.len(), c.join(" "));
    }
}
