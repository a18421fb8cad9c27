//! Rollouts decoding over a hand-written continuation table. Any terminal
//! counts, so the short failing sample beats both successes; the filtered
//! variant drops predicted failures first and picks the fastest success.

use lmpc::decoder::{lmpc_rollouts_step, lmpc_rollouts_step_filtered, lmpc_skip_step};
use lmpc::model::{OracleEntry, OracleModel};
use lmpc::session::{EOS_FAILURE, EOS_SUCCESS, ROBOT, TURN_END, USER};
use lmpc::util::rng_from_seed;

fn seq(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn main() {
    let model = OracleModel::new(vec![
        OracleEntry::new(seq(&[ROBOT, "slow", TURN_END, USER, "more", ROBOT, "x", TURN_END, EOS_SUCCESS]), 0.5),
        OracleEntry::new(seq(&[ROBOT, "fast", TURN_END, EOS_SUCCESS]), 0.2),
        OracleEntry::new(seq(&[ROBOT, "bad", TURN_END, EOS_FAILURE]), 0.3),
    ])
    .expect("valid table");
    let prefix = seq(&[USER, "push", "red"]);

    let (code, diag) = lmpc_rollouts_step(&model, &prefix, 8, 1.0, 64, &mut rng_from_seed(5)).unwrap();
    println!("rollouts picked `{code}` (sample {}, fallback {})", diag.chosen_index, diag.fallback_used);
    for s in &diag.samples {
        println!("  sample {}: key {:?} terminal {:?}", s.sample_index, s.selection_key(), s.terminal);
    }
    let (code, _) = lmpc_rollouts_step_filtered(&model, &prefix, 8, 1.0, 64, &mut rng_from_seed(5)).unwrap();
    println!("filtered rollouts picked `{code}`");
    let code = lmpc_skip_step(&model, &prefix, 1.0, 64, &mut rng_from_seed(5)).unwrap();
    println!("skip decoding picked `{code}`");
}
