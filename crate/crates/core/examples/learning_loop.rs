//! Collect with the bootstrap robot, train the session model on successful
//! sessions, then evaluate it blind against skip decoding on held-out tasks.
//!
//! Usage: learning_loop [train_sessions] [eval_sessions]

use std::sync::Arc;

use lmpc::bootstrap::BootstrapPolicy;
use lmpc::config::{DecoderKind, Objective, RunConfig};
use lmpc::experiment::{collect, reports, train, CollectParams, ModelPool, TrainParams};
use lmpc::task::{Split, TaskRegistry};
use lmpc::teacher::{reference_population, DecodingPolicy, SessionLimits};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("a session count"));
    let n_train = args.next().unwrap_or(120);
    let n_eval = args.next().unwrap_or(60);
    let cfg = RunConfig::default();
    let reg = TaskRegistry::builtin();
    let teachers = reference_population(cfg.seed);
    let params = |sessions, prefix: &str| CollectParams {
        sessions,
        seed: cfg.seed,
        id_prefix: prefix.into(),
        limits: SessionLimits::default(),
        workers: 1,
    };

    let boot = ModelPool::new().with("bootstrap", Arc::new(BootstrapPolicy::default()));
    let data = collect(&boot, &reg.split(Split::Train), &teachers, &params(n_train, "train")).unwrap().dataset;
    let tp = TrainParams::from_config(&cfg);
    let (rollouts, summary) = train(&data, &tp).unwrap();
    let (skip, _) = train(&data, &TrainParams { objective: Objective::Skip, ..tp }).unwrap();
    println!("trained on {} of {} sessions, {} tokens", summary.selected_sessions, summary.labeled_sessions, summary.tokens);

    let pool = ModelPool::new()
        .with("rollouts", Arc::new(DecodingPolicy { model: rollouts, decoder: cfg.decoder(DecoderKind::Rollouts) }))
        .with("skip", Arc::new(DecodingPolicy { model: skip, decoder: cfg.decoder(DecoderKind::Skip) }));
    let eval = collect(&pool, &reg.split(Split::Test), &teachers, &params(n_eval, "eval")).unwrap().dataset;
    for g in reports(&eval, "test").unwrap() {
        println!("{:9} success {} turns {} good {}", g.model, g.summary.success_rate, g.summary.num_chat_turns, g.summary.good_rating_rate);
    }
}
