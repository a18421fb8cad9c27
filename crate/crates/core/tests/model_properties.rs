use proptest::prelude::*;
use statrs::statistics::Statistics;

use lmpc::decoder::{lmpc_rollouts_step, lmpc_skip_step};
use lmpc::metrics::pearson;
use lmpc::model::{NGramModel, OracleModel, SessionModel};
use lmpc::session::{EOS_FAILURE, EOS_SUCCESS, ROBOT, TURN_END, USER};
use lmpc::util::rng_from_seed;

const WORDS: [&str; 6] = ["a", "b", "c", "d", "reach", "red"];

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..30).prop_map(|v| v.into_iter().map(String::from).collect())
}

fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(sentence(), 1..8)
}

/// Smoothed probability recounted straight from the corpus.
fn recount(corpus: &[Vec<String>], order: usize, alpha: f64, vocab: usize, ctx: &[String], next: &str) -> f64 {
    let k = order - 1;
    if ctx.len() < k {
        return 1.0 / vocab as f64;
    }
    let ctx = &ctx[ctx.len() - k..];
    let (mut hit, mut total) = (0u64, 0u64);
    for s in corpus {
        for w in s.windows(order) {
            if &w[..k] == ctx {
                total += 1;
                hit += u64::from(w[k] == next);
            }
        }
    }
    if total == 0 {
        return 1.0 / vocab as f64;
    }
    (hit as f64 + alpha) / (total as f64 + alpha * vocab as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn next_token_distribution_sums_to_one(c in corpus(), order in 2usize..5, alpha in 0.01f64..2.0, pick in any::<prop::sample::Index>()) {
        let m = NGramModel::train(&c, order, alpha).unwrap();
        let s = &c[pick.index(c.len())];
        for end in 0..=s.len() {
            let total: f64 = m.vocab().iter().map(|v| m.prob(&s[..end], v)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "sum {}", total);
        }
    }

    #[test]
    fn probabilities_match_recounted_corpus(c in corpus(), order in 2usize..5, alpha in 0.01f64..2.0, pick in any::<prop::sample::Index>()) {
        let m = NGramModel::train(&c, order, alpha).unwrap();
        let s = &c[pick.index(c.len())];
        let v = m.vocab().len();
        for end in 0..s.len() {
            for w in WORDS {
                let got = m.prob(&s[..end], w);
                let want = if m.vocab().iter().any(|t| t == w) { recount(&c, order, alpha, v, &s[..end], w) } else { 0.0 };
                prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
            }
        }
    }

    #[test]
    fn training_beats_uniform_on_its_own_corpus(c in corpus(), order in 2usize..5) {
        let m = NGramModel::train(&c, order, 0.1).unwrap();
        let scored = c.iter().any(|s| s.len() >= order);
        prop_assume!(scored);
        let uniform = -(m.vocab().len() as f64).ln();
        prop_assert!(m.mean_token_logprob(&c) > uniform);
    }

    #[test]
    fn sampling_is_seed_deterministic(c in corpus(), seed in any::<u64>(), t in 0.1f64..2.0) {
        let m = NGramModel::train(&c, 3, 0.1).unwrap();
        let prefix = &c[0];
        let a = m.sample_rollout(prefix, t, 40, &mut rng_from_seed(seed));
        let b = m.sample_rollout(prefix, t, 40, &mut rng_from_seed(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn text_format_round_trips(c in corpus(), order in 2usize..5, alpha in 0.01f64..2.0) {
        let m = NGramModel::train(&c, order, alpha).unwrap();
        let back = NGramModel::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(back, m);
    }
}

fn continuation() -> impl Strategy<Value = Vec<String>> {
    let body = prop::collection::vec(prop::sample::select(vec!["x", "y", "z", USER, ROBOT, TURN_END, "h"]), 0..10);
    let end = prop::sample::select(vec![Some(EOS_SUCCESS), Some(EOS_FAILURE), None]);
    (prop::sample::select(vec!["p", "q", "r"]), body, end).prop_map(|(code, body, end)| {
        let mut v: Vec<String> = [ROBOT, code, TURN_END].iter().map(|s| s.to_string()).collect();
        v.extend(body.into_iter().map(String::from));
        v.extend(end.map(String::from));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn skip_equals_rollouts_with_one_sample(conts in prop::collection::vec(continuation(), 1..6), seed in any::<u64>()) {
        let m = OracleModel::uniform(conts.into_iter().map(Into::into).collect()).unwrap();
        let prefix: Vec<String> = vec![USER.into(), "go".into()];
        let skip = lmpc_skip_step(&m, &prefix, 1.0, 64, &mut rng_from_seed(seed)).ok();
        let roll = lmpc_rollouts_step(&m, &prefix, 1, 1.0, 64, &mut rng_from_seed(seed)).ok().map(|(c, _)| c);
        prop_assert_eq!(skip, roll);
    }

    #[test]
    fn pearson_matches_sample_moments(xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let sx = x.iter().std_dev();
        let sy = y.iter().std_dev();
        prop_assume!(sx > 1e-6 && sy > 1e-6);
        let want = x.iter().covariance(y.iter()) / (sx * sy);
        let got = pearson(&x, &y).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }
}
