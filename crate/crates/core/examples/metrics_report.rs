//! Summary metrics, teachability curve and CSV output for a small set of
//! labeled sessions.

use lmpc::experiment::{collect, reports, CollectParams, ModelPool};
use lmpc::metrics::{write_curve_csv, write_metrics_csv};
use lmpc::task::{Split, TaskRegistry};
use lmpc::teacher::{reference_population, SessionLimits};
use std::sync::Arc;

fn main() {
    let pool = ModelPool::new().with("bootstrap", Arc::new(lmpc::bootstrap::BootstrapPolicy::default()));
    let tasks = TaskRegistry::builtin().split(Split::Train);
    let p = CollectParams { sessions: 40, seed: 2, id_prefix: "m".into(), limits: SessionLimits::default(), workers: 1 };
    let c = collect(&pool, &tasks, &reference_population(2), &p).unwrap();
    let groups = reports(&c.dataset, "train").unwrap();
    for g in &groups {
        for (name, rate) in g.summary.rows() {
            println!("{:10} {name:22} {rate}", g.model);
        }
    }
    let mut out = std::io::stdout();
    write_metrics_csv(&groups, &mut out).unwrap();
    write_curve_csv(&groups, &mut out).unwrap();
}
