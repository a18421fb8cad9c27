//! Runs the sampling receding-horizon controller on one reward program and
//! reports how close the disc ends up.

use std::sync::Arc;

use lmpc::controller::{execute_program, PlanParams};
use lmpc::dsl::parse_and_compile;
use lmpc::world::{dist, Layout, WorldState};

fn main() {
    let layout = Arc::new(Layout::pusher());
    let code = "reach(obj='red', weight=0.5)\nmin_l2_dist(obj1='red', obj2='green', weight=1.0)";
    let (_, segs) = parse_and_compile(code, &layout).unwrap();
    let w0 = WorldState::default_for(layout);
    let t = execute_program(&segs, &w0, &PlanParams { seed: 3, ..PlanParams::default() }).unwrap();
    let end = t.final_state();
    let d = dist(end.get("red").unwrap(), end.get("green").unwrap());
    println!("{} steps, {:?}", t.steps(), t.termination);
    println!("red to green: {:.4} (started at {:.4})", d, dist(w0.get("red").unwrap(), w0.get("green").unwrap()));
    for (i, c) in t.cost_series.iter().enumerate().step_by(10) {
        println!("  step {i:3} cost {c:.4}");
    }
}
