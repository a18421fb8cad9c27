//! Parses reward code with a wait condition, prints it canonically and
//! evaluates each segment's cost on the default world.

use std::sync::Arc;

use lmpc::dsl::{eval_cost, parse_and_compile, print_program};
use lmpc::world::{Layout, WorldState};

const CODE: &str = "\
# hand the red disc over
reach(obj='red', weight=0.5)
min_l2_dist(obj1='red', obj2='green', weight=1.0)
def red_past_green(): return get_obj_pos(obj='red')[0] >= get_obj_pos(obj='green')[0] - 0.1
wait_until_condition(red_past_green)
reach(obj='red', weight=0.0)
set_target_pos(obj='blue', (0.2, -0.3))";

fn main() {
    let layout = Arc::new(Layout::pusher());
    let (program, segments) = match parse_and_compile(CODE, &layout) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    println!("{}", print_program(&program));
    let w = WorldState::default_for(layout);
    for seg in &segments {
        println!("segment {}: {} terms, cost {:.4}", seg.segment_index, seg.terms.len(), eval_cost(seg, &w).unwrap());
    }
}
