//! One simulated teaching session between a reference teacher and the
//! scripted bootstrap robot.

use lmpc::bootstrap::BootstrapPolicy;
use lmpc::task::{Split, TaskRegistry};
use lmpc::teacher::{reference_population, run_session, SessionLimits};

fn main() {
    let teachers = reference_population(0);
    let tasks = TaskRegistry::builtin().split(Split::Train);
    let inst = tasks[2].instantiate(11);
    println!("task {}: {}", inst.task.id, inst.instruction());
    let rec = run_session(&teachers[5], &BootstrapPolicy::default(), &inst, &SessionLimits::default(), "demo", 11);
    for (i, t) in rec.session.turns.iter().enumerate() {
        println!("[{i}] {}: {}", rec.session.user_id, t.human_text);
        println!("    rating {:?}", t.rating);
        for line in t.robot_code.lines() {
            println!("    | {line}");
        }
    }
    println!("outcome {:?}, ground truth success {}", rec.session.outcome, rec.ground_truth_success);
}
