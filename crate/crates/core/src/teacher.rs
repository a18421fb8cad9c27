//! Scripted teachers: instructions, corrective feedback, turn ratings and
//! session labels, plus the loop that runs a whole teaching session.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::controller::{execute_program, PlanParams, Trajectory};
use crate::decoder::DecoderConfig;
use crate::dsl::parse_and_compile;
use crate::model::SessionModel;
use crate::session::{serialize_prefix, ChatSession, ChatTurn, Outcome, Rating, MAX_TURNS, TOP_USER};
use crate::task::{system_prompt, Goal, TaskInstance, SUCCESS_THRESHOLD};
use crate::util::{derive_seed, rng_from_seed, Rng};
use crate::world::{dist, EntityKind, Point, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherProfile {
    pub user_id: String,
    pub proficiency: f64,
    /// Probability of naming objects and quantities.
    pub feedback_specificity: f64,
    /// Probability of polite phrasing.
    pub kindness: f64,
    pub patience: usize,
    pub seed: u64,
}

impl TeacherProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.patience == 0 || self.patience > MAX_TURNS {
            return Err(format!("patience must be in 1..={MAX_TURNS}"));
        }
        for (name, v) in [
            ("proficiency", self.proficiency),
            ("feedback_specificity", self.feedback_specificity),
            ("kindness", self.kindness),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// The reference population: three strong, six average and three weak
/// teachers.
pub fn reference_population(seed: u64) -> Vec<TeacherProfile> {
    (0..12)
        .map(|i| {
            let (proficiency, feedback_specificity, kindness, patience) = match i {
                0..=2 => (0.95, 0.9, 0.8, 7),
                3..=8 => (0.7, 0.55 + 0.03 * (i - 3) as f64, 0.35, if i % 2 == 0 { 6 } else { 7 }),
                _ => (0.4, 0.2, 0.1, 5),
            };
            TeacherProfile {
                user_id: format!("user-{i:02}"),
                proficiency,
                feedback_specificity,
                kindness,
                patience,
                seed: derive_seed(seed, i as u64),
            }
        })
        .collect()
}

pub const POLITE_PREFIXES: [&str; 4] = ["please, ", "thanks, but ", "nice try, ", "good effort, "];

/// Words the trait classifier treats as polite.
pub const KIND_WORDS: [&str; 8] = ["please", "thanks", "thank", "nice", "good", "great", "sorry", "kindly"];

fn polite(tp: &TeacherProfile, text: String, rng: &mut Rng) -> String {
    if rng.random_bool(tp.kindness) {
        format!("{}{text}", POLITE_PREFIXES[rng.random_range(0..POLITE_PREFIXES.len())])
    } else {
        text
    }
}

/// Vague phrasings per goal kind; `{object}` style slots are filled from
/// the task.
fn vague_variants(g: &Goal) -> &'static [&'static str] {
    match g {
        Goal::ObjectAt { .. } => &[
            "move the {object} one over there",
            "push the {object} disc to the marker",
            "put it on the {marker} spot",
        ],
        Goal::RobotAt { .. } => &["go over there", "move to the marker", "go to {marker}"],
        Goal::ObjectOffset { .. } => &[
            "move the {object} disc a bit {direction}",
            "move the {object} one {distance}",
            "nudge it {direction}",
        ],
        Goal::ObjectsTogether { .. } => &[
            "put them together",
            "push the {object} disc next to the {other} one",
            "bring the discs together",
        ],
    }
}

/// First message of a session.
pub fn initial_instruction(tp: &TeacherProfile, inst: &TaskInstance, rng: &mut Rng) -> String {
    let t = &inst.task;
    let text = if tp.feedback_specificity >= 1.0 || rng.random_bool(tp.feedback_specificity) {
        inst.instruction()
    } else {
        let slots = t.slots();
        let variants = vague_variants(&t.goals[0]);
        let first = crate::task::fill_template(variants[rng.random_range(0..variants.len())], &slots)
            .expect("vague variants use the first goal's slots");
        if t.goals.len() > 1 {
            format!("{first}, then do the next part")
        } else {
            first
        }
    };
    polite(tp, text, rng)
}

/// How a turn's outcome differs from what the teacher wanted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub goal_errors: Vec<f64>,
    /// Some other object moved while the task's objects did not.
    pub wrong_object: bool,
    /// Angle between the entity's motion and the wanted motion, in
    /// radians; zero when the entity did not move.
    pub direction_error: f64,
    pub moved: bool,
    pub invalid_code: bool,
}

impl Discrepancy {
    pub fn total(&self) -> f64 {
        self.goal_errors.iter().sum()
    }
}

const MOVE_EPS: f64 = 0.02;

fn first_open_goal(inst: &TaskInstance, w: &WorldState, threshold: f64) -> usize {
    let errs = inst.goal_errors(w);
    errs.iter().position(|e| *e > threshold).unwrap_or(errs.len().saturating_sub(1))
}

pub fn discrepancy(inst: &TaskInstance, w: &WorldState, invalid_code: bool) -> Discrepancy {
    let w0 = &inst.initial;
    let layout = &w0.layout;
    let moved_by = |i: usize| dist(w0.pos[i], w.pos[i]);
    let task_objects: Vec<usize> =
        inst.task.objects().iter().map(|n| layout.index_of(n).expect("validated")).collect();
    let task_moved = task_objects.iter().any(|i| moved_by(*i) > MOVE_EPS);
    let other_moved = layout.objects().filter(|i| !task_objects.contains(i)).any(|i| moved_by(i) > 0.05);
    let g = first_open_goal(inst, w, SUCCESS_THRESHOLD);
    let t = inst.goal_target(g, w);
    let moved = layout.robots().chain(layout.objects()).any(|i| moved_by(i) > MOVE_EPS);
    let start = w0.pos[t.entity];
    let d = [w.pos[t.entity][0] - start[0], w.pos[t.entity][1] - start[1]];
    let want = [t.target[0] - start[0], t.target[1] - start[1]];
    let direction_error = if dist(d, [0.0, 0.0]) > MOVE_EPS && dist(want, [0.0, 0.0]) > 1e-9 {
        let a = d[1].atan2(d[0]) - want[1].atan2(want[0]);
        a.sin().atan2(a.cos())
    } else {
        0.0
    };
    Discrepancy {
        goal_errors: inst.goal_errors(w),
        wrong_object: !task_moved && other_moved,
        direction_error,
        moved,
        invalid_code,
    }
}

/// Good iff the total error strictly decreased.
pub fn rate_turn(_tp: &TeacherProfile, prev: &Discrepancy, new: &Discrepancy) -> Rating {
    if new.total() < prev.total() {
        Rating::Good
    } else {
        Rating::Bad
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feedback {
    Correction(String),
    LabelSuccess,
    LabelFailure,
}

fn direction_phrase(v: Point) -> &'static str {
    if v[0].abs() >= v[1].abs() {
        if v[0] < 0.0 {
            "to the left"
        } else {
            "to the right"
        }
    } else if v[1] < 0.0 {
        "down"
    } else {
        "up"
    }
}

fn fmt_tenths(v: f64) -> String {
    format!("{:.1}", (v * 10.0).round().max(1.0) / 10.0)
}

/// The teacher's reaction to the state a turn produced. `turns_taken`
/// counts the turns executed so far, including this one.
pub fn feedback(
    tp: &TeacherProfile,
    inst: &TaskInstance,
    w: &WorldState,
    d: &Discrepancy,
    turns_taken: usize,
    rng: &mut Rng,
) -> Feedback {
    let blur = (1.0 - tp.proficiency) * 0.02 * rng.random_range(-1.0..=1.0);
    let threshold = SUCCESS_THRESHOLD + blur;
    if inst.is_success_within(w, threshold) {
        return Feedback::LabelSuccess;
    }
    if turns_taken >= tp.patience.min(MAX_TURNS) {
        return Feedback::LabelFailure;
    }
    Feedback::Correction(correction_text(tp, inst, w, d, threshold, rng))
}

fn correction_text(
    tp: &TeacherProfile,
    inst: &TaskInstance,
    w: &WorldState,
    d: &Discrepancy,
    threshold: f64,
    rng: &mut Rng,
) -> String {
    let specific = rng.random_bool(tp.feedback_specificity);
    let layout = &w.layout;
    let g = first_open_goal(inst, w, threshold);
    let t = inst.goal_target(g, w);
    let entity = match layout.kind(t.entity) {
        EntityKind::Robot => "robot".to_owned(),
        _ => format!("{} disc", layout.name(t.entity)),
    };
    let cur = w.pos[t.entity];
    let start = inst.initial.pos[t.entity];
    let remaining = [t.target[0] - cur[0], t.target[1] - cur[1]];
    let remaining_len = (dist(cur, t.target) - t.reach).max(0.0);
    let text = if d.invalid_code {
        if specific {
            format!("that didn't work, the code has an error. {}", inst.instruction())
        } else {
            "that didn't work".to_owned()
        }
    } else if d.wrong_object {
        if specific {
            format!("wrong disc, i meant the {entity}")
        } else {
            "not that one".to_owned()
        }
    } else if !d.moved {
        if specific {
            format!("nothing moved. {}", inst.instruction())
        } else {
            "nothing happened, try again".to_owned()
        }
    } else if d.direction_error.abs() > std::f64::consts::FRAC_PI_2 && dist(cur, start) > MOVE_EPS {
        if specific {
            format!("wrong way, move the {entity} {}", direction_phrase(remaining))
        } else {
            "no, the other way".to_owned()
        }
    } else {
        let want = [t.target[0] - start[0], t.target[1] - start[1]];
        let moved = [cur[0] - start[0], cur[1] - start[1]];
        let want_len = (want[0] * want[0] + want[1] * want[1]).sqrt();
        let progress = if want_len > 1e-9 { (moved[0] * want[0] + moved[1] * want[1]) / want_len } else { 0.0 };
        let overshoot = want_len > 1e-9 && progress > want_len;
        match (overshoot, specific) {
            (true, true) => {
                format!("too far, move the {entity} back {} {}", fmt_tenths(remaining_len), direction_phrase(remaining))
            }
            (true, false) => "too far".to_owned(),
            (false, true) => format!(
                "not far enough, move the {entity} {} more {}",
                fmt_tenths(remaining_len),
                direction_phrase(remaining)
            ),
            (false, false) => "a bit more".to_owned(),
        }
    };
    polite(tp, text, rng)
}

/// Anything that answers a human message with reward code.
pub trait RobotPolicy: Send + Sync {
    /// Code for the pending message; `Err` means no usable code came out.
    fn respond(&self, ctx: &TurnContext<'_>, rng: &mut Rng) -> Result<String, String>;
}

pub struct TurnContext<'a> {
    pub instance: &'a TaskInstance,
    pub system_prompt: &'a str,
    pub turns: &'a [ChatTurn],
    pub pending_human: &'a str,
}

/// A session model driven by one of the decoders, always conditioned on
/// the top-user id.
pub struct DecodingPolicy<M: SessionModel> {
    pub model: M,
    pub decoder: DecoderConfig,
}

impl<M: SessionModel> RobotPolicy for DecodingPolicy<M> {
    fn respond(&self, ctx: &TurnContext<'_>, rng: &mut Rng) -> Result<String, String> {
        let prefix = serialize_prefix(ctx.system_prompt, TOP_USER, ctx.turns, ctx.pending_human);
        self.decoder.step(&self.model, &prefix, rng).map(|(code, _)| code).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLimits {
    pub max_turns: usize,
    pub plan: PlanParams,
}

impl Default for SessionLimits {
    fn default() -> Self {
        Self { max_turns: MAX_TURNS, plan: PlanParams::default() }
    }
}

/// Output of [`run_session`].
#[derive(Clone, Debug)]
pub struct SessionRecord {
    pub session: ChatSession,
    pub trajectories: Vec<Trajectory>,
    /// Ground-truth predicate on the last executed state.
    pub ground_truth_success: bool,
    pub seed: u64,
}

/// Compiles and runs one turn's code from the instance's initial state.
/// Code that does not parse or compile leaves the robot idle.
pub fn execute_turn(inst: &TaskInstance, code: &str, plan: &PlanParams) -> (Trajectory, bool) {
    match parse_and_compile(code, &inst.initial.layout) {
        Ok((_, segs)) => match execute_program(&segs, &inst.initial, plan) {
            Ok(t) => (t, false),
            Err(_) => (Trajectory::idle(&inst.initial), true),
        },
        Err(_) => (Trajectory::idle(&inst.initial), true),
    }
}

/// Planner seed for a given session seed and turn.
pub fn turn_plan_params(base: &PlanParams, seed: u64, turn: usize) -> PlanParams {
    PlanParams { seed: derive_seed(seed, 0x100 + turn as u64), ..base.clone() }
}

/// Runs a teaching session until the teacher labels it. The world is reset
/// to the instance's starting state before every turn.
pub fn run_session(
    tp: &TeacherProfile,
    policy: &dyn RobotPolicy,
    inst: &TaskInstance,
    limits: &SessionLimits,
    session_id: &str,
    seed: u64,
) -> SessionRecord {
    let prompt = system_prompt(&inst.initial.layout);
    let mut session =
        ChatSession::new(session_id, prompt.clone(), &tp.user_id, &inst.task.id, &inst.task.embodiment);
    let mut teacher_rng = rng_from_seed(derive_seed(seed ^ tp.seed, 1));
    let mut policy_rng = rng_from_seed(derive_seed(seed, 2));
    let mut trajectories = Vec::new();
    let mut prev = discrepancy(inst, &inst.initial, false);
    let mut message = initial_instruction(tp, inst, &mut teacher_rng);
    let max_turns = limits.max_turns.clamp(1, MAX_TURNS);
    let mut ground_truth_success;
    loop {
        let turn = session.turns.len();
        let ctx = TurnContext { instance: inst, system_prompt: &prompt, turns: &session.turns, pending_human: &message };
        let code = policy.respond(&ctx, &mut policy_rng).unwrap_or_default();
        let (traj, invalid) = execute_turn(inst, &code, &turn_plan_params(&limits.plan, seed, turn));
        let w = traj.final_state().clone();
        let d = discrepancy(inst, &w, invalid);
        let rating = rate_turn(tp, &prev, &d);
        session.push_turn(message.clone(), code, rating);
        ground_truth_success = inst.is_success(&w);
        trajectories.push(traj);
        let taken = session.turns.len();
        let capped = TeacherProfile { patience: tp.patience.min(max_turns), ..tp.clone() };
        match feedback(&capped, inst, &w, &d, taken, &mut teacher_rng) {
            Feedback::LabelSuccess => {
                session.outcome = Outcome::Success;
                break;
            }
            Feedback::LabelFailure => {
                session.outcome = Outcome::Failure;
                break;
            }
            Feedback::Correction(text) => message = text,
        }
        prev = d;
    }
    SessionRecord { session, trajectories, ground_truth_success, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TaskRegistry;

    fn profile(spec: f64) -> TeacherProfile {
        TeacherProfile {
            user_id: "u".into(),
            proficiency: 1.0,
            feedback_specificity: spec,
            kindness: 0.0,
            patience: 7,
            seed: 0,
        }
    }

    fn instance(id: &str) -> TaskInstance {
        TaskRegistry::builtin().get(id).unwrap().instantiate(0)
    }

    #[test]
    fn specific_instruction_is_the_template() {
        let inst = instance("pusher.red_left");
        let s = initial_instruction(&profile(1.0), &inst, &mut rng_from_seed(0));
        assert_eq!(s, "move the red disc 0.3 to the left");
    }

    #[test]
    fn vague_instruction_comes_from_table() {
        let inst = instance("pusher.red_to_green");
        let s = initial_instruction(&profile(0.0), &inst, &mut rng_from_seed(0));
        let table: Vec<String> = vague_variants(&inst.task.goals[0])
            .iter()
            .map(|v| crate::task::fill_template(v, &inst.task.slots()).unwrap())
            .collect();
        assert!(table.contains(&s), "{s}");
    }

    #[test]
    fn overshoot_to_the_right_asks_for_left() {
        let inst = instance("pusher.red_to_green");
        let mut w = inst.initial.clone();
        let g = w.get("green").unwrap();
        w.set("red", [g[0] + 0.3, g[1]]);
        let d = discrepancy(&inst, &w, false);
        match feedback(&profile(1.0), &inst, &w, &d, 1, &mut rng_from_seed(0)) {
            Feedback::Correction(t) => assert!(t.contains("to the left"), "{t}"),
            f => panic!("{f:?}"),
        }
    }

    #[test]
    fn ratings() {
        let mk = |e: f64| Discrepancy {
            goal_errors: vec![e],
            wrong_object: false,
            direction_error: 0.0,
            moved: true,
            invalid_code: false,
        };
        let tp = profile(1.0);
        assert_eq!(rate_turn(&tp, &mk(0.5), &mk(0.3)), Rating::Good);
        assert_eq!(rate_turn(&tp, &mk(0.3), &mk(0.3)), Rating::Bad);
        assert_eq!(rate_turn(&tp, &mk(0.3), &mk(0.5)), Rating::Bad);
    }

    #[test]
    fn population_tiers() {
        let pop = reference_population(0);
        assert_eq!(pop.len(), 12);
        assert!(pop.iter().all(|p| p.validate().is_ok()));
        assert!(pop[0].feedback_specificity > pop[11].feedback_specificity);
        assert!(pop[0].kindness > pop[11].kindness);
    }
}
