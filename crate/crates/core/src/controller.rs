//! Predictive-sampling receding-horizon controller.
//!
//! Each control step perturbs the nominal action sequence `samples` times,
//! rolls every candidate through the dynamics for `horizon` steps, keeps
//! the cheapest (the unperturbed nominal wins ties), executes its first
//! action and shifts the rest forward as the next nominal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsl::{ActiveSegment, EvalError, ProgramRunner, RewardSegment};
use crate::util::{derive_seed, rng_from_seed, Rng};
use crate::world::{step_in_place, Action, Point, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub horizon: usize,
    pub samples: usize,
    pub noise_sigma: f64,
    pub control_steps_max: usize,
    pub transition_timeout: usize,
    pub seed: u64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self { horizon: 12, samples: 64, noise_sigma: 0.03, control_steps_max: 300, transition_timeout: 150, seed: 0 }
    }
}

impl PlanParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be at least 1".into());
        }
        if self.samples == 0 {
            return Err("samples must be at least 1".into());
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err("noise_sigma must be positive".into());
        }
        Ok(())
    }
}

/// Flat action sequence: `horizon` steps of one 2D action per robot.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSeq {
    pub n_robots: usize,
    pub data: Vec<f64>,
}

impl ActionSeq {
    pub fn zeros(horizon: usize, n_robots: usize) -> Self {
        Self { n_robots, data: vec![0.0; horizon * n_robots * 2] }
    }

    pub fn horizon(&self) -> usize {
        self.data.len() / (2 * self.n_robots).max(1)
    }

    pub fn step(&self, t: usize) -> Action {
        let w = 2 * self.n_robots;
        self.data[t * w..(t + 1) * w].chunks(2).map(|c| [c[0], c[1]]).collect()
    }

    fn step_points(&self, t: usize, out: &mut [Point]) {
        let w = 2 * self.n_robots;
        for (r, c) in self.data[t * w..(t + 1) * w].chunks(2).enumerate() {
            out[r] = [c[0], c[1]];
        }
    }

    /// Drops the first step and appends a zero step.
    pub fn shifted(&self) -> Self {
        let w = 2 * self.n_robots;
        let mut data = self.data[w.min(self.data.len())..].to_vec();
        data.resize(self.data.len(), 0.0);
        Self { n_robots: self.n_robots, data }
    }

    fn clip(&mut self, bound: f64) {
        for v in &mut self.data {
            *v = v.clamp(-bound, bound);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanStep {
    pub action: Action,
    pub nominal: ActionSeq,
    pub best_cost: f64,
    pub nominal_cost: f64,
}

/// Summed segment cost over the states visited by `seq` from `start`.
pub fn rollout_cost(seg: &ActiveSegment, w: &WorldState, seq: &ActionSeq) -> f64 {
    let mut pos = w.pos.clone();
    let mut act = vec![[0.0, 0.0]; seq.n_robots];
    let mut total = 0.0;
    for t in 0..seq.horizon() {
        seq.step_points(t, &mut act);
        step_in_place(&w.layout, &mut pos, &act);
        total += seg.cost(&pos);
    }
    total
}

pub fn plan_step(seg: &ActiveSegment, w: &WorldState, p: &PlanParams, nominal: &ActionSeq, rng: &mut Rng) -> PlanStep {
    use rand::Rng as _;
    let bound = w.layout.action_bound;
    let mut base = nominal.clone();
    base.clip(bound);
    let nominal_cost = rollout_cost(seg, w, &base);
    let step_seed: u64 = rng.random();
    let normal = Normal::new(0.0, p.noise_sigma).expect("noise_sigma validated positive");
    let mut best = base.clone();
    let mut best_cost = nominal_cost;
    for i in 0..p.samples {
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, i as u64));
        let mut cand = base.clone();
        for v in &mut cand.data {
            *v += normal.sample(&mut r);
        }
        cand.clip(bound);
        let c = rollout_cost(seg, w, &cand);
        if c < best_cost {
            best_cost = c;
            best = cand;
        }
    }
    PlanStep { action: best.step(0), nominal: best.shifted(), best_cost, nominal_cost }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Termination {
    /// The terminal segment has nothing to optimize.
    NoTerms,
    /// Terminal-segment cost stopped changing.
    Converged,
    /// A transition never fired within the timeout.
    TransitionTimeout { segment: usize },
    StepLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<WorldState>,
    pub actions: Vec<Action>,
    /// `(step, segment_index)` for each segment entered, starting at `(0, 0)`.
    pub segment_boundaries: Vec<(usize, usize)>,
    /// Cost of each state under the segment active when it was reached.
    pub cost_series: Vec<f64>,
    /// Per step: (chosen rollout cost, nominal rollout cost).
    pub planner_costs: Vec<(f64, f64)>,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub step: usize,
    pub positions: std::collections::BTreeMap<String, Point>,
    pub segment_index: usize,
    pub cost: f64,
}

impl Trajectory {
    /// A trajectory that never moved.
    pub fn idle(w0: &WorldState) -> Self {
        Self {
            states: vec![w0.clone()],
            actions: vec![],
            segment_boundaries: vec![(0, 0)],
            cost_series: vec![0.0],
            planner_costs: vec![],
            termination: Termination::NoTerms,
        }
    }

    pub fn final_state(&self) -> &WorldState {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn segment_at(&self, step: usize) -> usize {
        self.segment_boundaries.iter().take_while(|(s, _)| *s <= step).last().map(|b| b.1).unwrap_or(0)
    }

    pub fn frames(&self) -> Vec<Frame> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| Frame {
                step: i,
                positions: s.named_positions(),
                segment_index: self.segment_at(i),
                cost: self.cost_series[i],
            })
            .collect()
    }
}

const CONVERGENCE_WINDOW: usize = 10;
const CONVERGENCE_TOL: f64 = 1e-4;

/// Runs the program from `w0` until the terminal segment converges, a
/// transition times out, or the step budget runs out. At most one
/// transition happens per control step.
pub fn execute_program(segments: &[RewardSegment], w0: &WorldState, p: &PlanParams) -> Result<Trajectory, EvalError> {
    if segments.is_empty() {
        return Ok(Trajectory::idle(w0));
    }
    let mut runner = ProgramRunner::new(segments.to_vec());
    let mut seg_idx = 0;
    let mut active = runner.enter(0, w0)?;
    let mut traj = Trajectory {
        states: vec![w0.clone()],
        actions: vec![],
        segment_boundaries: vec![(0, 0)],
        cost_series: vec![active.cost(&w0.pos)],
        planner_costs: vec![],
        termination: Termination::StepLimit,
    };
    if active.is_terminal() && active.num_terms() == 0 {
        traj.termination = Termination::NoTerms;
        return Ok(traj);
    }
    let mut rng = rng_from_seed(p.seed);
    let mut nominal = ActionSeq::zeros(p.horizon, w0.layout.n_robots);
    let mut in_segment = 0usize;
    let mut w = w0.clone();
    for t in 0..p.control_steps_max {
        let step = plan_step(&active, &w, p, &nominal, &mut rng);
        nominal = step.nominal;
        step_in_place(&w0.layout, &mut w.pos, &step.action);
        traj.actions.push(step.action);
        traj.planner_costs.push((step.best_cost, step.nominal_cost));
        traj.cost_series.push(active.cost(&w.pos));
        traj.states.push(w.clone());
        in_segment += 1;
        if active.transition_fired(&w.pos)? {
            seg_idx += 1;
            active = runner.enter(seg_idx, &w)?;
            traj.segment_boundaries.push((t + 1, seg_idx));
            in_segment = 0;
            if active.is_terminal() && active.num_terms() == 0 {
                traj.termination = Termination::NoTerms;
                return Ok(traj);
            }
        } else if !active.is_terminal() {
            if in_segment >= p.transition_timeout {
                traj.termination = Termination::TransitionTimeout { segment: seg_idx };
                return Ok(traj);
            }
        } else if in_segment >= CONVERGENCE_WINDOW {
            let n = traj.cost_series.len();
            if (traj.cost_series[n - 1] - traj.cost_series[n - 1 - CONVERGENCE_WINDOW]).abs() < CONVERGENCE_TOL {
                traj.termination = Termination::Converged;
                return Ok(traj);
            }
        }
    }
    traj.termination = Termination::StepLimit;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{compile_segments, parse_program};
    use crate::world::Layout;
    use std::sync::Arc;

    fn world() -> WorldState {
        WorldState::default_for(Arc::new(Layout::pusher()))
    }

    fn segs(src: &str) -> Vec<RewardSegment> {
        compile_segments(&parse_program(src).unwrap(), &Layout::pusher()).unwrap()
    }

    fn active(src: &str, w: &WorldState) -> ActiveSegment {
        ProgramRunner::new(segs(src)).enter(0, w).unwrap()
    }

    #[test]
    fn zero_terms_returns_nominal_first_action() {
        let w = world();
        let a = active("", &w);
        let mut nominal = ActionSeq::zeros(4, 1);
        nominal.data[0] = 0.2;
        nominal.data[1] = -0.01;
        let s = plan_step(&a, &w, &PlanParams::default(), &nominal, &mut rng_from_seed(0));
        assert_eq!(s.action, vec![[w.layout.action_bound, -0.01]]);
    }

    #[test]
    fn reach_moves_toward_object() {
        let mut w = world();
        w.set("robot", [0.0, 0.0]);
        w.set("red", [1.0, 0.0]);
        let a = active("reach(obj='red')", &w);
        let p = PlanParams { samples: 256, ..PlanParams::default() };
        let s = plan_step(&a, &w, &p, &ActionSeq::zeros(p.horizon, 1), &mut rng_from_seed(0));
        assert!(s.action[0][0] > 0.0);
        assert!(s.best_cost <= s.nominal_cost);
    }

    #[test]
    fn tiny_noise_single_sample_keeps_nominal() {
        let mut w = world();
        w.set("robot", [0.0, 0.0]);
        w.set("red", [1.0, 0.0]);
        let a = active("reach(obj='red')", &w);
        let p = PlanParams { samples: 1, noise_sigma: 1e-12, ..PlanParams::default() };
        let mut nominal = ActionSeq::zeros(p.horizon, 1);
        nominal.data[0] = 0.01;
        let s = plan_step(&a, &w, &p, &nominal, &mut rng_from_seed(0));
        assert!((s.action[0][0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn empty_program_has_only_initial_state() {
        let t = execute_program(&segs(""), &world(), &PlanParams::default()).unwrap();
        assert_eq!(t.states.len(), 1);
        assert!(t.actions.is_empty());
    }

    #[test]
    fn unsatisfiable_transition_times_out() {
        let src = "reach(obj='red')\ndef far(): return get_obj_pos(obj='red')[0] >= 10.0\nwait_until_condition(far)";
        let p = PlanParams { samples: 8, ..PlanParams::default() };
        let t = execute_program(&segs(src), &world(), &p).unwrap();
        assert_eq!(t.actions.len(), p.transition_timeout);
        assert_eq!(t.termination, Termination::TransitionTimeout { segment: 0 });
        assert_eq!(t.states.len(), t.actions.len() + 1);
    }

    #[test]
    fn shift_fills_with_zeros() {
        let s = ActionSeq { n_robots: 1, data: vec![1.0, 2.0, 3.0, 4.0] };
        assert_eq!(s.shifted().data, vec![3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn frames_cover_every_state() {
        let p = PlanParams { samples: 8, control_steps_max: 20, ..PlanParams::default() };
        let t = execute_program(&segs("reach(obj='red')"), &world(), &p).unwrap();
        let f = t.frames();
        assert_eq!(f.len(), t.states.len());
        assert_eq!(f[0].step, 0);
        assert!(f[0].positions.contains_key("robot"));
    }
}
