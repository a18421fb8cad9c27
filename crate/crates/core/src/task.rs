//! Task registry, task instances with ground-truth success checks, and the
//! blind task/model sampler.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_program, print_program};
use crate::util::{derive_seed, rng_from_seed, Rng};
use crate::world::{dist, EntityKind, Layout, Point, WorldState};

/// Distance within which a goal counts as reached.
pub const SUCCESS_THRESHOLD: f64 = 0.07;
/// Per-axis jitter applied to the default layout when instantiating.
pub const POSITION_JITTER: f64 = 0.12;
/// Minimum pairwise distance between entities in a fresh instance.
pub const MIN_SEPARATION: f64 = 0.25;

const BUILTIN_TASKS: &str = include_str!("../config/tasks.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    ObjectAt { object: String, marker: String },
    /// Some robot ends on the marker.
    RobotAt { marker: String },
    /// The object ends displaced from its starting position.
    ObjectOffset { object: String, dx: f64, dy: f64 },
    /// The two discs end touching (gap within the threshold).
    ObjectsTogether { object: String, other: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub embodiment: String,
    pub split: Split,
    #[serde(default = "default_difficulty")]
    pub difficulty: u8,
    pub template: String,
    pub goals: Vec<Goal>,
}

fn default_difficulty() -> u8 {
    1
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("task registry parse error: {0}")]
    Parse(String),
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("task `{task}`: unknown embodiment `{embodiment}`")]
    UnknownEmbodiment { task: String, embodiment: String },
    #[error("task `{task}`: `{name}` is not a {expected} of its embodiment")]
    BadEntity { task: String, name: String, expected: &'static str },
    #[error("task `{task}`: template slot `{slot}` cannot be filled")]
    UnresolvedSlot { task: String, slot: String },
    #[error("task `{0}` has no goals")]
    NoGoals(String),
    #[error("io error: {0}")]
    Io(String),
}

fn direction_word(dx: f64, dy: f64) -> &'static str {
    if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            "left"
        } else {
            "right"
        }
    } else if dy < 0.0 {
        "down"
    } else {
        "up"
    }
}

fn fmt_distance(v: f64) -> String {
    let s = format!("{:.2}", v);
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

impl Task {
    pub fn layout(&self) -> Option<Layout> {
        Layout::builtin(&self.embodiment)
    }

    /// Slot values taken from the goals.
    pub fn slots(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (i, g) in self.goals.iter().enumerate() {
            let suffix = if i == 0 { String::new() } else { (i + 1).to_string() };
            let mut put = |k: &str, v: String| {
                out.insert(format!("{k}{suffix}"), v);
            };
            match g {
                Goal::ObjectAt { object, marker } => {
                    put("object", object.clone());
                    put("marker", marker.clone());
                }
                Goal::RobotAt { marker } => put("marker", marker.clone()),
                Goal::ObjectOffset { object, dx, dy } => {
                    put("object", object.clone());
                    put("distance", fmt_distance((dx * dx + dy * dy).sqrt()));
                    put("direction", direction_word(*dx, *dy).to_owned());
                }
                Goal::ObjectsTogether { object, other } => {
                    put("object", object.clone());
                    put("other", other.clone());
                }
            }
        }
        out
    }

    /// The instruction with every slot filled.
    pub fn instruction(&self) -> Result<String, RegistryError> {
        fill_template(&self.template, &self.slots()).map_err(|slot| RegistryError::UnresolvedSlot {
            task: self.id.clone(),
            slot,
        })
    }

    /// Objects the task is about, in goal order without repeats.
    pub fn objects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.goals {
            let names: Vec<&String> = match g {
                Goal::ObjectAt { object, .. } | Goal::ObjectOffset { object, .. } => vec![object],
                Goal::ObjectsTogether { object, other } => vec![object, other],
                Goal::RobotAt { .. } => vec![],
            };
            for n in names {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let layout = self.layout().ok_or_else(|| RegistryError::UnknownEmbodiment {
            task: self.id.clone(),
            embodiment: self.embodiment.clone(),
        })?;
        if self.goals.is_empty() {
            return Err(RegistryError::NoGoals(self.id.clone()));
        }
        let check = |name: &str, kind: EntityKind, expected: &'static str| {
            match layout.index_of(name) {
                Some(i) if layout.kind(i) == kind => Ok(()),
                _ => Err(RegistryError::BadEntity { task: self.id.clone(), name: name.to_owned(), expected }),
            }
        };
        for g in &self.goals {
            match g {
                Goal::ObjectAt { object, marker } => {
                    check(object, EntityKind::Object, "object")?;
                    check(marker, EntityKind::Marker, "marker")?;
                }
                Goal::RobotAt { marker } => check(marker, EntityKind::Marker, "marker")?,
                Goal::ObjectOffset { object, .. } => check(object, EntityKind::Object, "object")?,
                Goal::ObjectsTogether { object, other } => {
                    check(object, EntityKind::Object, "object")?;
                    check(other, EntityKind::Object, "object")?;
                }
            }
        }
        self.instruction().map(|_| ())
    }

    /// A fresh instance with jittered starting positions.
    pub fn instantiate(&self, seed: u64) -> TaskInstance {
        let layout = Arc::new(self.layout().expect("registry tasks have a known embodiment"));
        let base = layout.default_positions();
        let mut rng = rng_from_seed(seed);
        let mut pos = base.clone();
        for _ in 0..1000 {
            let cand: Vec<Point> = base
                .iter()
                .map(|p| {
                    [
                        p[0] + rng.random_range(-POSITION_JITTER..=POSITION_JITTER),
                        p[1] + rng.random_range(-POSITION_JITTER..=POSITION_JITTER),
                    ]
                })
                .collect();
            if separated(&cand) && targets_in_bounds(self, &layout, &cand) {
                pos = cand;
                break;
            }
        }
        TaskInstance { task: self.clone(), seed, initial: WorldState::new(layout, pos) }
    }
}

fn separated(pos: &[Point]) -> bool {
    pos.iter().enumerate().all(|(i, a)| pos[i + 1..].iter().all(|b| dist(*a, *b) >= MIN_SEPARATION))
}

fn targets_in_bounds(task: &Task, layout: &Layout, pos: &[Point]) -> bool {
    let lim = layout.bound - 2.0 * layout.radius;
    task.goals.iter().all(|g| match g {
        Goal::ObjectOffset { object, dx, dy } => {
            let p = pos[layout.index_of(object).expect("validated")];
            (p[0] + dx).abs() <= lim && (p[1] + dy).abs() <= lim
        }
        _ => true,
    })
}

/// Replaces `{slot}` occurrences; returns the first missing slot name.
pub fn fill_template(template: &str, slots: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').ok_or_else(|| rest[start..].to_owned())? + start;
        let key = &rest[start + 1..end];
        out.push_str(slots.get(key).ok_or_else(|| key.to_owned())?);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Deserialize)]
struct RegistryFile {
    task: Vec<Task>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRegistry {
    tasks: Vec<Task>,
}

impl TaskRegistry {
    pub fn new(tasks: Vec<Task>) -> Result<Self, RegistryError> {
        let mut seen = HashSet::new();
        for t in &tasks {
            if !seen.insert(t.id.clone()) {
                return Err(RegistryError::DuplicateId(t.id.clone()));
            }
            t.validate()?;
        }
        Ok(Self { tasks })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RegistryError> {
        let f: RegistryFile = toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::new(f.task)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_TASKS).expect("built-in registry is valid")
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn split(&self, split: Split) -> Vec<Task> {
        self.tasks.iter().filter(|t| t.split == split).cloned().collect()
    }

    pub fn filter(&self, embodiment: Option<&str>, split: Option<Split>) -> Vec<Task> {
        self.tasks
            .iter()
            .filter(|t| embodiment.is_none_or(|e| t.embodiment == e))
            .filter(|t| split.is_none_or(|s| t.split == s))
            .cloned()
            .collect()
    }
}

/// A task bound to concrete starting positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub task: Task,
    pub seed: u64,
    pub initial: WorldState,
}

/// What has to move where for one goal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalTarget {
    /// Entity that should move.
    pub entity: usize,
    pub target: Point,
    /// Distance at which the goal counts as reached, measured between
    /// entity and target.
    pub reach: f64,
}

impl TaskInstance {
    pub fn instruction(&self) -> String {
        self.task.instruction().expect("validated template")
    }

    fn idx(&self, name: &str) -> usize {
        self.initial.layout.index_of(name).expect("validated name")
    }

    fn nearest_robot(&self, w: &WorldState, p: Point) -> usize {
        w.layout
            .robots()
            .min_by(|a, b| dist(w.pos[*a], p).total_cmp(&dist(w.pos[*b], p)))
            .expect("every embodiment has a robot")
    }

    pub fn goal_target(&self, goal: usize, w: &WorldState) -> GoalTarget {
        let two_r = 2.0 * w.layout.radius;
        match &self.task.goals[goal] {
            Goal::ObjectAt { object, marker } => {
                GoalTarget { entity: self.idx(object), target: w.pos[self.idx(marker)], reach: 0.0 }
            }
            Goal::RobotAt { marker } => {
                let target = w.pos[self.idx(marker)];
                GoalTarget { entity: self.nearest_robot(w, target), target, reach: 0.0 }
            }
            Goal::ObjectOffset { object, dx, dy } => {
                let i = self.idx(object);
                let p0 = self.initial.pos[i];
                GoalTarget { entity: i, target: [p0[0] + dx, p0[1] + dy], reach: 0.0 }
            }
            Goal::ObjectsTogether { object, other } => {
                GoalTarget { entity: self.idx(object), target: w.pos[self.idx(other)], reach: two_r }
            }
        }
    }

    /// Remaining error per goal, in world units.
    pub fn goal_errors(&self, w: &WorldState) -> Vec<f64> {
        (0..self.task.goals.len())
            .map(|g| {
                let t = self.goal_target(g, w);
                (dist(w.pos[t.entity], t.target) - t.reach).max(0.0)
            })
            .collect()
    }

    pub fn total_error(&self, w: &WorldState) -> f64 {
        self.goal_errors(w).iter().sum()
    }

    pub fn is_success(&self, w: &WorldState) -> bool {
        self.is_success_within(w, SUCCESS_THRESHOLD)
    }

    pub fn is_success_within(&self, w: &WorldState, threshold: f64) -> bool {
        self.goal_errors(w).iter().all(|e| *e <= threshold)
    }

    /// Ground truth on the final state of a trajectory.
    pub fn evaluate_success(&self, traj: &crate::controller::Trajectory) -> bool {
        self.is_success(traj.final_state())
    }

    /// A reward program that solves the task.
    pub fn ground_truth_program(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let n = self.task.goals.len();
        for (i, g) in self.task.goals.iter().enumerate() {
            if i > 0 {
                if let Some(prev) = goal_pushed_object(&self.task.goals[i - 1]) {
                    lines.push(format!("reach(obj='{prev}', weight=0.0)"));
                }
            }
            lines.extend(goal_lines(g));
            if i + 1 < n {
                let name = format!("done{}", if i == 0 { String::new() } else { (i + 1).to_string() });
                lines.push(format!("def {name}(): return {}", self.goal_condition(g)));
                lines.push(format!("wait_until_condition({name})"));
            }
        }
        canonical(&lines.join("\n"))
    }

    /// Single-comparison check that a goal is nearly met, along the axis
    /// the entity has furthest to travel.
    fn goal_condition(&self, g: &Goal) -> String {
        let pos = |n: &str| self.initial.pos[self.idx(n)];
        let (subject, from, to, target_expr): (String, Point, Point, Box<dyn Fn(usize) -> String>) = match g {
            Goal::ObjectAt { object, marker } => {
                let m = marker.clone();
                (object.clone(), pos(object), pos(marker), Box::new(move |ax| format!("get_obj_pos(obj='{m}')[{ax}]")))
            }
            Goal::ObjectOffset { object, dx, dy } => {
                let p = pos(object);
                let (dx, dy) = (*dx, *dy);
                (
                    object.clone(),
                    p,
                    [p[0] + dx, p[1] + dy],
                    Box::new(move |ax| {
                        let d = if ax == 0 { dx } else { dy };
                        format!("pos[{ax}] + {}", crate::dsl::fmt_num(d))
                    }),
                )
            }
            Goal::ObjectsTogether { object, other } => {
                let o = other.clone();
                (object.clone(), pos(object), pos(other), Box::new(move |ax| format!("get_obj_pos(obj='{o}')[{ax}]")))
            }
            Goal::RobotAt { marker } => {
                let r = self.initial.layout.name(self.nearest_robot(&self.initial, pos(marker))).to_owned();
                let m = marker.clone();
                (r.clone(), pos(&r), pos(marker), Box::new(move |ax| format!("get_obj_pos(obj='{m}')[{ax}]")))
            }
        };
        let d = [to[0] - from[0], to[1] - from[1]];
        let ax = if d[0].abs() >= d[1].abs() { 0 } else { 1 };
        let margin = if matches!(g, Goal::ObjectsTogether { .. }) { 0.13 } else { 0.03 };
        if d[ax] >= 0.0 {
            format!("get_obj_pos(obj='{subject}')[{ax}] >= {} - {}", target_expr(ax), crate::dsl::fmt_num(margin))
        } else {
            format!("get_obj_pos(obj='{subject}')[{ax}] <= {} + {}", target_expr(ax), crate::dsl::fmt_num(margin))
        }
    }
}

fn goal_pushed_object(g: &Goal) -> Option<&str> {
    match g {
        Goal::ObjectAt { object, .. } | Goal::ObjectOffset { object, .. } | Goal::ObjectsTogether { object, .. } => {
            Some(object)
        }
        Goal::RobotAt { .. } => None,
    }
}

/// Reach weight used by ground-truth pushing programs.
pub const PUSH_REACH_WEIGHT: f64 = 0.5;

/// Statements that pursue one goal.
pub fn goal_lines(g: &Goal) -> Vec<String> {
    let rw = crate::dsl::fmt_num(PUSH_REACH_WEIGHT);
    match g {
        Goal::ObjectAt { object, marker } => vec![
            format!("reach(obj='{object}', weight={rw})"),
            format!("min_l2_dist(obj1='{object}', obj2='{marker}', weight=1.0)"),
        ],
        Goal::RobotAt { marker } => vec![format!("reach(obj='{marker}', weight=1.0)")],
        Goal::ObjectOffset { object, dx, dy } => {
            let comp = |ax: usize, d: f64| {
                if d == 0.0 {
                    format!("pos[{ax}]")
                } else if d < 0.0 {
                    format!("pos[{ax}] - {}", crate::dsl::fmt_num(-d))
                } else {
                    format!("pos[{ax}] + {}", crate::dsl::fmt_num(d))
                }
            };
            vec![
                format!("pos = get_obj_pos(obj='{object}')"),
                format!("reach(obj='{object}', weight={rw})"),
                format!("set_target_pos(obj='{object}', target=({}, {}))", comp(0, *dx), comp(1, *dy)),
            ]
        }
        Goal::ObjectsTogether { object, other } => vec![
            format!("reach(obj='{object}', weight={rw})"),
            format!("min_l2_dist(obj1='{object}', obj2='{other}', weight=1.0)"),
        ],
    }
}

/// Printer-canonical form of a program, or the input unchanged if it does
/// not parse.
pub fn canonical(src: &str) -> String {
    match parse_program(src) {
        Ok(p) => print_program(&p),
        Err(_) => src.to_owned(),
    }
}

/// The instruction/code pair shown in every system prompt.
pub fn prompt_exemplar(layout: &Layout) -> (String, String) {
    let object = layout.names_of(EntityKind::Object)[0].to_owned();
    let marker = layout.names_of(EntityKind::Marker)[0].to_owned();
    let g = Goal::ObjectAt { object: object.clone(), marker: marker.clone() };
    (format!("push the {object} disc to the {marker} marker"), canonical(&goal_lines(&g).join("\n")))
}

/// System prompt: embodiment description, API and one exemplar.
pub fn system_prompt(layout: &Layout) -> String {
    let (instr, code) = prompt_exemplar(layout);
    format!(
        "# you control {desc}\n# robots: {robots}\n# objects: {objects}\n# markers: {markers}\n\
         # api: reach(obj, weight) min_l2_dist(obj1, obj2, weight) set_target_pos(obj, target) get_obj_pos(obj) wait_until_condition(fn)\n\
         # example: {instr}\n{code}",
        desc = layout.description.to_lowercase().trim_end_matches('.'),
        robots = layout.names_of(EntityKind::Robot).join(", "),
        objects = layout.names_of(EntityKind::Object).join(", "),
        markers = layout.names_of(EntityKind::Marker).join(", "),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub model_ids: Vec<String>,
    pub tasks: Vec<Task>,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("the task or model pool is empty")]
    EmptyPool,
}

/// One draw of the blind sampler. `blind_tag` is what the teacher sees.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPair {
    pub instance: TaskInstance,
    pub model_id: String,
    pub blind_tag: String,
}

/// Uniform draw over the task × model grid, with a fresh instance.
pub fn sample_task(cfg: &SamplerConfig, rng: &mut Rng) -> Result<SampledPair, SamplerError> {
    if cfg.tasks.is_empty() || cfg.model_ids.is_empty() {
        return Err(SamplerError::EmptyPool);
    }
    let cell = rng.random_range(0..cfg.tasks.len() * cfg.model_ids.len());
    let task = &cfg.tasks[cell / cfg.model_ids.len()];
    let model_id = cfg.model_ids[cell % cfg.model_ids.len()].clone();
    let instance_seed: u64 = rng.random();
    let tag: u32 = rng.random();
    Ok(SampledPair {
        instance: task.instantiate(instance_seed),
        model_id,
        blind_tag: format!("model-{:06x}", tag & 0x00ff_ffff),
    })
}

/// Stateful sampler seeded from the config.
#[derive(Clone, Debug)]
pub struct BlindSampler {
    cfg: SamplerConfig,
    rng: Rng,
}

impl BlindSampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self, SamplerError> {
        if cfg.tasks.is_empty() || cfg.model_ids.is_empty() {
            return Err(SamplerError::EmptyPool);
        }
        let rng = rng_from_seed(derive_seed(cfg.seed, 0x5A));
        Ok(Self { cfg, rng })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn next_pair(&mut self) -> SampledPair {
        sample_task(&self.cfg, &mut self.rng).expect("pools checked at construction")
    }
}
