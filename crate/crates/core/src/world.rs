//! Deterministic 2D disc world with quasi-static pushing.
//!
//! Robots translate by their action; an object a robot moves into is pushed
//! out along the contact normal until the two discs just touch. Robots are
//! resolved one at a time in name order, and a pushed object shoves any
//! object it lands on in the same way (one level deep).

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub const DISC_RADIUS: f64 = 0.05;
pub const WORLD_BOUND: f64 = 1.0;
/// Per-axis action limit for every robot.
pub const ACTION_BOUND: f64 = 0.05;

pub type Point = [f64; 2];
/// One displacement per robot, in layout order.
pub type Action = Vec<Point>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Robot,
    Object,
    Marker,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
}

/// Static description of an embodiment: which entities exist and the
/// geometric limits. Robots come first (sorted by name), then objects, then
/// markers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub embodiment_id: String,
    pub description: String,
    pub entities: Vec<Entity>,
    pub n_robots: usize,
    pub n_objects: usize,
    pub radius: f64,
    pub bound: f64,
    pub action_bound: f64,
}

impl Layout {
    pub fn new(embodiment_id: &str, description: &str, robots: &[&str], objects: &[&str], markers: &[&str]) -> Self {
        let mut robots: Vec<&str> = robots.to_vec();
        robots.sort();
        let mut entities = Vec::new();
        for (names, kind) in [(&robots[..], EntityKind::Robot), (objects, EntityKind::Object), (markers, EntityKind::Marker)] {
            for n in names {
                entities.push(Entity { name: n.to_string(), kind });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entities {
            assert!(seen.insert(e.name.clone()), "duplicate entity name {}", e.name);
        }
        Self {
            embodiment_id: embodiment_id.to_owned(),
            description: description.to_owned(),
            n_robots: robots.len(),
            n_objects: objects.len(),
            entities,
            radius: DISC_RADIUS,
            bound: WORLD_BOUND,
            action_bound: ACTION_BOUND,
        }
    }

    /// Single round pusher.
    pub fn pusher() -> Self {
        Self::new(
            "pusher",
            "a round pusher robot on a flat table. It moves in 2D and can push the colored discs. Markers are fixed spots on the table.",
            &["robot"],
            &["red", "blue", "yellow"],
            &["green", "purple"],
        )
    }

    /// Two round pushers working on the same table.
    pub fn dual_pusher() -> Self {
        Self::new(
            "dual-pusher",
            "two round pusher robots on a flat table. They move in 2D and can push the colored discs. Markers are fixed spots on the table.",
            &["left_pusher", "right_pusher"],
            &["red", "blue", "yellow"],
            &["green", "purple"],
        )
    }

    pub fn builtin(embodiment_id: &str) -> Option<Self> {
        match embodiment_id {
            "pusher" => Some(Self::pusher()),
            "dual-pusher" => Some(Self::dual_pusher()),
            _ => None,
        }
    }

    pub fn builtin_ids() -> [&'static str; 2] {
        ["pusher", "dual-pusher"]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.name == name)
    }

    pub fn kind(&self, i: usize) -> EntityKind {
        self.entities[i].kind
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entities[i].name
    }

    pub fn robots(&self) -> std::ops::Range<usize> {
        0..self.n_robots
    }

    pub fn objects(&self) -> std::ops::Range<usize> {
        self.n_robots..self.n_robots + self.n_objects
    }

    pub fn markers(&self) -> std::ops::Range<usize> {
        self.n_robots + self.n_objects..self.entities.len()
    }

    pub fn names_of(&self, kind: EntityKind) -> Vec<&str> {
        self.entities.iter().filter(|e| e.kind == kind).map(|e| e.name.as_str()).collect()
    }

    /// Starting configuration used by examples and the reference scenario.
    pub fn default_positions(&self) -> Vec<Point> {
        self.entities
            .iter()
            .map(|e| match (self.embodiment_id.as_str(), e.name.as_str()) {
                ("pusher", "robot") => [-0.6, 0.0],
                ("dual-pusher", "left_pusher") => [-0.7, 0.0],
                ("dual-pusher", "right_pusher") => [0.7, 0.0],
                ("pusher", "red") => [-0.2, 0.0],
                ("pusher", "blue") => [0.0, 0.5],
                ("pusher", "yellow") => [0.0, -0.5],
                ("dual-pusher", "red") => [-0.35, 0.0],
                ("dual-pusher", "blue") => [0.35, 0.0],
                ("dual-pusher", "yellow") => [0.0, -0.45],
                ("pusher", "green") => [0.4, 0.0],
                ("pusher", "purple") => [0.4, 0.6],
                ("dual-pusher", "green") => [0.0, 0.5],
                ("dual-pusher", "purple") => [0.0, -0.8],
                _ => [0.0, 0.0],
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub layout: Arc<Layout>,
    pub pos: Vec<Point>,
}

impl WorldState {
    pub fn new(layout: Arc<Layout>, pos: Vec<Point>) -> Self {
        assert_eq!(layout.entities.len(), pos.len(), "one position per entity");
        Self { layout, pos }
    }

    pub fn default_for(layout: Arc<Layout>) -> Self {
        let pos = layout.default_positions();
        Self { layout, pos }
    }

    pub fn get(&self, name: &str) -> Option<Point> {
        self.layout.index_of(name).map(|i| self.pos[i])
    }

    pub fn set(&mut self, name: &str, p: Point) {
        let i = self.layout.index_of(name).unwrap_or_else(|| panic!("unknown entity {name}"));
        self.pos[i] = p;
    }

    /// Positions keyed by entity name.
    pub fn named_positions(&self) -> BTreeMap<String, Point> {
        self.layout.entities.iter().zip(&self.pos).map(|(e, p)| (e.name.clone(), *p)).collect()
    }

    pub fn zero_action(&self) -> Action {
        vec![[0.0, 0.0]; self.layout.n_robots]
    }

    pub fn in_bounds(&self) -> bool {
        let b = self.layout.bound;
        self.pos.iter().all(|p| p[0].abs() <= b && p[1].abs() <= b)
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_point(p: Point, b: f64) -> Point {
    [p[0].clamp(-b, b), p[1].clamp(-b, b)]
}

/// Moves `pos[i]` out of `from` along the center line so the discs touch.
/// Returns whether a push happened.
fn push_out(pos: &mut [Point], i: usize, from: Point, fallback: Point, gap: f64, bound: f64) -> bool {
    let d = [pos[i][0] - from[0], pos[i][1] - from[1]];
    let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if n >= gap {
        return false;
    }
    let dir = if n > 1e-12 {
        [d[0] / n, d[1] / n]
    } else {
        let f = (fallback[0] * fallback[0] + fallback[1] * fallback[1]).sqrt();
        if f > 1e-12 {
            [fallback[0] / f, fallback[1] / f]
        } else {
            [1.0, 0.0]
        }
    };
    pos[i] = clamp_point([from[0] + dir[0] * gap, from[1] + dir[1] * gap], bound);
    true
}

/// Advances positions in place by one control step.
pub fn step_in_place(layout: &Layout, pos: &mut [Point], action: &[Point]) {
    let ab = layout.action_bound;
    let gap = 2.0 * layout.radius;
    let objects = layout.objects();
    for r in layout.robots() {
        let a = action.get(r).copied().unwrap_or([0.0, 0.0]);
        let a = [a[0].clamp(-ab, ab), a[1].clamp(-ab, ab)];
        if a == [0.0, 0.0] {
            continue;
        }
        let p = clamp_point([pos[r][0] + a[0], pos[r][1] + a[1]], layout.bound);
        pos[r] = p;
        for o in objects.clone() {
            if push_out(pos, o, p, a, gap, layout.bound) {
                let po = pos[o];
                for q in objects.clone() {
                    if q != o {
                        push_out(pos, q, po, a, gap, layout.bound);
                    }
                }
            }
        }
    }
}

pub fn step_dynamics(w: &WorldState, action: &[Point]) -> WorldState {
    let mut next = w.clone();
    step_in_place(&w.layout, &mut next.pos, action);
    next
}
