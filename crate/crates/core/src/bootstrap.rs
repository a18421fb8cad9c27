//! Scripted near-oracle robot used to collect the first teaching data.
//!
//! It knows the task it is being taught and writes the correct program with
//! a probability that grows with how many task details the teacher has
//! mentioned and with the turn index. Otherwise it makes one of a few
//! typical mistakes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::session::tokenize;
use crate::task::{Goal, TaskInstance};
use crate::teacher::{RobotPolicy, TurnContext};
use crate::util::Rng;
use crate::world::EntityKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mistake {
    WrongObject,
    WrongTarget,
    Incomplete,
    InvalidSyntax,
    RepeatPrevious,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPolicy {
    pub base_correct: f64,
    /// Added in proportion to the fraction of task details mentioned.
    pub per_mention: f64,
    pub per_turn: f64,
    pub max_correct: f64,
}

impl Default for BootstrapPolicy {
    fn default() -> Self {
        Self { base_correct: 0.2, per_mention: 0.5, per_turn: 0.1, max_correct: 0.95 }
    }
}

impl BootstrapPolicy {
    /// Probability of answering correctly given the conversation so far.
    pub fn p_correct(&self, inst: &TaskInstance, human_texts: &[&str], turn: usize) -> f64 {
        let slots = inst.task.slots();
        let mut heard = std::collections::HashSet::new();
        for h in human_texts {
            heard.extend(tokenize(h).into_inner());
        }
        let mentioned = slots.values().filter(|v| tokenize(v).iter().all(|t| heard.contains(t))).count();
        let frac = if slots.is_empty() { 1.0 } else { mentioned as f64 / slots.len() as f64 };
        (self.base_correct + self.per_mention * frac + self.per_turn * turn as f64).min(self.max_correct)
    }

    /// Code with the given mistake, or `None` when the mistake does not
    /// apply.
    pub fn mistaken_code(&self, inst: &TaskInstance, m: Mistake, previous: Option<&str>, rng: &mut Rng) -> Option<String> {
        let layout = &inst.initial.layout;
        let objects = layout.names_of(EntityKind::Object);
        let markers = layout.names_of(EntityKind::Marker);
        let pick_other = |rng: &mut Rng, pool: &[&str], not: &[&str]| -> Option<String> {
            let c: Vec<&str> = pool.iter().copied().filter(|n| !not.contains(n)).collect();
            (!c.is_empty()).then(|| c[rng.random_range(0..c.len())].to_owned())
        };
        let mut wrong = inst.clone();
        match m {
            Mistake::RepeatPrevious => return previous.map(str::to_owned),
            Mistake::InvalidSyntax => {
                let mut code = inst.ground_truth_program();
                let cut = code.rfind(')')?;
                code.remove(cut);
                return Some(code);
            }
            Mistake::Incomplete => {
                if wrong.task.goals.len() > 1 {
                    wrong.task.goals.truncate(1);
                    return Some(wrong.ground_truth_program());
                }
                let code = inst.ground_truth_program();
                let lines: Vec<&str> = code.lines().filter(|l| !l.starts_with("reach(")).collect();
                if lines.is_empty() {
                    return Some(code.replace("weight=1.0", "weight=0.0"));
                }
                return Some(lines.join("\n"));
            }
            Mistake::WrongObject => {
                let g = &mut wrong.task.goals[0];
                match g {
                    Goal::ObjectAt { object, .. } | Goal::ObjectOffset { object, .. } => {
                        *object = pick_other(rng, &objects, &[object.as_str()])?;
                    }
                    Goal::ObjectsTogether { object, other } => {
                        *object = pick_other(rng, &objects, &[object.as_str(), other.as_str()])?;
                    }
                    Goal::RobotAt { marker } => *marker = pick_other(rng, &markers, &[marker.as_str()])?,
                }
            }
            Mistake::WrongTarget => {
                let g = &mut wrong.task.goals[0];
                match g {
                    Goal::ObjectAt { marker, .. } | Goal::RobotAt { marker } => {
                        *marker = pick_other(rng, &markers, &[marker.as_str()])?;
                    }
                    Goal::ObjectOffset { dx, dy, .. } => {
                        *dx = -*dx;
                        *dy = -*dy;
                    }
                    Goal::ObjectsTogether { object, other } => {
                        *other = pick_other(rng, &objects, &[object.as_str(), other.as_str()])?;
                    }
                }
            }
        }
        Some(wrong.ground_truth_program())
    }
}

const MISTAKES: [Mistake; 5] =
    [Mistake::WrongObject, Mistake::WrongTarget, Mistake::Incomplete, Mistake::InvalidSyntax, Mistake::RepeatPrevious];

impl RobotPolicy for BootstrapPolicy {
    fn respond(&self, ctx: &TurnContext<'_>, rng: &mut Rng) -> Result<String, String> {
        let inst = ctx.instance;
        let mut texts: Vec<&str> = ctx.turns.iter().map(|t| t.human_text.as_str()).collect();
        texts.push(ctx.pending_human);
        let p = self.p_correct(inst, &texts, ctx.turns.len());
        if rng.random_bool(p) {
            return Ok(inst.ground_truth_program());
        }
        let previous = ctx.turns.last().map(|t| t.robot_code.as_str());
        loop {
            let m = MISTAKES[rng.random_range(0..MISTAKES.len())];
            if let Some(code) = self.mistaken_code(inst, m, previous, rng) {
                return Ok(code);
            }
        }
    }
}
