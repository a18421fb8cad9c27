use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::ast::{BinOp, CmpOp, Expr, Program, Stmt};
use crate::world::{dist, EntityKind, Layout, Point, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("condition function `{0}` does not return a boolean")]
    NonBooleanCondition(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("undefined name `{0}`")]
    UndefinedName(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("index {0} is out of range for a 2D position")]
    IndexOutOfRange(usize),
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
}

/// Identity of a cost term; setting a term again with the same key
/// replaces it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TermKey {
    Reach(String),
    /// Object names in sorted order.
    MinL2Dist(String, String),
    TargetPos(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Ty {
    Num,
    Vec,
    Bool,
}

/// Type-checked expression with entity names resolved to layout indices
/// and variables resolved to snapshot slots.
#[derive(Clone, Debug, PartialEq)]
pub enum TypedExpr {
    Num(f64),
    Pos(usize),
    Var(usize),
    Tuple(Box<TypedExpr>, Box<TypedExpr>),
    Index(Box<TypedExpr>, usize),
    Neg(Box<TypedExpr>),
    Bin(BinOp, Box<TypedExpr>, Box<TypedExpr>),
    Cmp(CmpOp, Box<TypedExpr>, Box<TypedExpr>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Val {
    Num(f64),
    Vec(Point),
    Bool(bool),
}

impl TypedExpr {
    fn eval(&self, pos: &[Point], env: &[Point]) -> Result<Val, EvalError> {
        Ok(match self {
            TypedExpr::Num(v) => Val::Num(*v),
            TypedExpr::Pos(i) => Val::Vec(pos[*i]),
            TypedExpr::Var(s) => Val::Vec(env[*s]),
            TypedExpr::Tuple(a, b) => Val::Vec([a.num(pos, env)?, b.num(pos, env)?]),
            TypedExpr::Index(e, i) => match e.eval(pos, env)? {
                Val::Vec(v) if *i < 2 => Val::Num(v[*i]),
                Val::Vec(_) => return Err(EvalError::IndexOutOfRange(*i)),
                _ => unreachable!("index on non-vector passed type checking"),
            },
            TypedExpr::Neg(e) => match e.eval(pos, env)? {
                Val::Num(v) => Val::Num(-v),
                Val::Vec(v) => Val::Vec([-v[0], -v[1]]),
                Val::Bool(_) => unreachable!(),
            },
            TypedExpr::Bin(op, a, b) => {
                let (a, b) = (a.eval(pos, env)?, b.eval(pos, env)?);
                let f = |x: f64, y: f64| match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                };
                match (a, b) {
                    (Val::Num(x), Val::Num(y)) => Val::Num(f(x, y)),
                    (Val::Vec(x), Val::Vec(y)) => Val::Vec([f(x[0], y[0]), f(x[1], y[1])]),
                    (Val::Vec(x), Val::Num(y)) => Val::Vec([f(x[0], y), f(x[1], y)]),
                    (Val::Num(x), Val::Vec(y)) => Val::Vec([f(x, y[0]), f(x, y[1])]),
                    _ => unreachable!(),
                }
            }
            TypedExpr::Cmp(op, a, b) => Val::Bool(op.apply(a.num(pos, env)?, b.num(pos, env)?)),
        })
    }

    fn num(&self, pos: &[Point], env: &[Point]) -> Result<f64, EvalError> {
        match self.eval(pos, env)? {
            Val::Num(v) => Ok(v),
            _ => unreachable!("numeric slot passed type checking"),
        }
    }

    fn point(&self, pos: &[Point], env: &[Point]) -> Result<Point, EvalError> {
        match self.eval(pos, env)? {
            Val::Vec(v) if v[0].is_finite() && v[1].is_finite() => Ok(v),
            Val::Vec(_) => Err(EvalError::NonFinite),
            _ => unreachable!(),
        }
    }

    fn truth(&self, pos: &[Point], env: &[Point]) -> Result<bool, EvalError> {
        match self.eval(pos, env)? {
            Val::Bool(b) => Ok(b),
            _ => unreachable!(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CostTerm {
    Reach { obj: usize, weight: f64 },
    MinL2Dist { a: usize, b: usize, weight: f64 },
    /// Target expression evaluated when segment `origin` is entered.
    TargetPos { obj: usize, target: TypedExpr, origin: usize },
}

impl CostTerm {
    pub fn weight(&self) -> f64 {
        match self {
            CostTerm::Reach { weight, .. } | CostTerm::MinL2Dist { weight, .. } => *weight,
            CostTerm::TargetPos { .. } => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub func: String,
    pub expr: TypedExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardSegment {
    pub segment_index: usize,
    pub terms: BTreeMap<TermKey, CostTerm>,
    pub transition: Option<Condition>,
    /// `(slot, entity)` pairs captured on entry to this segment.
    pub bindings: Vec<(usize, usize)>,
    slot_entities: Arc<[usize]>,
    schema: Arc<[String]>,
}

impl RewardSegment {
    pub fn is_terminal(&self) -> bool {
        self.transition.is_none()
    }
}

struct Compiler<'a> {
    layout: &'a Layout,
    vars: HashMap<String, usize>,
    slot_entities: Vec<usize>,
    funcs: HashMap<String, TypedExpr>,
}

impl Compiler<'_> {
    fn entity(&self, name: &str) -> Result<usize, CompileError> {
        self.layout.index_of(name).ok_or_else(|| CompileError::UnknownObject(name.to_owned()))
    }

    fn check(&self, e: &Expr) -> Result<(TypedExpr, Ty), CompileError> {
        let bx = Box::new;
        Ok(match e {
            Expr::Num(v) => (TypedExpr::Num(*v), Ty::Num),
            Expr::Str(s) => return Err(CompileError::TypeError(format!("string '{s}' used as a value"))),
            Expr::Name(n) => {
                let slot = *self.vars.get(n).ok_or_else(|| CompileError::UndefinedName(n.clone()))?;
                (TypedExpr::Var(slot), Ty::Vec)
            }
            Expr::ObjPos(o) => (TypedExpr::Pos(self.entity(o)?), Ty::Vec),
            Expr::Tuple(a, b) => {
                let (ta, ya) = self.check(a)?;
                let (tb, yb) = self.check(b)?;
                if ya != Ty::Num || yb != Ty::Num {
                    return Err(CompileError::TypeError("tuple components must be numbers".into()));
                }
                (TypedExpr::Tuple(bx(ta), bx(tb)), Ty::Vec)
            }
            Expr::Index(inner, i) => {
                let (t, y) = self.check(inner)?;
                if y != Ty::Vec {
                    return Err(CompileError::TypeError("only positions can be indexed".into()));
                }
                (TypedExpr::Index(bx(t), *i), Ty::Num)
            }
            Expr::Neg(inner) => {
                let (t, y) = self.check(inner)?;
                if y == Ty::Bool {
                    return Err(CompileError::TypeError("cannot negate a comparison".into()));
                }
                (TypedExpr::Neg(bx(t)), y)
            }
            Expr::Bin(op, a, b) => {
                let (ta, ya) = self.check(a)?;
                let (tb, yb) = self.check(b)?;
                let ty = match (op, ya, yb) {
                    (_, Ty::Num, Ty::Num) => Ty::Num,
                    (BinOp::Add | BinOp::Sub, Ty::Vec, Ty::Vec) => Ty::Vec,
                    (BinOp::Mul, Ty::Vec, Ty::Num) | (BinOp::Mul, Ty::Num, Ty::Vec) => Ty::Vec,
                    (BinOp::Div, Ty::Vec, Ty::Num) => Ty::Vec,
                    _ => {
                        return Err(CompileError::TypeError(format!(
                            "operator `{}` does not apply to these operands",
                            op.symbol()
                        )))
                    }
                };
                (TypedExpr::Bin(*op, bx(ta), bx(tb)), ty)
            }
            Expr::Cmp(op, a, b) => {
                let (ta, ya) = self.check(a)?;
                let (tb, yb) = self.check(b)?;
                if ya != Ty::Num || yb != Ty::Num {
                    return Err(CompileError::TypeError("comparisons take numbers".into()));
                }
                (TypedExpr::Cmp(*op, bx(ta), bx(tb)), Ty::Bool)
            }
        })
    }
}

fn check_weight(w: Option<f64>) -> Result<f64, CompileError> {
    let w = w.unwrap_or(1.0);
    if w >= 0.0 && w.is_finite() {
        Ok(w)
    } else {
        Err(CompileError::TypeError(format!("weight {w} must be non-negative")))
    }
}

/// Splits the program at each `wait_until_condition`. Every segment starts
/// from the terms of the previous one; a term set with weight 0 is removed.
pub fn compile_segments(p: &Program, layout: &Layout) -> Result<Vec<RewardSegment>, CompileError> {
    let mut c = Compiler { layout, vars: HashMap::new(), slot_entities: Vec::new(), funcs: HashMap::new() };
    let mut done: Vec<(usize, BTreeMap<TermKey, CostTerm>, Option<Condition>, Vec<(usize, usize)>)> = Vec::new();
    let mut index = 0;
    let mut terms: BTreeMap<TermKey, CostTerm> = BTreeMap::new();
    let mut bindings = Vec::new();
    for s in &p.statements {
        match s {
            Stmt::Comment(_) => {}
            Stmt::Assign { name, obj } => {
                let e = c.entity(obj)?;
                let slot = c.slot_entities.len();
                c.slot_entities.push(e);
                c.vars.insert(name.clone(), slot);
                bindings.push((slot, e));
            }
            Stmt::Reach { obj, weight } => {
                let e = c.entity(obj)?;
                if layout.kind(e) == EntityKind::Robot {
                    return Err(CompileError::TypeError(format!("reach target `{obj}` is a robot")));
                }
                let w = check_weight(*weight)?;
                let key = TermKey::Reach(obj.clone());
                if w == 0.0 {
                    terms.remove(&key);
                } else {
                    terms.insert(key, CostTerm::Reach { obj: e, weight: w });
                }
            }
            Stmt::MinL2Dist { obj1, obj2, weight } => {
                let (n1, n2) = if obj1 <= obj2 { (obj1, obj2) } else { (obj2, obj1) };
                let (a, b) = (c.entity(n1)?, c.entity(n2)?);
                let w = check_weight(*weight)?;
                let key = TermKey::MinL2Dist(n1.clone(), n2.clone());
                if w == 0.0 {
                    terms.remove(&key);
                } else {
                    terms.insert(key, CostTerm::MinL2Dist { a, b, weight: w });
                }
            }
            Stmt::SetTargetPos { obj, target } => {
                let e = c.entity(obj)?;
                if layout.kind(e) == EntityKind::Marker {
                    return Err(CompileError::TypeError(format!("marker `{obj}` cannot be moved")));
                }
                let (t, ty) = c.check(target)?;
                if ty != Ty::Vec {
                    return Err(CompileError::TypeError("target must be a 2D position".into()));
                }
                terms.insert(TermKey::TargetPos(obj.clone()), CostTerm::TargetPos { obj: e, target: t, origin: index });
            }
            Stmt::FuncDef { name, body } => {
                let (t, ty) = c.check(body)?;
                if ty != Ty::Bool {
                    return Err(CompileError::NonBooleanCondition(name.clone()));
                }
                c.funcs.insert(name.clone(), t);
            }
            Stmt::WaitUntil { func } => {
                let expr = c.funcs.get(func).cloned().ok_or_else(|| CompileError::UndefinedName(func.clone()))?;
                let cond = Condition { func: func.clone(), expr };
                done.push((index, terms.clone(), Some(cond), std::mem::take(&mut bindings)));
                index += 1;
            }
        }
    }
    done.push((index, terms, None, bindings));
    let slot_entities: Arc<[usize]> = c.slot_entities.into();
    let schema: Arc<[String]> = layout.entities.iter().map(|e| e.name.clone()).collect();
    Ok(done
        .into_iter()
        .map(|(segment_index, terms, transition, bindings)| RewardSegment {
            segment_index,
            terms,
            transition,
            bindings,
            slot_entities: Arc::clone(&slot_entities),
            schema: Arc::clone(&schema),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
enum ActiveTerm {
    Reach { obj: usize, weight: f64 },
    MinL2Dist { a: usize, b: usize, weight: f64 },
    Target { obj: usize, point: Point },
}

/// A segment bound to concrete snapshot values, ready for fast evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSegment {
    pub segment_index: usize,
    terms: Vec<ActiveTerm>,
    transition: Option<TypedExpr>,
    env: Vec<Point>,
    n_robots: usize,
}

impl ActiveSegment {
    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.transition.is_none()
    }

    /// Weighted sum of distances; never negative.
    pub fn cost(&self, pos: &[Point]) -> f64 {
        let mut c = 0.0;
        for t in &self.terms {
            c += match *t {
                ActiveTerm::Reach { obj, weight } => {
                    let mut best = f64::INFINITY;
                    for r in 0..self.n_robots {
                        best = best.min(dist(pos[r], pos[obj]));
                    }
                    weight * best
                }
                ActiveTerm::MinL2Dist { a, b, weight } => weight * dist(pos[a], pos[b]),
                ActiveTerm::Target { obj, point } => dist(pos[obj], point),
            };
        }
        c
    }

    pub fn transition_fired(&self, pos: &[Point]) -> Result<bool, EvalError> {
        match &self.transition {
            None => Ok(false),
            Some(e) => e.truth(pos, &self.env),
        }
    }
}

/// Walks a compiled program segment by segment, carrying snapshot values
/// and resolved targets forward.
#[derive(Clone, Debug)]
pub struct ProgramRunner {
    segments: Vec<RewardSegment>,
    env: Vec<Point>,
    targets: HashMap<TermKey, Point>,
}

impl ProgramRunner {
    pub fn new(segments: Vec<RewardSegment>) -> Self {
        let n = segments.first().map(|s| s.slot_entities.len()).unwrap_or(0);
        Self { segments, env: vec![[0.0, 0.0]; n], targets: HashMap::new() }
    }

    pub fn segments(&self) -> &[RewardSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Enters segment `idx` in world `w`: captures its bindings, then
    /// resolves the targets it introduces.
    pub fn enter(&mut self, idx: usize, w: &WorldState) -> Result<ActiveSegment, EvalError> {
        let seg = &self.segments[idx];
        check_schema(seg, w)?;
        for &(slot, e) in &seg.bindings {
            self.env[slot] = w.pos[e];
        }
        let mut terms = Vec::with_capacity(seg.terms.len());
        for (key, t) in &seg.terms {
            terms.push(match t {
                CostTerm::Reach { obj, weight } => ActiveTerm::Reach { obj: *obj, weight: *weight },
                CostTerm::MinL2Dist { a, b, weight } => ActiveTerm::MinL2Dist { a: *a, b: *b, weight: *weight },
                CostTerm::TargetPos { obj, target, origin } => {
                    let point = match self.targets.get(key) {
                        Some(p) if *origin < idx => *p,
                        _ => {
                            let p = target.point(&w.pos, &self.env)?;
                            self.targets.insert(key.clone(), p);
                            p
                        }
                    };
                    ActiveTerm::Target { obj: *obj, point }
                }
            });
        }
        Ok(ActiveSegment {
            segment_index: idx,
            terms,
            transition: seg.transition.as_ref().map(|c| c.expr.clone()),
            env: self.env.clone(),
            n_robots: w.layout.n_robots,
        })
    }
}

fn check_schema(seg: &RewardSegment, w: &WorldState) -> Result<(), EvalError> {
    let same = w.layout.entities.len() == seg.schema.len()
        && w.layout.entities.iter().zip(seg.schema.iter()).all(|(e, n)| &e.name == n);
    if same {
        return Ok(());
    }
    let missing = seg
        .schema
        .iter()
        .enumerate()
        .find(|(i, n)| w.layout.entities.get(*i).map(|e| &e.name) != Some(*n))
        .map(|(_, n)| n.clone())
        .unwrap_or_default();
    Err(EvalError::UnknownObject(missing))
}

/// Activates a single segment with every snapshot taken from `w`.
fn activate_alone(seg: &RewardSegment, w: &WorldState) -> Result<ActiveSegment, EvalError> {
    check_schema(seg, w)?;
    let mut r = ProgramRunner {
        segments: vec![seg.clone()],
        env: seg.slot_entities.iter().map(|&e| w.pos[e]).collect(),
        targets: HashMap::new(),
    };
    let mut a = r.enter(0, w)?;
    a.segment_index = seg.segment_index;
    Ok(a)
}

/// Cost of a segment in world `w`, with positions snapshotted from `w`.
pub fn eval_cost(seg: &RewardSegment, w: &WorldState) -> Result<f64, EvalError> {
    Ok(activate_alone(seg, w)?.cost(&w.pos))
}

/// Whether the segment's transition predicate holds in `w`. Terminal
/// segments never transition.
pub fn check_transition(seg: &RewardSegment, w: &WorldState) -> Result<bool, EvalError> {
    activate_alone(seg, w)?.transition_fired(&w.pos)
}
