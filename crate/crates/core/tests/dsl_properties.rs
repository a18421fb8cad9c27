use std::sync::Arc;

use proptest::prelude::*;

use lmpc::dsl::{compile_segments, eval_cost, fmt_num, parse_program, print_program, BinOp, CmpOp, CostTerm, Expr, Program, Stmt};
use lmpc::world::{Layout, WorldState};

const OBJECTS: [&str; 5] = ["red", "blue", "yellow", "green", "purple"];
const DISCS: [&str; 3] = ["red", "blue", "yellow"];
const VARS: [&str; 2] = ["p0", "p1"];

fn num() -> impl Strategy<Value = f64> + Clone {
    prop_oneof![(0u32..20).prop_map(|v| f64::from(v) / 4.0), 0.0f64..1.0, 0.0f64..1e4]
}

fn vec_leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        prop::sample::select(&OBJECTS[..]).prop_map(|o| Expr::ObjPos(o.into())),
        prop::sample::select(&VARS[..]).prop_map(|v| Expr::Name(v.into())),
        (num(), num()).prop_map(|(a, b)| Expr::Tuple(Box::new(Expr::Num(a)), Box::new(Expr::Num(b)))),
    ]
}

fn num_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![num().prop_map(Expr::Num), (vec_leaf(), 0usize..2).prop_map(|(v, i)| Expr::Index(Box::new(v), i))];
    leaf.prop_recursive(3, 16, 2, |inner| {
        let ops = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]);
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (ops, inner.clone(), inner).prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
        ]
    })
}

fn vec_expr() -> impl Strategy<Value = Expr> {
    prop_oneof![
        vec_leaf(),
        (num_expr(), num_expr()).prop_map(|(a, b)| Expr::Tuple(Box::new(a), Box::new(b))),
        (vec_leaf(), vec_leaf(), any::<bool>()).prop_map(|(a, b, add)| {
            Expr::Bin(if add { BinOp::Add } else { BinOp::Sub }, Box::new(a), Box::new(b))
        }),
        (vec_leaf(), num_expr()).prop_map(|(a, b)| Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
    ]
}

/// Statement shapes; waits refer to "some earlier function" and are
/// resolved once the whole list is known.
#[derive(Clone, Debug)]
enum Raw {
    Stmt(Stmt),
    Def(Expr),
    Wait(usize),
}

fn raw_stmt() -> impl Strategy<Value = Raw> {
    let weight = prop::option::weighted(0.8, num());
    let cmp = prop::sample::select(vec![CmpOp::Ge, CmpOp::Le, CmpOp::Gt, CmpOp::Lt, CmpOp::Eq, CmpOp::Ne]);
    prop_oneof![
        "[a-z]{1,6}( [a-z]{1,6}){0,3}".prop_map(|c| Raw::Stmt(Stmt::Comment(c))),
        (prop::sample::select(&VARS[..]), prop::sample::select(&OBJECTS[..]))
            .prop_map(|(n, o)| Raw::Stmt(Stmt::Assign { name: n.into(), obj: o.into() })),
        (prop::sample::select(&OBJECTS[..]), weight.clone())
            .prop_map(|(o, weight)| Raw::Stmt(Stmt::Reach { obj: o.into(), weight })),
        (prop::sample::select(&OBJECTS[..]), prop::sample::select(&OBJECTS[..]), weight).prop_map(|(a, b, weight)| {
            Raw::Stmt(Stmt::MinL2Dist { obj1: a.into(), obj2: b.into(), weight })
        }),
        (prop::sample::select(&DISCS[..]), vec_expr())
            .prop_map(|(o, target)| Raw::Stmt(Stmt::SetTargetPos { obj: o.into(), target })),
        (cmp, num_expr(), num_expr()).prop_map(|(op, a, b)| Raw::Def(Expr::Cmp(op, Box::new(a), Box::new(b)))),
        any::<usize>().prop_map(Raw::Wait),
    ]
}

fn program() -> impl Strategy<Value = Program> {
    prop::collection::vec(raw_stmt(), 0..14).prop_map(|raw| {
        let mut statements: Vec<Stmt> =
            VARS.iter().map(|v| Stmt::Assign { name: (*v).into(), obj: "red".into() }).collect();
        let mut funcs = 0;
        for r in raw {
            statements.push(match r {
                Raw::Stmt(s) => s,
                Raw::Def(body) => {
                    funcs += 1;
                    Stmt::FuncDef { name: format!("cond{}", funcs - 1), body }
                }
                Raw::Wait(i) if funcs > 0 => Stmt::WaitUntil { func: format!("cond{}", i % funcs) },
                Raw::Wait(_) => Stmt::Comment("wait".into()),
            });
        }
        Program { statements }
    })
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [-1.0f64..1.0, -1.0f64..1.0]
}

#[derive(Clone, Debug)]
enum Term {
    Reach(usize, f64),
    Dist(usize, usize, f64),
    Target(usize, [f64; 2]),
}

fn term() -> impl Strategy<Value = Term> {
    prop_oneof![
        (0usize..5, 0.0f64..3.0).prop_map(|(o, w)| Term::Reach(o, w)),
        (0usize..5, 0usize..5, 0.0f64..3.0).prop_map(|(a, b, w)| Term::Dist(a, b, w)),
        (0usize..3, point()).prop_map(|(o, p)| Term::Target(o, p)),
    ]
}

fn source(terms: &[Term]) -> String {
    terms
        .iter()
        .map(|t| match t {
            Term::Reach(o, w) => format!("reach(obj='{}', weight={})", OBJECTS[*o], fmt_num(*w)),
            Term::Dist(a, b, w) => {
                format!("min_l2_dist(obj1='{}', obj2='{}', weight={})", OBJECTS[*a], OBJECTS[*b], fmt_num(*w))
            },
            Term::Target(o, p) => {
                format!("set_target_pos(obj='{}', ({}, {}))", DISCS[*o], fmt_num(p[0]), fmt_num(p[1]))
            },
        })
        .collect::<Vec<_>>()
        .join("\n")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_then_parse_is_identity(p in program()) {
        let text = print_program(&p);
        let back = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p);
    }

    #[test]
    fn one_segment_per_wait_plus_one(p in program()) {
        let layout = Layout::pusher();
        if let Ok(segs) = compile_segments(&p, &layout) {
            prop_assert_eq!(segs.len(), p.wait_count() + 1);
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(s.segment_index, i);
            }
        }
    }

    #[test]
    fn cost_is_nonnegative_and_lipschitz(
        terms in prop::collection::vec(term(), 0..6),
        pos in prop::collection::vec(point(), 6),
        who in 0usize..6,
        delta in [-0.2f64..0.2, -0.2f64..0.2],
    ) {
        let layout = Arc::new(Layout::pusher());
        let segs = compile_segments(&parse_program(&source(&terms)).unwrap(), &layout).unwrap();
        let seg = &segs[0];
        let w = WorldState::new(layout.clone(), pos.clone());
        let c0 = eval_cost(seg, &w).unwrap();
        prop_assert!(c0 >= 0.0);

        // Lipschitz bound for moving entity `who`: each term touching it
        // contributes its weight once per mention.
        let robot = layout.robots().start;
        let mut bound = 0.0;
        for t in seg.terms.values() {
            bound += match *t {
                CostTerm::Reach { obj, weight } => weight * (f64::from(u8::from(obj == who)) + f64::from(u8::from(robot == who))),
                CostTerm::MinL2Dist { a, b, weight } => weight * f64::from(u8::from(a == who) + u8::from(b == who)),
                CostTerm::TargetPos { obj, .. } => f64::from(u8::from(obj == who)),
            };
        }
        let mut moved = pos;
        moved[who] = [moved[who][0] + delta[0], moved[who][1] + delta[1]];
        let c1 = eval_cost(seg, &WorldState::new(layout, moved)).unwrap();
        let step = delta[0].hypot(delta[1]);
        prop_assert!(c1 >= 0.0);
        prop_assert!((c1 - c0).abs() <= bound * step + 1e-9, "|{} - {}| > {} * {}", c1, c0, bound, step);
    }
}
