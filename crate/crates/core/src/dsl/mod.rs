//! Reward code: a small Python-like language for weighted cost terms,
//! condition functions and sequencing.
//!
//! ```text
//! # Push the red disc onto the green marker.
//! reach(obj='red', weight=0.5)
//! min_l2_dist(obj1='red', obj2='green', weight=1.0)
//! ```
//!
//! [`parse_program`] builds the AST, [`print_program`] renders it in
//! canonical form and [`compile_segments`] resolves names against an
//! embodiment and splits the program at each `wait_until_condition`.

mod ast;
mod compile;
mod lexer;
mod parser;
mod printer;

pub use ast::{BinOp, CmpOp, Expr, Program, Stmt};
pub use compile::{
    check_transition, compile_segments, eval_cost, ActiveSegment, CompileError, CostTerm, EvalError, ProgramRunner,
    RewardSegment, TermKey,
};
pub use parser::{parse_program, ParseError};
pub use printer::{fmt_num, print_expr, print_program};

/// Callable names understood by the parser.
pub const API_FUNCTIONS: [&str; 5] = ["reach", "min_l2_dist", "set_target_pos", "wait_until_condition", "get_obj_pos"];

/// Parses and compiles in one go; the error is rendered as text.
pub fn parse_and_compile(
    source: &str,
    layout: &crate::world::Layout,
) -> Result<(Program, Vec<RewardSegment>), String> {
    let p = parse_program(source).map_err(|e| e.to_string())?;
    let segs = compile_segments(&p, layout).map_err(|e| e.to_string())?;
    Ok((p, segs))
}
