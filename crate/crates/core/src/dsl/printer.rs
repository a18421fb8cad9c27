use super::ast::{Expr, Program, Stmt};

/// Shortest round-tripping decimal, always with a fractional part.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn fmt_str(s: &str) -> String {
    if s.contains('\'') {
        format!("\"{s}\"")
    } else {
        format!("'{s}'")
    }
}

// precedence: comparison 1, additive 2, multiplicative 3, unary 4, postfix/atom 5
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Cmp(..) => 1,
        Expr::Bin(op, ..) => op.precedence(),
        Expr::Neg(_) => 4,
        _ => 5,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    let s = print_expr(e);
    if prec(e) < min {
        format!("({s})")
    } else {
        s
    }
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Num(v) => fmt_num(*v),
        Expr::Str(s) => fmt_str(s),
        Expr::Name(n) => n.clone(),
        Expr::ObjPos(o) => format!("get_obj_pos(obj={})", fmt_str(o)),
        Expr::Tuple(a, b) => format!("({}, {})", print_expr(a), print_expr(b)),
        Expr::Index(inner, i) => format!("{}[{i}]", wrap(inner, 5)),
        Expr::Neg(inner) => format!("-{}", wrap(inner, 4)),
        Expr::Bin(op, a, b) => {
            let p = op.precedence();
            // left-associative: the right operand needs parentheses at equal precedence
            format!("{} {} {}", wrap(a, p), op.symbol(), wrap(b, p + 1))
        }
        Expr::Cmp(op, a, b) => format!("{} {} {}", wrap(a, 2), op.symbol(), wrap(b, 2)),
    }
}

fn weight_suffix(w: Option<f64>) -> String {
    w.map(|w| format!(", weight={}", fmt_num(w))).unwrap_or_default()
}

pub fn print_stmt(s: &Stmt) -> String {
    match s {
        Stmt::Comment(t) if t.is_empty() => "#".to_owned(),
        Stmt::Comment(t) => format!("# {t}"),
        Stmt::Assign { name, obj } => format!("{name} = get_obj_pos(obj={})", fmt_str(obj)),
        Stmt::Reach { obj, weight } => format!("reach(obj={}{})", fmt_str(obj), weight_suffix(*weight)),
        Stmt::MinL2Dist { obj1, obj2, weight } => format!(
            "min_l2_dist(obj1={}, obj2={}{})",
            fmt_str(obj1),
            fmt_str(obj2),
            weight_suffix(*weight)
        ),
        Stmt::SetTargetPos { obj, target } => {
            format!("set_target_pos(obj={}, {})", fmt_str(obj), print_expr(target))
        }
        Stmt::FuncDef { name, body } => format!("def {name}(): return {}", print_expr(body)),
        Stmt::WaitUntil { func } => format!("wait_until_condition({func})"),
    }
}

/// Canonical source text, one statement per line.
pub fn print_program(p: &Program) -> String {
    p.statements.iter().map(print_stmt).collect::<Vec<_>>().join("\n")
}
