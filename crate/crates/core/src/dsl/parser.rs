use std::collections::HashSet;

use thiserror::Error;

use super::ast::{BinOp, CmpOp, Expr, Program, Stmt};
use super::lexer::{lex, Spanned, Tok};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    SyntaxError { line: usize, column: usize, message: String },
    #[error("undefined name `{name}` at {line}:{column}")]
    UndefinedName { name: String, line: usize, column: usize },
    #[error("`{function}` expects {expected} argument(s), got {got} (at {line}:{column})")]
    ArityError { function: String, expected: String, got: usize, line: usize, column: usize },
}

impl ParseError {
    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseError::SyntaxError { line, column, message: message.into() }
    }

    pub fn line(&self) -> usize {
        match self {
            ParseError::SyntaxError { line, .. }
            | ParseError::UndefinedName { line, .. }
            | ParseError::ArityError { line, .. } => *line,
        }
    }
}

struct Arg {
    keyword: Option<String>,
    value: Expr,
    line: usize,
    col: usize,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    vars: HashSet<String>,
    funcs: HashSet<String>,
}

const KEYWORDS: [&str; 2] = ["def", "return"];

pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let mut p = Parser { toks: lex(source)?, pos: 0, vars: HashSet::new(), funcs: HashSet::new() };
    let mut statements = Vec::new();
    loop {
        p.skip_newlines();
        if p.pos >= p.toks.len() {
            break;
        }
        statements.push(p.statement()?);
    }
    Ok(Program { statements })
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos).or_else(|| self.toks.last()) {
            Some(t) => (t.line, t.col),
            None => (1, 1),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (l, c) = self.here();
        Err(ParseError::syntax(l, c, msg))
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Spanned { tok: Tok::Newline, .. })) {
            self.pos += 1;
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Punct(q), .. }) if *q == p)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.is_punct(p) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{p}`"))
        }
    }

    fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(s), .. }) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected a name"),
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(Spanned { tok: Tok::Newline, .. }) => {
                self.pos += 1;
                Ok(())
            }
            // a trailing comment becomes its own statement
            Some(Spanned { tok: Tok::Comment(_), .. }) => Ok(()),
            _ => self.err("expected end of line"),
        }
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let t = self.peek().cloned().expect("statement called at end of input");
        match &t.tok {
            Tok::Comment(text) => {
                self.pos += 1;
                let s = Stmt::Comment(text.clone());
                self.expect_end()?;
                Ok(s)
            }
            Tok::Ident(kw) if kw == "def" => self.func_def(),
            Tok::Ident(name) => {
                let name = name.clone();
                if matches!(self.toks.get(self.pos + 1), Some(Spanned { tok: Tok::Punct("="), .. })) {
                    self.assignment(name)
                } else if matches!(self.toks.get(self.pos + 1), Some(Spanned { tok: Tok::Punct("("), .. })) {
                    self.call_statement(name, t.line, t.col)
                } else {
                    self.pos += 1;
                    self.err("expected `=` or `(` after name")
                }
            }
            _ => self.err("expected a statement"),
        }
    }

    fn assignment(&mut self, name: String) -> Result<Stmt, ParseError> {
        if KEYWORDS.contains(&name.as_str()) || super::API_FUNCTIONS.contains(&name.as_str()) {
            return self.err(format!("cannot assign to `{name}`"));
        }
        self.pos += 2;
        let (l, c) = self.here();
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(f), .. }) if f == "get_obj_pos" => {}
            _ => return Err(ParseError::syntax(l, c, "right-hand side must be get_obj_pos(...)")),
        }
        self.pos += 1;
        let args = self.call_args()?;
        let obj = self.single_obj_arg("get_obj_pos", args, l, c)?;
        self.expect_end()?;
        self.vars.insert(name.clone());
        Ok(Stmt::Assign { name, obj })
    }

    fn func_def(&mut self) -> Result<Stmt, ParseError> {
        self.pos += 1;
        let name = self.expect_ident()?;
        self.expect_punct("(")?;
        if !self.is_punct(")") {
            return self.err("condition functions take no parameters");
        }
        self.expect_punct(")")?;
        self.expect_punct(":")?;
        self.skip_newlines();
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(r), .. }) if r == "return" => self.pos += 1,
            _ => return self.err("expected `return`"),
        }
        let body = self.expr()?;
        self.expect_end()?;
        self.funcs.insert(name.clone());
        Ok(Stmt::FuncDef { name, body })
    }

    fn call_statement(&mut self, name: String, line: usize, col: usize) -> Result<Stmt, ParseError> {
        self.pos += 1;
        if name == "wait_until_condition" {
            return self.wait_statement(line, col);
        }
        let args = self.call_args()?;
        let stmt = match name.as_str() {
            "reach" => {
                let mut v = bind_args(&name, args, &["obj", "weight"], 1, line, col)?;
                let weight = take_weight(&mut v, 1)?;
                Stmt::Reach { obj: take_str(&mut v, 0, "obj")?, weight }
            }
            "min_l2_dist" => {
                let mut v = bind_args(&name, args, &["obj1", "obj2", "weight"], 2, line, col)?;
                let weight = take_weight(&mut v, 2)?;
                Stmt::MinL2Dist { obj1: take_str(&mut v, 0, "obj1")?, obj2: take_str(&mut v, 1, "obj2")?, weight }
            }
            "set_target_pos" => {
                let mut v = bind_args(&name, args, &["obj", "target"], 2, line, col)?;
                let target = v[1].take().expect("required argument bound").value;
                Stmt::SetTargetPos { obj: take_str(&mut v, 0, "obj")?, target }
            }
            "get_obj_pos" => return Err(ParseError::syntax(line, col, "get_obj_pos result is unused")),
            _ => return Err(ParseError::UndefinedName { name, line, column: col }),
        };
        self.expect_end()?;
        Ok(stmt)
    }

    fn wait_statement(&mut self, line: usize, col: usize) -> Result<Stmt, ParseError> {
        self.expect_punct("(")?;
        let (l, c) = self.here();
        let func = match self.peek() {
            Some(Spanned { tok: Tok::Ident(n), .. }) if !KEYWORDS.contains(&n.as_str()) => n.clone(),
            Some(Spanned { tok: Tok::Punct(")"), .. }) => {
                return Err(ParseError::ArityError {
                    function: "wait_until_condition".into(),
                    expected: "1".into(),
                    got: 0,
                    line,
                    column: col,
                })
            }
            _ => return Err(ParseError::syntax(l, c, "expected a condition function name")),
        };
        self.pos += 1;
        if self.is_punct(",") {
            return Err(ParseError::ArityError {
                function: "wait_until_condition".into(),
                expected: "1".into(),
                got: 2,
                line,
                column: col,
            });
        }
        self.expect_punct(")")?;
        if !self.funcs.contains(&func) {
            return Err(ParseError::UndefinedName { name: func, line: l, column: c });
        }
        self.expect_end()?;
        Ok(Stmt::WaitUntil { func })
    }

    fn single_obj_arg(&self, func: &str, args: Vec<Arg>, line: usize, col: usize) -> Result<String, ParseError> {
        let mut v = bind_args(func, args, &["obj"], 1, line, col)?;
        take_str(&mut v, 0, "obj")
    }

    /// Parses `( arg, ... )` after the callee name.
    fn call_args(&mut self) -> Result<Vec<Arg>, ParseError> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if self.is_punct(")") {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            let (line, col) = self.here();
            let keyword = match (self.peek(), self.toks.get(self.pos + 1)) {
                (Some(Spanned { tok: Tok::Ident(k), .. }), Some(Spanned { tok: Tok::Punct("="), .. })) => {
                    let k = k.clone();
                    self.pos += 2;
                    Some(k)
                }
                _ => None,
            };
            let value = self.expr()?;
            args.push(Arg { keyword, value, line, col });
            if self.is_punct(",") {
                self.pos += 1;
                continue;
            }
            self.expect_punct(")")?;
            return Ok(args);
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Some(Spanned { tok: Tok::Punct(p), .. }) => match *p {
                ">=" => Some(CmpOp::Ge),
                "<=" => Some(CmpOp::Le),
                ">" => Some(CmpOp::Gt),
                "<" => Some(CmpOp::Lt),
                "==" => Some(CmpOp::Eq),
                "!=" => Some(CmpOp::Ne),
                _ => None,
            },
            _ => None,
        };
        match op {
            None => Ok(lhs),
            Some(op) => {
                self.pos += 1;
                let rhs = self.additive()?;
                if matches!(self.peek(), Some(Spanned { tok: Tok::Punct(p), .. }) if [">=", "<=", ">", "<", "==", "!="].contains(p))
                {
                    return self.err("chained comparisons are not supported");
                }
                Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
            }
        }
    }

    fn binary_level(&mut self, ops: &[(&str, BinOp)], next: fn(&mut Self) -> Result<Expr, ParseError>) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        loop {
            let op = match self.peek() {
                Some(Spanned { tok: Tok::Punct(p), .. }) => ops.iter().find(|(s, _)| s == p).map(|(_, o)| *o),
                _ => None,
            };
            match op {
                Some(op) => {
                    self.pos += 1;
                    let rhs = next(self)?;
                    lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
                }
                None => return Ok(lhs),
            }
        }
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[("+", BinOp::Add), ("-", BinOp::Sub)], Self::multiplicative)
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[("*", BinOp::Mul), ("/", BinOp::Div)], Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_punct("-") {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while self.is_punct("[") {
            self.pos += 1;
            let idx = match self.peek() {
                Some(Spanned { tok: Tok::Num(v), .. }) if v.fract() == 0.0 && *v < 1e9 => *v as usize,
                _ => return self.err("index must be a non-negative integer literal"),
            };
            self.pos += 1;
            self.expect_punct("]")?;
            e = Expr::Index(Box::new(e), idx);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = match self.peek() {
            Some(t) => t.clone(),
            None => return self.err("unexpected end of input"),
        };
        match t.tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::Str(s) => {
                self.pos += 1;
                Ok(Expr::Str(s))
            }
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                if self.toks.get(self.pos + 1).is_some_and(|n| n.tok == Tok::Punct("(")) {
                    self.pos += 1;
                    if name != "get_obj_pos" {
                        return Err(ParseError::UndefinedName { name, line: t.line, column: t.col });
                    }
                    let args = self.call_args()?;
                    let obj = self.single_obj_arg(&name, args, t.line, t.col)?;
                    return Ok(Expr::ObjPos(obj));
                }
                if !self.vars.contains(&name) {
                    return Err(ParseError::UndefinedName { name, line: t.line, column: t.col });
                }
                self.pos += 1;
                Ok(Expr::Name(name))
            }
            Tok::Punct("(") => {
                self.pos += 1;
                let first = self.expr()?;
                if self.is_punct(",") {
                    self.pos += 1;
                    let second = self.expr()?;
                    self.expect_punct(")")?;
                    Ok(Expr::Tuple(Box::new(first), Box::new(second)))
                } else {
                    self.expect_punct(")")?;
                    Ok(first)
                }
            }
            _ => self.err("expected an expression"),
        }
    }
}

/// Matches keyword and positional arguments to parameter slots. Positional
/// arguments fill the slots left open by keywords, in order.
fn bind_args(
    func: &str,
    args: Vec<Arg>,
    params: &[&str],
    required: usize,
    line: usize,
    col: usize,
) -> Result<Vec<Option<Arg>>, ParseError> {
    let arity = |got| ParseError::ArityError {
        function: func.to_owned(),
        expected: if required == params.len() {
            format!("{required}")
        } else {
            format!("{required} to {}", params.len())
        },
        got,
        line,
        column: col,
    };
    let n = args.len();
    if n > params.len() {
        return Err(arity(n));
    }
    let mut slots: Vec<Option<Arg>> = params.iter().map(|_| None).collect();
    let mut positional = Vec::new();
    for a in args {
        match &a.keyword {
            Some(k) => {
                let i = params.iter().position(|p| p == k).ok_or_else(|| {
                    ParseError::syntax(a.line, a.col, format!("`{func}` has no parameter `{k}`"))
                })?;
                if slots[i].is_some() {
                    return Err(ParseError::syntax(a.line, a.col, format!("parameter `{k}` given twice")));
                }
                slots[i] = Some(a);
            }
            None => positional.push(a),
        }
    }
    let mut free = (0..params.len()).filter(|i| slots[*i].is_none()).collect::<Vec<_>>().into_iter();
    for a in positional {
        let i = free.next().ok_or_else(|| arity(n))?;
        slots[i] = Some(a);
    }
    if slots[..required].iter().any(Option::is_none) {
        return Err(arity(n));
    }
    Ok(slots)
}

fn take_str(slots: &mut [Option<Arg>], i: usize, what: &str) -> Result<String, ParseError> {
    let a = slots[i].take().expect("required argument bound");
    match a.value {
        Expr::Str(s) => Ok(s),
        _ => Err(ParseError::syntax(a.line, a.col, format!("`{what}` must be a string literal"))),
    }
}

fn take_weight(slots: &mut [Option<Arg>], i: usize) -> Result<Option<f64>, ParseError> {
    match slots[i].take() {
        None => Ok(None),
        Some(Arg { value: Expr::Num(v), .. }) => Ok(Some(v)),
        Some(a) => Err(ParseError::syntax(a.line, a.col, "weight must be a non-negative number literal")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_source() {
        assert_eq!(parse_program("").unwrap(), Program::default());
        assert_eq!(parse_program("\n\n  \n").unwrap(), Program::default());
    }

    #[test]
    fn undefined_condition() {
        assert!(matches!(
            parse_program("wait_until_condition(undefined_fn)"),
            Err(ParseError::UndefinedName { name, line: 1, column: 22 }) if name == "undefined_fn"
        ));
    }

    #[test]
    fn unknown_function() {
        assert!(matches!(
            parse_program("fly(obj='red')"),
            Err(ParseError::UndefinedName { name, .. }) if name == "fly"
        ));
    }

    #[test]
    fn arity() {
        assert!(matches!(parse_program("reach()"), Err(ParseError::ArityError { got: 0, .. })));
        assert!(matches!(
            parse_program("min_l2_dist('a', 'b', 1.0, 2.0)"),
            Err(ParseError::ArityError { got: 4, .. })
        ));
    }

    #[test]
    fn positional_and_keyword_mix() {
        let p = parse_program("min_l2_dist('a', 'b', 1.0)\nset_target_pos(obj='red', (0.1, -0.2))").unwrap();
        assert_eq!(
            p.statements[0],
            Stmt::MinL2Dist { obj1: "a".into(), obj2: "b".into(), weight: Some(1.0) }
        );
        assert!(matches!(&p.statements[1], Stmt::SetTargetPos { obj, target: Expr::Tuple(..) } if obj == "red"));
    }

    #[test]
    fn two_line_def() {
        let src = "def up():\n    return get_obj_pos(obj='red')[1] >= 0.25\nwait_until_condition(up)";
        let p = parse_program(src).unwrap();
        assert_eq!(p.statements.len(), 2);
        assert_eq!(p.wait_count(), 1);
    }

    #[test]
    fn use_before_definition() {
        assert!(matches!(
            parse_program("set_target_pos(obj='red', (pos[0], pos[1]))\npos = get_obj_pos(obj='red')"),
            Err(ParseError::UndefinedName { .. })
        ));
    }

    #[test]
    fn syntax_errors_have_positions() {
        match parse_program("reach(obj='red'") {
            Err(ParseError::SyntaxError { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_program("reach(obj='red', weight=-1.0)").is_err());
        assert!(parse_program("def f(): return 1 < 2 < 3").is_err());
    }

    #[test]
    fn trailing_comment_is_a_statement() {
        let p = parse_program("reach(obj='red')  # go").unwrap();
        assert_eq!(p.statements.len(), 2);
        assert_eq!(p.statements[1], Stmt::Comment("go".into()));
    }
}
