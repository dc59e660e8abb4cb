//! Expressions over integers, booleans and transaction statuses.
//!
//! ```text
//! expr    := or ("=>" expr)?
//! or      := and ("||" and)*
//! and     := not ("&&" not)*
//! not     := "!" not | cmp
//! cmp     := sum (("=" | "==" | "!=" | "<" | "<=" | ">" | ">=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary ("*" unary)*
//! unary   := "-" unary | atom
//! atom    := int | "true" | "false" | "committed" | "aborted"
//!          | name | name "." name | "(" expr ")"
//! ```
//!
//! `⟹ ∧ ∨ ¬ ≠ ≤ ≥` are accepted as aliases. In a boolean position a nonzero
//! integer counts as true.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Committed,
    Aborted,
}

/// A runtime value: thread locals hold integers or statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(untagged)]
pub enum Val {
    Int(i64),
    Bool(bool),
    Status(Status),
}

impl Val {
    pub fn truthy(self) -> Result<bool, EvalError> {
        match self {
            Val::Bool(b) => Ok(b),
            Val::Int(i) => Ok(i != 0),
            Val::Status(_) => Err(EvalError::Type("status used as a condition".into())),
        }
    }

    fn int(self) -> Result<i64, EvalError> {
        match self {
            Val::Int(i) => Ok(i),
            other => Err(EvalError::Type(format!("{other} is not an integer"))),
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Int(i) => write!(f, "{i}"),
            Val::Bool(b) => write!(f, "{b}"),
            Val::Status(Status::Committed) => f.write_str("committed"),
            Val::Status(Status::Aborted) => f.write_str("aborted"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Implies,
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Implies => "=>",
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(Val),
    /// A name, optionally qualified by a thread as in `t2.l`.
    Var { thread: Option<u32>, name: String },
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected character {ch:?} at byte {at}")]
    BadChar { ch: char, at: usize },
    #[error("integer literal out of range at byte {0}")]
    Overflow(usize),
    #[error("expected {expected} at byte {at}")]
    Expected { expected: &'static str, at: usize },
    #[error("trailing input at byte {0}")]
    Trailing(usize),
    #[error("expression nested too deeply")]
    TooDeep,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown name {0}")]
    Unbound(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("arithmetic overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Ident(String),
    Dot,
    LParen,
    RParen,
    Not,
    Minus,
    Op(BinOp),
}

fn single(c: char) -> Option<Tok> {
    Some(match c {
        '.' => Tok::Dot,
        '(' => Tok::LParen,
        ')' => Tok::RParen,
        '+' => Tok::Op(BinOp::Add),
        '*' => Tok::Op(BinOp::Mul),
        '-' => Tok::Minus,
        '⟹' | '⇒' | '→' => Tok::Op(BinOp::Implies),
        '∧' => Tok::Op(BinOp::And),
        '∨' => Tok::Op(BinOp::Or),
        '¬' => Tok::Not,
        '≠' => Tok::Op(BinOp::Ne),
        '≤' => Tok::Op(BinOp::Le),
        '≥' => Tok::Op(BinOp::Ge),
        _ => return None,
    })
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some(&(at, c)) = it.peek() {
        if let Some(tok) = single(c) {
            it.next();
            out.push((at, tok));
            continue;
        }
        let two = |it: &mut std::iter::Peekable<std::str::CharIndices<'_>>, next: char, long: Tok, short: Option<Tok>| {
            it.next();
            if it.peek().map(|&(_, c)| c) == Some(next) {
                it.next();
                Ok(long)
            } else {
                short.ok_or(ParseError::BadChar { ch: c, at })
            }
        };
        let tok = match c {
            c if c.is_whitespace() => {
                it.next();
                continue;
            }
            '0'..='9' => {
                let mut n: i64 = 0;
                while let Some(&(_, d)) = it.peek() {
                    let Some(d) = d.to_digit(10) else { break };
                    n = n.checked_mul(10).and_then(|n| n.checked_add(i64::from(d))).ok_or(ParseError::Overflow(at))?;
                    it.next();
                }
                Tok::Int(n)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if !(d.is_ascii_alphanumeric() || d == '_') {
                        break;
                    }
                    s.push(d);
                    it.next();
                }
                match s.as_str() {
                    "and" => Tok::Op(BinOp::And),
                    "or" => Tok::Op(BinOp::Or),
                    "not" => Tok::Not,
                    _ => Tok::Ident(s),
                }
            }
            '&' => two(&mut it, '&', Tok::Op(BinOp::And), None)?,
            '|' => two(&mut it, '|', Tok::Op(BinOp::Or), None)?,
            '!' => two(&mut it, '=', Tok::Op(BinOp::Ne), Some(Tok::Not))?,
            '<' => two(&mut it, '=', Tok::Op(BinOp::Le), Some(Tok::Op(BinOp::Lt)))?,
            '>' => two(&mut it, '=', Tok::Op(BinOp::Ge), Some(Tok::Op(BinOp::Gt)))?,
            '=' => {
                it.next();
                match it.peek().map(|&(_, c)| c) {
                    Some('>') => {
                        it.next();
                        Tok::Op(BinOp::Implies)
                    }
                    Some('=') => {
                        it.next();
                        if it.peek().map(|&(_, c)| c) == Some('>') {
                            it.next();
                            Tok::Op(BinOp::Implies)
                        } else {
                            Tok::Op(BinOp::Eq)
                        }
                    }
                    _ => Tok::Op(BinOp::Eq),
                }
            }
            ch => return Err(ParseError::BadChar { ch, at }),
        };
        out.push((at, tok));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn at(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(a, _)| *a)
    }

    fn eat_op(&mut self, ops: &[BinOp]) -> Option<BinOp> {
        match self.peek() {
            Some(Tok::Op(op)) if ops.contains(op) => {
                let op = *op;
                self.pos += 1;
                Some(op)
            }
            _ => None,
        }
    }

    fn nest(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(ParseError::TooDeep)
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.nest()?;
        let lhs = self.or()?;
        let e = if self.eat_op(&[BinOp::Implies]).is_some() {
            Expr::Bin(BinOp::Implies, Box::new(lhs), Box::new(self.expr()?))
        } else {
            lhs
        };
        self.depth -= 1;
        Ok(e)
    }

    fn left_assoc(
        &mut self,
        ops: &[BinOp],
        next: fn(&mut Self) -> Result<Expr, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        while let Some(op) = self.eat_op(ops) {
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(next(self)?));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(&[BinOp::Or], Self::and)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(&[BinOp::And], Self::not)
    }

    fn not(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            self.nest()?;
            let e = Expr::Not(Box::new(self.not()?));
            self.depth -= 1;
            return Ok(e);
        }
        let lhs = self.sum()?;
        let cmp = [BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge];
        match self.eat_op(&cmp) {
            Some(op) => Ok(Expr::Bin(op, Box::new(lhs), Box::new(self.sum()?))),
            None => Ok(lhs),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(BinOp::Add)) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(&[BinOp::Mul], Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            self.nest()?;
            let e = Expr::Neg(Box::new(self.unary()?));
            self.depth -= 1;
            return Ok(e);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.at();
        let tok = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        match tok {
            Some(Tok::Int(n)) => Ok(Expr::Lit(Val::Int(n))),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(ParseError::Expected { expected: "')'", at: self.at() });
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Ident(name)) => Ok(match name.as_str() {
                "true" => Expr::Lit(Val::Bool(true)),
                "false" => Expr::Lit(Val::Bool(false)),
                "committed" => Expr::Lit(Val::Status(Status::Committed)),
                "aborted" => Expr::Lit(Val::Status(Status::Aborted)),
                _ => {
                    let thread = thread_prefix(&name);
                    if thread.is_some() && self.peek() == Some(&Tok::Dot) {
                        self.pos += 1;
                        match self.toks.get(self.pos) {
                            Some((_, Tok::Ident(local))) => {
                                let local = local.clone();
                                self.pos += 1;
                                Expr::Var { thread, name: local }
                            }
                            _ => return Err(ParseError::Expected { expected: "a local name", at: self.at() }),
                        }
                    } else {
                        Expr::Var { thread: None, name }
                    }
                }
            }),
            _ => Err(ParseError::Expected { expected: "an operand", at }),
        }
    }
}

fn thread_prefix(name: &str) -> Option<u32> {
    let digits = name.strip_prefix('t')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses one expression.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len(), depth: 0 };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(ParseError::Trailing(p.at()));
    }
    Ok(e)
}

impl Expr {
    /// Evaluates under `lookup`, which resolves (possibly qualified) names.
    pub fn eval(&self, lookup: &dyn Fn(Option<u32>, &str) -> Option<Val>) -> Result<Val, EvalError> {
        match self {
            Expr::Lit(v) => Ok(*v),
            Expr::Var { thread, name } => lookup(*thread, name).ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Not(e) => Ok(Val::Bool(!e.eval(lookup)?.truthy()?)),
            Expr::Neg(e) => e.eval(lookup)?.int()?.checked_neg().map(Val::Int).ok_or(EvalError::Overflow),
            Expr::Bin(op, a, b) => {
                let a = a.eval(lookup)?;
                match op {
                    BinOp::Implies => Ok(Val::Bool(!a.truthy()? || b.eval(lookup)?.truthy()?)),
                    BinOp::Or => Ok(Val::Bool(a.truthy()? || b.eval(lookup)?.truthy()?)),
                    BinOp::And => Ok(Val::Bool(a.truthy()? && b.eval(lookup)?.truthy()?)),
                    BinOp::Eq => Ok(Val::Bool(a == b.eval(lookup)?)),
                    BinOp::Ne => Ok(Val::Bool(a != b.eval(lookup)?)),
                    _ => {
                        let (x, y) = (a.int()?, b.eval(lookup)?.int()?);
                        let arith = |r: Option<i64>| r.map(Val::Int).ok_or(EvalError::Overflow);
                        match op {
                            BinOp::Lt => Ok(Val::Bool(x < y)),
                            BinOp::Le => Ok(Val::Bool(x <= y)),
                            BinOp::Gt => Ok(Val::Bool(x > y)),
                            BinOp::Ge => Ok(Val::Bool(x >= y)),
                            BinOp::Add => arith(x.checked_add(y)),
                            BinOp::Sub => arith(x.checked_sub(y)),
                            _ => arith(x.checked_mul(y)),
                        }
                    }
                }
            }
        }
    }

    /// Every name the expression mentions.
    pub fn names(&self) -> Vec<(Option<u32>, &str)> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<(Option<u32>, &'a str)>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var { thread, name } => out.push((*thread, name)),
            Expr::Not(e) | Expr::Neg(e) => e.collect(out),
            Expr::Bin(_, a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    /// Renders the expression with every name qualified by `thread`, for
    /// primitive-action command strings.
    pub fn qualified(&self, thread: u32) -> String {
        match self {
            Expr::Lit(v) => v.to_string(),
            Expr::Var { name, .. } => format!("t{thread}.{name}"),
            Expr::Not(e) => format!("(!{})", e.qualified(thread)),
            Expr::Neg(e) => format!("-{}", e.qualified(thread)),
            Expr::Bin(op, a, b) => format!("({} {} {})", a.qualified(thread), op.symbol(), b.qualified(thread)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var { thread: Some(t), name } => write!(f, "t{t}.{name}"),
            Expr::Var { thread: None, name } => f.write_str(name),
            // `!` binds looser than comparisons, so it gets its own parentheses
            Expr::Not(e) => write!(f, "(!{e})"),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}
