//! Litmus programs and their JSON form.
//!
//! ```json
//! {
//!   "name": "publication",
//!   "registers": {"x": 0, "flag": 0},
//!   "threads": [
//!     [{"op": "write", "reg": "x", "val": 42},
//!      {"op": "atomic", "status": "s", "body": [{"op": "write", "reg": "flag", "val": 2}]}],
//!     [{"op": "atomic", "status": "s2", "body": [
//!        {"op": "read", "var": "f", "reg": "flag"},
//!        {"op": "if", "cond": "f = 2", "then": [{"op": "read", "var": "l", "reg": "x"}]}]}]
//!   ],
//!   "post": "s2 = committed && l != 0 => l = 42"
//! }
//! ```
//!
//! Statements: `assign {var, expr}`, `read {var, reg}`, `write {reg, val}`,
//! `atomic {status, body}`, `fence`, `if {cond, then, else?}` and
//! `while {cond, body}`. Reads and writes inside `atomic` are transactional.
//! Every register starts at 0 and every written value is a nonzero literal
//! used by exactly one write statement. Thread expressions see only that
//! thread's locals; the postcondition sees registers, and locals either by
//! bare name (when only one thread has it) or as `t2.l`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::{Expr, Val};
use crate::history::{RegisterId, Value, V_INIT};

mod expr_text {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::harness::expr::{parse_expr, Expr};

    pub fn serialize<S: Serializer>(e: &Expr, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(e)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Expr, D::Error> {
        let text = String::deserialize(d)?;
        parse_expr(&text).map_err(|e| D::Error::custom(format!("in {text:?}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Stmt {
    Assign {
        var: String,
        #[serde(with = "expr_text")]
        expr: Expr,
    },
    Read {
        var: String,
        reg: RegisterId,
    },
    Write {
        reg: RegisterId,
        val: Value,
    },
    Atomic {
        status: String,
        body: Vec<Stmt>,
    },
    Fence,
    If {
        #[serde(with = "expr_text")]
        cond: Expr,
        then: Vec<Stmt>,
        #[serde(default, rename = "else", skip_serializing_if = "Vec::is_empty")]
        otherwise: Vec<Stmt>,
    },
    While {
        #[serde(with = "expr_text")]
        cond: Expr,
        body: Vec<Stmt>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LitmusProgram {
    #[serde(default)]
    pub name: String,
    pub registers: BTreeMap<RegisterId, Value>,
    pub threads: Vec<Vec<Stmt>>,
    #[serde(with = "expr_text")]
    pub post: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("malformed litmus file: {0}")]
    Json(String),
    #[error("program has no threads")]
    NoThreads,
    #[error("register {reg} starts at {init}; registers start at 0")]
    InitialValue { reg: RegisterId, init: Value },
    #[error("thread {thread} uses undeclared register {reg}")]
    UnknownRegister { thread: u32, reg: RegisterId },
    #[error("thread {thread}: {what} inside an atomic block")]
    NestedInAtomic { thread: u32, what: &'static str },
    #[error("value {0} is written more than once")]
    DuplicateWrite(Value),
    #[error("write of the initial value to {0}")]
    InitialWrite(RegisterId),
    #[error("thread {thread}: write to {reg} inside a loop may repeat its value")]
    WriteInLoop { thread: u32, reg: RegisterId },
    #[error("thread {thread}: {name:?} is not a local of this thread")]
    ForeignName { thread: u32, name: String },
    #[error("thread {thread}: {name:?} is not a valid local name")]
    BadLocal { thread: u32, name: String },
    #[error("no built-in program named {0:?}")]
    UnknownBuiltin(String),
    #[error("postcondition: {0}")]
    Post(String),
}

/// Flat per-thread code; `while` and `if` become conditional jumps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Instr {
    Assign { var: String, expr: Expr },
    Read { var: String, reg: RegisterId, txn: bool },
    Write { reg: RegisterId, val: Value, txn: bool },
    /// `end` is the index just past the matching commit.
    Begin { status: String, end: usize },
    Commit { status: String },
    Fence,
    /// Jumps to `target` when `cond` is false.
    Branch { cond: Expr, target: usize },
    Loop { cond: Expr, exit: usize, id: usize },
    Jump(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Compiled {
    pub threads: Vec<Vec<Instr>>,
    pub locals: Vec<BTreeSet<String>>,
    pub loops: Vec<usize>,
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(s, "true" | "false" | "committed" | "aborted" | "and" | "or" | "not")
}

struct Checker<'a> {
    program: &'a LitmusProgram,
    thread: u32,
    locals: BTreeSet<String>,
    written: &'a mut BTreeSet<Value>,
}

impl Checker<'_> {
    fn local(&mut self, name: &str) -> Result<(), ProgramError> {
        if !is_ident(name) || self.program.registers.contains_key(&RegisterId::new(name)) {
            return Err(ProgramError::BadLocal { thread: self.thread, name: name.to_string() });
        }
        self.locals.insert(name.to_string());
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<(), ProgramError> {
        for (q, name) in e.names() {
            if q.is_some() || self.program.registers.contains_key(&RegisterId::new(name)) {
                return Err(ProgramError::ForeignName { thread: self.thread, name: name.to_string() });
            }
            self.local(name)?;
        }
        Ok(())
    }

    fn reg(&self, reg: &RegisterId) -> Result<(), ProgramError> {
        if self.program.registers.contains_key(reg) {
            Ok(())
        } else {
            Err(ProgramError::UnknownRegister { thread: self.thread, reg: reg.clone() })
        }
    }

    fn block(&mut self, body: &[Stmt], in_txn: bool, in_loop: bool) -> Result<(), ProgramError> {
        for s in body {
            match s {
                Stmt::Assign { var, expr } => {
                    self.local(var)?;
                    self.expr(expr)?;
                }
                Stmt::Read { var, reg } => {
                    self.local(var)?;
                    self.reg(reg)?;
                }
                Stmt::Write { reg, val } => {
                    self.reg(reg)?;
                    if *val == V_INIT {
                        return Err(ProgramError::InitialWrite(reg.clone()));
                    }
                    if in_loop {
                        return Err(ProgramError::WriteInLoop { thread: self.thread, reg: reg.clone() });
                    }
                    if !self.written.insert(*val) {
                        return Err(ProgramError::DuplicateWrite(*val));
                    }
                }
                Stmt::Atomic { status, body } => {
                    if in_txn {
                        return Err(ProgramError::NestedInAtomic { thread: self.thread, what: "atomic" });
                    }
                    self.local(status)?;
                    self.block(body, true, in_loop)?;
                }
                Stmt::Fence if in_txn => {
                    return Err(ProgramError::NestedInAtomic { thread: self.thread, what: "fence" });
                }
                Stmt::Fence => {}
                Stmt::If { cond, then, otherwise } => {
                    self.expr(cond)?;
                    self.block(then, in_txn, in_loop)?;
                    self.block(otherwise, in_txn, in_loop)?;
                }
                Stmt::While { cond, body } => {
                    self.expr(cond)?;
                    self.block(body, in_txn, true)?;
                }
            }
        }
        Ok(())
    }
}

struct Emitter {
    code: Vec<Instr>,
    loops: usize,
}

impl Emitter {
    fn block(&mut self, body: &[Stmt], txn: bool) {
        for s in body {
            match s {
                Stmt::Assign { var, expr } => self.code.push(Instr::Assign { var: var.clone(), expr: expr.clone() }),
                Stmt::Read { var, reg } => self.code.push(Instr::Read { var: var.clone(), reg: reg.clone(), txn }),
                Stmt::Write { reg, val } => self.code.push(Instr::Write { reg: reg.clone(), val: *val, txn }),
                Stmt::Fence => self.code.push(Instr::Fence),
                Stmt::Atomic { status, body } => {
                    let at = self.code.len();
                    self.code.push(Instr::Begin { status: status.clone(), end: 0 });
                    self.block(body, true);
                    self.code.push(Instr::Commit { status: status.clone() });
                    let end = self.code.len();
                    self.code[at] = Instr::Begin { status: status.clone(), end };
                }
                Stmt::If { cond, then, otherwise } => {
                    let at = self.code.len();
                    self.code.push(Instr::Jump(0));
                    self.block(then, txn);
                    if otherwise.is_empty() {
                        let target = self.code.len();
                        self.code[at] = Instr::Branch { cond: cond.clone(), target };
                    } else {
                        let skip = self.code.len();
                        self.code.push(Instr::Jump(0));
                        let target = self.code.len();
                        self.code[at] = Instr::Branch { cond: cond.clone(), target };
                        self.block(otherwise, txn);
                        self.code[skip] = Instr::Jump(self.code.len());
                    }
                }
                Stmt::While { cond, body } => {
                    let id = self.loops;
                    self.loops += 1;
                    let head = self.code.len();
                    self.code.push(Instr::Jump(0));
                    self.block(body, txn);
                    self.code.push(Instr::Jump(head));
                    let exit = self.code.len();
                    self.code[head] = Instr::Loop { cond: cond.clone(), exit, id };
                }
            }
        }
    }
}

impl LitmusProgram {
    /// Checks the structural rules listed in the module docs.
    pub fn validate(&self) -> Result<(), ProgramError> {
        self.thread_locals().map(|_| ())
    }

    fn thread_locals(&self) -> Result<Vec<BTreeSet<String>>, ProgramError> {
        if self.threads.is_empty() {
            return Err(ProgramError::NoThreads);
        }
        if let Some((reg, &init)) = self.registers.iter().find(|(_, &v)| v != V_INIT) {
            return Err(ProgramError::InitialValue { reg: reg.clone(), init });
        }
        let mut written = BTreeSet::new();
        let mut all = Vec::new();
        for (i, body) in self.threads.iter().enumerate() {
            let mut c = Checker { program: self, thread: i as u32 + 1, locals: BTreeSet::new(), written: &mut written };
            c.block(body, false, false)?;
            all.push(c.locals);
        }
        for (q, name) in self.post.names() {
            self.resolve_post(&all, q, name)?;
        }
        Ok(all)
    }

    fn resolve_post(&self, locals: &[BTreeSet<String>], q: Option<u32>, name: &str) -> Result<PostName, ProgramError> {
        match q {
            Some(t) => match locals.get((t as usize).wrapping_sub(1)) {
                Some(l) if l.contains(name) => Ok(PostName::Local(t, name.to_string())),
                _ => Err(ProgramError::Post(format!("thread {t} has no local {name}"))),
            },
            None if self.registers.contains_key(&RegisterId::new(name)) => Ok(PostName::Register(RegisterId::new(name))),
            None => {
                let owners: Vec<u32> =
                    (0..locals.len()).filter(|&i| locals[i].contains(name)).map(|i| i as u32 + 1).collect();
                match owners[..] {
                    [t] => Ok(PostName::Local(t, name.to_string())),
                    [] => Err(ProgramError::Post(format!("unknown name {name}"))),
                    _ => Err(ProgramError::Post(format!("{name} is ambiguous; qualify it as tN.{name}"))),
                }
            }
        }
    }

    /// Evaluates the postcondition over final registers and locals.
    pub fn check_post(&self, registers: &BTreeMap<RegisterId, Value>, locals: &[BTreeMap<String, Val>]) -> Result<bool, String> {
        let sets: Vec<BTreeSet<String>> = locals.iter().map(|l| l.keys().cloned().collect()).collect();
        let lookup = |q: Option<u32>, name: &str| match self.resolve_post(&sets, q, name).ok()? {
            PostName::Register(r) => Some(Val::Int(registers.get(&r).copied().unwrap_or(V_INIT))),
            PostName::Local(t, n) => locals[t as usize - 1].get(&n).copied(),
        };
        self.post.eval(&lookup).and_then(Val::truthy).map_err(|e| e.to_string())
    }

    pub(crate) fn compile(&self) -> Result<Compiled, ProgramError> {
        let locals = self.thread_locals()?;
        let mut threads = Vec::new();
        let mut loops = Vec::new();
        for body in &self.threads {
            let mut e = Emitter { code: Vec::new(), loops: 0 };
            e.block(body, false);
            threads.push(e.code);
            loops.push(e.loops);
        }
        Ok(Compiled { threads, locals, loops })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("programs serialize")
    }
}

enum PostName {
    Register(RegisterId),
    Local(u32, String),
}

/// Decodes and validates a litmus program from JSON bytes.
pub fn parse_litmus(bytes: &[u8]) -> Result<LitmusProgram, ProgramError> {
    let p: LitmusProgram = serde_json::from_slice(bytes).map_err(|e| ProgramError::Json(e.to_string()))?;
    p.validate()?;
    Ok(p)
}
