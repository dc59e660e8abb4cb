//! Runs a litmus program against one of the TMs under an explicit schedule.
//!
//! A schedule is a sequence of [`Choice`]s. Under TL2 each choice advances
//! one thread by one machine step (a non-transactional access is one step).
//! Under the atomic TM a whole atomic block is one step and `alt` picks its
//! outcome: 0 commits, 1 aborts at commit, and with spurious aborts enabled
//! `2 + i` aborts the block at its i-th read or write. Local statements run
//! eagerly after every step, so they are never choice points.

use std::collections::BTreeMap;
use std::hash::Hash;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use siphasher::sip128::{Hasher128, SipHasher13};
use thiserror::Error;

use super::expr::{EvalError, Expr, Status, Val};
use super::program::{Compiled, Instr, LitmusProgram, ProgramError};
use crate::atomic::AtomicMemory;
use crate::history::{Action, ActionKind, CompletionDecision, History, Recorder, RegisterId, ThreadId, Trace, Value};
use crate::tl2::{Faults, OpResult, StepOutcome, Tl2Config, Tl2Error, Tl2Machine, TmOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TmKind {
    Tl2,
    Atomic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Choice {
    pub thread: u32,
    pub alt: u32,
}

impl Choice {
    pub fn new(thread: u32) -> Self {
        Choice { thread, alt: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecConfig {
    pub tm: TmKind,
    pub loop_bound: u32,
    pub max_steps: usize,
    /// Atomic TM only: also let blocks abort at any read or write.
    pub spurious_aborts: bool,
    /// TL2 only: maintain ghost state and check invariants after each step.
    pub ghost: bool,
    pub faults: Faults,
}

impl ExecConfig {
    pub fn new(tm: TmKind) -> Self {
        ExecConfig { tm, loop_bound: 16, max_steps: 400, spurious_aborts: false, ghost: false, faults: Faults::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceKind {
    LoopBound { thread: u32 },
    MaxSteps,
    Deadlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("thread {thread}: {error}")]
    Eval { thread: u32, error: EvalError },
    #[error("choice t{}/{} is not enabled", .0.thread, .0.alt)]
    NotEnabled(Choice),
    #[error("schedule ended with {0} threads still runnable")]
    Incomplete(usize),
    #[error(transparent)]
    Tm(#[from] Tl2Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Pending {
    Read(String),
    Commit,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ThreadRt {
    pc: usize,
    locals: BTreeMap<String, Val>,
    loop_counts: Vec<u32>,
    /// Locals at the start of the open atomic block, with its status
    /// variable and the index just past it.
    block: Option<(BTreeMap<String, Val>, String, usize)>,
    pending: Option<Pending>,
}

#[derive(Debug, Clone)]
enum Backend {
    Tl2(Box<Tl2Machine>),
    Atomic { mem: AtomicMemory, rec: Recorder },
}

/// Final registers and locals of a finished run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FinalState {
    pub registers: BTreeMap<RegisterId, Value>,
    pub locals: Vec<BTreeMap<String, Val>>,
}

#[derive(Debug, Clone)]
pub struct Execution {
    program: Arc<LitmusProgram>,
    code: Arc<Compiled>,
    config: ExecConfig,
    threads: Vec<ThreadRt>,
    backend: Backend,
    steps: usize,
    diverged: Option<DivergenceKind>,
}

impl Execution {
    pub fn new(program: Arc<LitmusProgram>, config: ExecConfig) -> Result<Self, ExecError> {
        let code = Arc::new(program.compile()?);
        let threads = code
            .locals
            .iter()
            .zip(&code.loops)
            .map(|(locals, &loops)| ThreadRt {
                pc: 0,
                locals: locals.iter().map(|l| (l.clone(), Val::Int(0))).collect(),
                loop_counts: vec![0; loops],
                block: None,
                pending: None,
            })
            .collect();
        let backend = match config.tm {
            TmKind::Tl2 => {
                let mut c = Tl2Config::new(program.threads.len() as u32);
                c.ghost = config.ghost;
                c.faults = config.faults;
                Backend::Tl2(Box::new(Tl2Machine::new(c)))
            }
            TmKind::Atomic => Backend::Atomic { mem: AtomicMemory::new(), rec: Recorder::new() },
        };
        let mut e = Execution { program, code, config, threads, backend, steps: 0, diverged: None };
        for i in 0..e.threads.len() {
            e.burst(i)?;
        }
        Ok(e)
    }

    pub fn program(&self) -> &LitmusProgram {
        &self.program
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn machine(&self) -> Option<&Tl2Machine> {
        match &self.backend {
            Backend::Tl2(m) => Some(m),
            Backend::Atomic { .. } => None,
        }
    }

    fn recorder(&self) -> &Recorder {
        match &self.backend {
            Backend::Tl2(m) => m.recorder(),
            Backend::Atomic { rec, .. } => rec,
        }
    }

    pub fn trace(&self) -> Trace {
        self.recorder().trace()
    }

    pub fn history(&self) -> History {
        self.recorder().history()
    }

    pub fn history_actions(&self) -> &[Action] {
        self.recorder().history_actions()
    }

    fn thread_done(&self, i: usize) -> bool {
        let rt = &self.threads[i];
        rt.pending.is_none() && rt.pc >= self.code.threads[i].len()
    }

    pub fn is_finished(&self) -> bool {
        (0..self.threads.len()).all(|i| self.thread_done(i))
    }

    pub fn divergence(&self) -> Option<DivergenceKind> {
        self.diverged.or_else(|| (!self.is_finished() && self.options().is_empty()).then_some(DivergenceKind::Deadlock))
    }

    /// Number of outcomes available to thread `i` right now; 0 if it cannot move.
    fn alternatives(&self, i: usize) -> u32 {
        if self.thread_done(i) {
            return 0;
        }
        let t = ThreadId(i as u32 + 1);
        match &self.backend {
            Backend::Tl2(m) => u32::from(self.threads[i].pending.is_none() || m.is_enabled(t)),
            Backend::Atomic { .. } => match self.code.threads[i][self.threads[i].pc] {
                Instr::Begin { .. } if self.config.spurious_aborts => {
                    let mut probe = self.clone();
                    let before = probe.history_actions().len();
                    // errors surface again when the real step runs
                    let _ = probe.atomic_block(i, 0);
                    let requests = probe.history_actions()[before..]
                        .iter()
                        .filter(|a| matches!(a.kind, ActionKind::Read { .. } | ActionKind::Write { .. }))
                        .count();
                    2 + requests as u32
                }
                Instr::Begin { .. } => 2,
                _ => 1,
            },
        }
    }

    /// Every choice that may be taken next, in thread order.
    pub fn options(&self) -> Vec<Choice> {
        if self.diverged.is_some() {
            return Vec::new();
        }
        (0..self.threads.len())
            .flat_map(|i| (0..self.alternatives(i)).map(move |alt| Choice { thread: i as u32 + 1, alt }))
            .collect()
    }

    pub fn step(&mut self, c: Choice) -> Result<(), ExecError> {
        let i = (c.thread as usize).wrapping_sub(1);
        if self.diverged.is_some() || i >= self.threads.len() || c.alt >= self.alternatives(i) {
            return Err(ExecError::NotEnabled(c));
        }
        match self.backend {
            Backend::Tl2(_) => self.tl2_step(i)?,
            Backend::Atomic { .. } => self.atomic_step(i, c.alt)?,
        }
        self.steps += 1;
        if self.diverged.is_none() && self.steps >= self.config.max_steps && !self.is_finished() {
            self.diverged = Some(DivergenceKind::MaxSteps);
        }
        Ok(())
    }

    fn tl2_step(&mut self, i: usize) -> Result<(), ExecError> {
        let t = ThreadId(i as u32 + 1);
        let code = Arc::clone(&self.code);
        let Backend::Tl2(m) = &mut self.backend else { unreachable!() };
        let rt = &mut self.threads[i];
        if rt.pending.is_none() {
            let (op, pending) = match &code.threads[i][rt.pc] {
                Instr::Read { var, reg, txn: true } => (TmOp::Read(reg.clone()), Pending::Read(var.clone())),
                Instr::Read { var, reg, txn: false } => (TmOp::NtRead(reg.clone()), Pending::Read(var.clone())),
                Instr::Write { reg, val, txn: true } => (TmOp::Write(reg.clone(), *val), Pending::Other),
                Instr::Write { reg, val, txn: false } => (TmOp::NtWrite(reg.clone(), *val), Pending::Other),
                Instr::Begin { status, end } => {
                    rt.block = Some((rt.locals.clone(), status.clone(), *end));
                    (TmOp::TxBegin, Pending::Other)
                }
                Instr::Commit { .. } => (TmOp::Commit, Pending::Commit),
                Instr::Fence => (TmOp::Fence, Pending::Other),
                other => unreachable!("local instruction {other:?} left for the scheduler"),
            };
            m.invoke(t, op)?;
            rt.pending = Some(pending);
        }
        match m.step(t)? {
            StepOutcome::Continue => Ok(()),
            StepOutcome::Blocked(_) => Err(ExecError::NotEnabled(Choice::new(t.0))),
            StepOutcome::Done(r) => {
                let pending = rt.pending.take().expect("operation in flight");
                match (pending, r) {
                    (_, OpResult::Aborted) => self.abort(i),
                    (Pending::Read(var), OpResult::Value(v)) => {
                        rt.locals.insert(var, Val::Int(v));
                        rt.pc += 1;
                    }
                    (Pending::Commit, OpResult::Committed) => self.commit(i),
                    _ => rt.pc += 1,
                }
                self.burst(i)
            }
        }
    }

    fn commit(&mut self, i: usize) {
        let rt = &mut self.threads[i];
        let (_, status, end) = rt.block.take().expect("commit inside a block");
        rt.locals.insert(status, Val::Status(Status::Committed));
        rt.pc = end;
    }

    fn abort(&mut self, i: usize) {
        let rt = &mut self.threads[i];
        let (saved, status, end) = rt.block.take().expect("abort inside a block");
        rt.locals = saved;
        rt.locals.insert(status, Val::Status(Status::Aborted));
        rt.pc = end;
    }

    fn atomic_step(&mut self, i: usize, alt: u32) -> Result<(), ExecError> {
        let t = ThreadId(i as u32 + 1);
        let code = Arc::clone(&self.code);
        let Backend::Atomic { mem, rec } = &mut self.backend else { unreachable!() };
        let rt = &mut self.threads[i];
        match &code.threads[i][rt.pc] {
            Instr::Begin { .. } => return self.atomic_block(i, alt),
            Instr::Read { var, reg, .. } => {
                let v = mem.nontxn_read(rec, t, reg);
                rt.locals.insert(var.clone(), Val::Int(v));
            }
            Instr::Write { reg, val, .. } => mem.nontxn_write(rec, t, reg, *val),
            Instr::Fence => mem.fence(rec, t),
            other => unreachable!("local instruction {other:?} left for the scheduler"),
        }
        rt.pc += 1;
        self.burst(i)
    }

    /// Runs a whole atomic block as one step.
    fn atomic_block(&mut self, i: usize, alt: u32) -> Result<(), ExecError> {
        let t = ThreadId(i as u32 + 1);
        let code = Arc::clone(&self.code);
        let mut requests = 0;
        loop {
            let Backend::Atomic { mem, rec } = &mut self.backend else { unreachable!() };
            let rt = &mut self.threads[i];
            let spurious = alt >= 2 && alt - 2 == requests;
            match &code.threads[i][rt.pc] {
                Instr::Begin { status, end } => {
                    rt.block = Some((rt.locals.clone(), status.clone(), *end));
                    mem.begin(rec, t);
                    rt.pc += 1;
                }
                Instr::Read { var, reg, .. } => {
                    requests += 1;
                    match mem.read(rec, t, reg, spurious) {
                        Some(v) => {
                            rt.locals.insert(var.clone(), Val::Int(v));
                            rt.pc += 1;
                        }
                        None => {
                            self.abort(i);
                            break;
                        }
                    }
                }
                Instr::Write { reg, val, .. } => {
                    requests += 1;
                    if mem.write(rec, t, reg, *val, spurious) {
                        rt.pc += 1;
                    } else {
                        self.abort(i);
                        break;
                    }
                }
                Instr::Commit { .. } => {
                    if alt == 1 {
                        mem.commit(rec, t, CompletionDecision::Abort);
                        self.abort(i);
                    } else {
                        mem.commit(rec, t, CompletionDecision::Commit);
                        self.commit(i);
                    }
                    break;
                }
                _ => {
                    if !self.local_step(i)? || self.diverged.is_some() {
                        return Ok(());
                    }
                }
            }
        }
        self.burst(i)
    }

    /// Runs local statements of thread `i` until its next shared access.
    fn burst(&mut self, i: usize) -> Result<(), ExecError> {
        while self.diverged.is_none() && self.local_step(i)? {}
        Ok(())
    }

    fn prim(&mut self, t: ThreadId, cmd: String) -> Result<(), ExecError> {
        match &mut self.backend {
            Backend::Tl2(m) => m.client_prim(t, cmd)?,
            Backend::Atomic { rec, .. } => rec.prim(t, cmd),
        }
        Ok(())
    }

    /// Executes one local instruction if that is what comes next.
    fn local_step(&mut self, i: usize) -> Result<bool, ExecError> {
        let t = ThreadId(i as u32 + 1);
        let code = Arc::clone(&self.code);
        let Some(instr) = code.threads[i].get(self.threads[i].pc) else { return Ok(false) };
        let eval = |rt: &ThreadRt, e: &Expr| {
            e.eval(&|_, n| rt.locals.get(n).copied()).map_err(|error| ExecError::Eval { thread: t.0, error })
        };
        match instr {
            Instr::Assign { var, expr } => {
                let v = eval(&self.threads[i], expr)?;
                self.prim(t, format!("t{}.{var} := {}", t.0, expr.qualified(t.0)))?;
                let rt = &mut self.threads[i];
                rt.locals.insert(var.clone(), v);
                rt.pc += 1;
            }
            Instr::Branch { cond, target } => {
                let taken = eval(&self.threads[i], cond)?.truthy().map_err(|error| ExecError::Eval { thread: t.0, error })?;
                self.assume(t, cond, taken)?;
                let rt = &mut self.threads[i];
                rt.pc = if taken { rt.pc + 1 } else { *target };
            }
            Instr::Loop { cond, exit, id } => {
                let again = eval(&self.threads[i], cond)?.truthy().map_err(|error| ExecError::Eval { thread: t.0, error })?;
                let bound = self.config.loop_bound;
                let rt = &mut self.threads[i];
                if again {
                    rt.loop_counts[*id] += 1;
                    if rt.loop_counts[*id] > bound {
                        self.diverged = Some(DivergenceKind::LoopBound { thread: t.0 });
                        return Ok(false);
                    }
                    rt.pc += 1;
                } else {
                    rt.loop_counts[*id] = 0;
                    rt.pc = *exit;
                }
                self.assume(t, cond, again)?;
            }
            Instr::Jump(target) => self.threads[i].pc = *target,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn assume(&mut self, t: ThreadId, cond: &Expr, holds: bool) -> Result<(), ExecError> {
        let c = cond.qualified(t.0);
        self.prim(t, if holds { format!("assume {c}") } else { format!("assume !{c}") })
    }

    pub fn registers(&self) -> BTreeMap<RegisterId, Value> {
        self.program
            .registers
            .keys()
            .map(|r| {
                let v = match &self.backend {
                    Backend::Tl2(m) => m.cell(r).reg,
                    Backend::Atomic { mem, .. } => mem.value(r),
                };
                (r.clone(), v)
            })
            .collect()
    }

    pub fn final_state(&self) -> FinalState {
        FinalState { registers: self.registers(), locals: self.threads.iter().map(|t| t.locals.clone()).collect() }
    }

    /// Evaluates the postcondition on the current state.
    pub fn post_holds(&self) -> Result<bool, ExecError> {
        let s = self.final_state();
        self.program
            .check_post(&s.registers, &s.locals)
            .map_err(|e| ExecError::Program(ProgramError::Post(e)))
    }

    /// 128-bit digest of everything that determines future behaviour, plus
    /// the history so far when `with_history` is set.
    pub fn fingerprint(&self, with_history: bool) -> u128 {
        let mut h = SipHasher13::new();
        self.threads.hash(&mut h);
        self.diverged.hash(&mut h);
        match &self.backend {
            Backend::Tl2(m) => m.core().hash(&mut h),
            Backend::Atomic { mem, .. } => mem.hash(&mut h),
        }
        if with_history {
            self.history_actions().hash(&mut h);
        }
        h.finish128().as_u128()
    }

    pub fn history_fingerprint(&self) -> u128 {
        let mut h = SipHasher13::new();
        self.history_actions().hash(&mut h);
        h.finish128().as_u128()
    }
}

/// Result of replaying one schedule to completion.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Trace,
    pub history: History,
    pub state: FinalState,
    /// None when the run diverged.
    pub post: Option<bool>,
    pub divergence: Option<DivergenceKind>,
}

/// Replays `schedule`; it must drive every thread to completion or divergence.
pub fn run(program: &LitmusProgram, config: &ExecConfig, schedule: &[Choice]) -> Result<RunResult, ExecError> {
    let mut e = Execution::new(Arc::new(program.clone()), config.clone())?;
    for &c in schedule {
        e.step(c)?;
    }
    let open = e.options().len();
    if open > 0 {
        return Err(ExecError::Incomplete(open));
    }
    let divergence = e.divergence();
    Ok(RunResult {
        trace: e.trace(),
        history: e.history(),
        state: e.final_state(),
        post: if divergence.is_none() { Some(e.post_holds()?) } else { None },
        divergence,
    })
}
