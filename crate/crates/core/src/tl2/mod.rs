//! TL2 with transactional fences as a small-step machine. Each call to
//! [`Tl2Machine::step`] performs one atomic step of a thread's pending
//! operation and touches at most one shared cell.

pub mod client;
mod ghost;
mod invariants;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use ghost::{Ghost, GhostNode};
pub use invariants::{check_invariants, InvariantReport, InvariantViolation};

use crate::history::{ActionKind, History, Recorder, RegisterId, ThreadId, Trace, Value, V_INIT};

/// Identifies one transaction: its thread and per-thread sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TxnHandle {
    pub thread: ThreadId,
    pub seq: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct RegisterCell {
    pub reg: Value,
    pub ver: u64,
    pub lock: Option<TxnHandle>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxnDesc {
    pub handle: TxnHandle,
    pub rset: BTreeSet<RegisterId>,
    pub wset: BTreeMap<RegisterId, Value>,
    /// `None` until read at begin.
    pub rver: Option<u64>,
    /// `None` until the clock increment at commit.
    pub wver: Option<u64>,
    pub lset: BTreeSet<RegisterId>,
}

impl TxnDesc {
    fn new(handle: TxnHandle) -> Self {
        TxnDesc {
            handle,
            rset: BTreeSet::new(),
            wset: BTreeMap::new(),
            rver: None,
            wver: None,
            lset: BTreeSet::new(),
        }
    }
}

/// Deliberate bugs, for checking that the invariants catch them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Commit computes wver from the clock without advancing it.
    pub skip_clock_increment: bool,
    /// Commit write-back leaves its locks held.
    pub skip_unlock: bool,
    /// Handlers clear `active` before appending the response.
    pub reorder_handler: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tl2Config {
    pub threads: u32,
    pub ghost: bool,
    pub faults: Faults,
    /// Keep a log of the TM's own primitive steps. They are internal to the
    /// TM and never enter the client trace.
    pub log_steps: bool,
}

impl Tl2Config {
    pub fn new(threads: u32) -> Self {
        Tl2Config { threads, ghost: false, faults: Faults::default(), log_steps: false }
    }

    pub fn with_ghost(mut self) -> Self {
        self.ghost = true;
        self
    }
}

/// A TM interface operation a client can invoke.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TmOp {
    TxBegin,
    Read(RegisterId),
    Write(RegisterId, Value),
    Commit,
    Fence,
    NtRead(RegisterId),
    NtWrite(RegisterId, Value),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpResult {
    Unit,
    Value(Value),
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Done(OpResult),
    /// Only the fence's wait loop blocks; the string names what it waits on.
    Blocked(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Tl2Error {
    #[error("no thread {0}")]
    UnknownThread(ThreadId),
    #[error("{0} already has an operation in progress")]
    Busy(ThreadId),
    #[error("{0} has no operation in progress")]
    Idle(ThreadId),
    #[error("{0} began a transaction inside another")]
    NestedBegin(ThreadId),
    #[error("{0} is not in a transaction")]
    NotInTransaction(ThreadId),
    #[error("{0} is inside a transaction")]
    InTransaction(ThreadId),
    #[error("{thread} is blocked: {reason}")]
    Blocked { thread: ThreadId, reason: String },
}

/// A shared cell touched by a step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Cell {
    Clock,
    Reg(RegisterId),
    Ver(RegisterId),
    Lock(RegisterId),
    Active(ThreadId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Touch {
    Read,
    Write,
    Update,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Pc {
    Start(TmOp),
    BeginRver,
    ReadValue { x: RegisterId, ts1: u64 },
    ReadLock { x: RegisterId, ts1: u64, value: Value },
    ReadVer { x: RegisterId, ts1: u64, value: Value, locked: bool },
    TryLock(usize),
    FetchInc,
    ValidateTest(usize),
    ValidateVer(usize, bool),
    WriteReg(usize),
    WriteVer(usize),
    Unlock(usize),
    AbortUnlock(usize),
    Handler { committed: bool, second: bool },
    Snapshot(u32),
    Wait(u32),
    FenceEnd,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
struct ThreadState {
    pc: Option<Pc>,
    txn: Option<TxnDesc>,
    seq: u32,
    snapshot: Vec<bool>,
}

/// Everything that determines future behaviour, and nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tl2Core {
    pub clock: u64,
    pub cells: BTreeMap<RegisterId, RegisterCell>,
    pub active: Vec<bool>,
    threads: Vec<ThreadState>,
}

#[derive(Debug, Clone)]
pub struct Tl2Machine {
    core: Tl2Core,
    config: Tl2Config,
    recorder: Recorder,
    ghost: Option<Ghost>,
    footprint: Vec<(Cell, Touch)>,
    violations: Vec<InvariantViolation>,
    steps: u64,
    step_log: Vec<(ThreadId, String)>,
}

impl fmt::Display for TxnHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}.{}", self.thread.0, self.seq)
    }
}

impl Tl2Machine {
    pub fn new(config: Tl2Config) -> Self {
        let n = config.threads as usize;
        Tl2Machine {
            core: Tl2Core {
                clock: 0,
                cells: BTreeMap::new(),
                active: vec![false; n],
                threads: vec![ThreadState::default(); n],
            },
            ghost: config.ghost.then(Ghost::new),
            config,
            recorder: Recorder::new(),
            footprint: Vec::new(),
            violations: Vec::new(),
            steps: 0,
            step_log: Vec::new(),
        }
    }

    pub fn core(&self) -> &Tl2Core {
        &self.core
    }

    pub fn config(&self) -> &Tl2Config {
        &self.config
    }

    pub fn clock(&self) -> u64 {
        self.core.clock
    }

    pub fn cell(&self, x: &RegisterId) -> RegisterCell {
        self.core.cells.get(x).cloned().unwrap_or_default()
    }

    pub fn is_active(&self, t: ThreadId) -> bool {
        self.core.active[t.0 as usize - 1]
    }

    pub fn txn(&self, t: ThreadId) -> Option<&TxnDesc> {
        self.core.threads.get(t.0 as usize - 1)?.txn.as_ref()
    }

    /// Descriptor of a live transaction by handle.
    pub fn live_txn(&self, h: TxnHandle) -> Option<&TxnDesc> {
        self.txn(h.thread).filter(|d| d.handle == h)
    }

    pub fn history(&self) -> History {
        self.recorder.history()
    }

    pub fn trace(&self) -> Trace {
        self.recorder.trace()
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    pub fn ghost(&self) -> Option<&Ghost> {
        self.ghost.as_ref()
    }

    /// Invariant failures seen so far; checking stops after the first
    /// failing step.
    pub fn violations(&self) -> &[InvariantViolation] {
        &self.violations
    }

    /// Cells touched by the most recent step.
    pub fn footprint(&self) -> &[(Cell, Touch)] {
        &self.footprint
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step_log(&self) -> &[(ThreadId, String)] {
        &self.step_log
    }

    /// Records a client primitive action of an idle thread.
    pub fn client_prim(&mut self, t: ThreadId, cmd: String) -> Result<(), Tl2Error> {
        self.index(t)?;
        if self.is_busy(t) {
            return Err(Tl2Error::Busy(t));
        }
        self.recorder.prim(t, cmd);
        Ok(())
    }

    fn index(&self, t: ThreadId) -> Result<usize, Tl2Error> {
        let i = (t.0 as usize).wrapping_sub(1);
        if i < self.core.threads.len() {
            Ok(i)
        } else {
            Err(Tl2Error::UnknownThread(t))
        }
    }

    /// Whether `t` is in the middle of an operation.
    pub fn is_busy(&self, t: ThreadId) -> bool {
        self.index(t).is_ok_and(|i| self.core.threads[i].pc.is_some())
    }

    /// Whether `t` can take a step now.
    pub fn is_enabled(&self, t: ThreadId) -> bool {
        let Ok(i) = self.index(t) else { return false };
        match &self.core.threads[i].pc {
            None => false,
            Some(Pc::Wait(k)) => !self.core.active[*k as usize - 1],
            Some(_) => true,
        }
    }

    /// Registers `op` as `t`'s next operation; no step is taken.
    pub fn invoke(&mut self, t: ThreadId, op: TmOp) -> Result<(), Tl2Error> {
        let i = self.index(t)?;
        let th = &self.core.threads[i];
        if th.pc.is_some() {
            return Err(Tl2Error::Busy(t));
        }
        match (&op, th.txn.is_some()) {
            (TmOp::TxBegin, true) => return Err(Tl2Error::NestedBegin(t)),
            (TmOp::Read(_) | TmOp::Write(..) | TmOp::Commit, false) => return Err(Tl2Error::NotInTransaction(t)),
            (TmOp::Fence | TmOp::NtRead(_) | TmOp::NtWrite(..), true) => return Err(Tl2Error::InTransaction(t)),
            _ => {}
        }
        self.core.threads[i].pc = Some(Pc::Start(op));
        Ok(())
    }

    /// One atomic step of `t`'s pending operation.
    pub fn step(&mut self, t: ThreadId) -> Result<StepOutcome, Tl2Error> {
        let i = self.index(t)?;
        let pc = self.core.threads[i].pc.take().ok_or(Tl2Error::Idle(t))?;
        if let Pc::Wait(k) = pc {
            if self.core.active[k as usize - 1] {
                self.core.threads[i].pc = Some(pc);
                return Ok(StepOutcome::Blocked(format!("active[t{k}]")));
            }
        }
        self.footprint.clear();
        let (next, outcome) = self.exec(t, i, pc);
        self.core.threads[i].pc = next;
        self.steps += 1;
        self.after_step();
        Ok(outcome)
    }

    /// Invokes `op` and steps it to completion with no other thread running.
    pub fn run(&mut self, t: ThreadId, op: TmOp) -> Result<OpResult, Tl2Error> {
        self.invoke(t, op)?;
        loop {
            match self.step(t)? {
                StepOutcome::Continue => {}
                StepOutcome::Done(r) => return Ok(r),
                StepOutcome::Blocked(reason) => return Err(Tl2Error::Blocked { thread: t, reason }),
            }
        }
    }

    pub fn begin(&mut self, t: ThreadId) -> Result<TxnHandle, Tl2Error> {
        self.run(t, TmOp::TxBegin)?;
        Ok(self.txn(t).expect("begin opened a transaction").handle)
    }

    pub fn read(&mut self, t: ThreadId, x: &RegisterId) -> Result<OpResult, Tl2Error> {
        self.run(t, TmOp::Read(x.clone()))
    }

    pub fn write(&mut self, t: ThreadId, x: &RegisterId, v: Value) -> Result<OpResult, Tl2Error> {
        self.run(t, TmOp::Write(x.clone(), v))
    }

    pub fn commit(&mut self, t: ThreadId) -> Result<OpResult, Tl2Error> {
        self.run(t, TmOp::Commit)
    }

    pub fn fence(&mut self, t: ThreadId) -> Result<(), Tl2Error> {
        self.run(t, TmOp::Fence).map(|_| ())
    }

    pub fn nontxn_read(&mut self, t: ThreadId, x: &RegisterId) -> Result<Value, Tl2Error> {
        match self.run(t, TmOp::NtRead(x.clone()))? {
            OpResult::Value(v) => Ok(v),
            r => unreachable!("non-transactional read returned {r:?}"),
        }
    }

    pub fn nontxn_write(&mut self, t: ThreadId, x: &RegisterId, v: Value) -> Result<(), Tl2Error> {
        self.run(t, TmOp::NtWrite(x.clone(), v)).map(|_| ())
    }

    fn after_step(&mut self) {
        let Some(ghost) = &self.ghost else { return };
        if ghost.is_racy() || !self.violations.is_empty() {
            return;
        }
        let report = check_invariants(self);
        self.violations.extend(report.violations);
    }

    // shared-memory accessors; each records what it touched

    fn touch(&mut self, cell: Cell, how: Touch) {
        self.footprint.push((cell, how));
    }

    fn cell_mut(&mut self, x: &RegisterId) -> &mut RegisterCell {
        self.core.cells.entry(x.clone()).or_default()
    }

    fn load_ver(&mut self, x: &RegisterId) -> u64 {
        self.touch(Cell::Ver(x.clone()), Touch::Read);
        self.cell(x).ver
    }

    fn load_reg(&mut self, x: &RegisterId) -> Value {
        self.touch(Cell::Reg(x.clone()), Touch::Read);
        self.core.cells.get(x).map_or(V_INIT, |c| c.reg)
    }

    /// Held by a transaction other than `me`.
    fn lock_test(&mut self, x: &RegisterId, me: TxnHandle) -> bool {
        self.touch(Cell::Lock(x.clone()), Touch::Read);
        self.cell(x).lock.is_some_and(|h| h != me)
    }

    fn load_active(&mut self, k: u32) -> bool {
        self.touch(Cell::Active(ThreadId(k)), Touch::Read);
        self.core.active[k as usize - 1]
    }

    fn store_active(&mut self, t: ThreadId, v: bool) {
        self.touch(Cell::Active(t), Touch::Write);
        self.core.active[t.0 as usize - 1] = v;
    }

    fn emit(&mut self, t: ThreadId, kind: ActionKind) {
        let txn = self.txn(t).map(|d| d.handle);
        let index = self.recorder.emit(t, kind);
        if let Some(g) = &mut self.ghost {
            g.on_action(index, &self.recorder.history_actions()[index], txn);
        }
    }

    fn prim(&mut self, t: ThreadId, cmd: impl FnOnce() -> String) {
        if self.config.log_steps {
            self.step_log.push((t, cmd()));
        }
    }

    fn desc(&self, i: usize) -> &TxnDesc {
        self.core.threads[i].txn.as_ref().expect("operation inside a transaction")
    }

    fn desc_mut(&mut self, i: usize) -> &mut TxnDesc {
        self.core.threads[i].txn.as_mut().expect("operation inside a transaction")
    }

    fn abort_path(&self, i: usize) -> Pc {
        if self.desc(i).lset.is_empty() {
            Pc::Handler { committed: false, second: false }
        } else {
            Pc::AbortUnlock(0)
        }
    }

    fn after_validation(&self, i: usize) -> Pc {
        if self.desc(i).wset.is_empty() {
            Pc::Handler { committed: true, second: false }
        } else {
            Pc::WriteReg(0)
        }
    }

    fn wait_from(&self, i: usize, k: u32) -> Pc {
        let snap = &self.core.threads[i].snapshot;
        (k..=self.config.threads).find(|&j| snap[j as usize - 1]).map_or(Pc::FenceEnd, Pc::Wait)
    }

    fn wset_entry(&self, i: usize, n: usize) -> (RegisterId, Value) {
        let (x, v) = self.desc(i).wset.iter().nth(n).expect("index within write set");
        (x.clone(), *v)
    }

    fn exec(&mut self, t: ThreadId, i: usize, pc: Pc) -> (Option<Pc>, StepOutcome) {
        use StepOutcome::{Continue, Done};
        let go = |p: Pc| (Some(p), Continue);
        match pc {
            Pc::Start(TmOp::TxBegin) => {
                let th = &mut self.core.threads[i];
                th.seq += 1;
                th.txn = Some(TxnDesc::new(TxnHandle { thread: t, seq: th.seq }));
                self.emit(t, ActionKind::TxBegin);
                self.prim(t, || format!("active[t{}] := true", t.0));
                self.store_active(t, true);
                go(Pc::BeginRver)
            }
            Pc::BeginRver => {
                self.touch(Cell::Clock, Touch::Read);
                let c = self.core.clock;
                self.desc_mut(i).rver = Some(c);
                self.prim(t, || format!("t{}.rver := clock", t.0));
                self.emit(t, ActionKind::Ok);
                (None, Done(OpResult::Unit))
            }
            Pc::Start(TmOp::Read(x)) => {
                self.emit(t, ActionKind::Read { reg: x.clone() });
                if let Some(&v) = self.desc(i).wset.get(&x) {
                    self.emit(t, ActionKind::Ret { val: v });
                    return (None, Done(OpResult::Value(v)));
                }
                let ts1 = self.load_ver(&x);
                self.prim(t, || format!("t{}.ts1 := ver[{x}]", t.0));
                go(Pc::ReadValue { x, ts1 })
            }
            Pc::ReadValue { x, ts1 } => {
                let value = self.load_reg(&x);
                self.prim(t, || format!("t{}.value := reg[{x}]", t.0));
                go(Pc::ReadLock { x, ts1, value })
            }
            Pc::ReadLock { x, ts1, value } => {
                let me = self.desc(i).handle;
                let locked = self.lock_test(&x, me);
                self.prim(t, || format!("t{}.locked := lock[{x}].test()", t.0));
                go(Pc::ReadVer { x, ts1, value, locked })
            }
            Pc::ReadVer { x, ts1, value, locked } => {
                let ts2 = self.load_ver(&x);
                self.prim(t, || format!("t{}.ts2 := ver[{x}]", t.0));
                let rver = self.desc(i).rver.expect("rver set at begin");
                if locked || ts1 != ts2 || rver < ts2 {
                    return go(self.abort_path(i));
                }
                self.desc_mut(i).rset.insert(x.clone());
                self.emit(t, ActionKind::Ret { val: value });
                if let Some(g) = &mut self.ghost {
                    g.txread(t, &x, value);
                }
                (None, Done(OpResult::Value(value)))
            }
            Pc::Start(TmOp::Write(x, v)) => {
                self.emit(t, ActionKind::Write { reg: x.clone(), val: v });
                self.desc_mut(i).wset.insert(x, v);
                self.emit(t, ActionKind::RetUnit);
                (None, Done(OpResult::Unit))
            }
            Pc::Start(TmOp::Commit) => {
                self.emit(t, ActionKind::TxCommit);
                go(if self.desc(i).wset.is_empty() { Pc::FetchInc } else { Pc::TryLock(0) })
            }
            Pc::TryLock(n) => {
                let (x, _) = self.wset_entry(i, n);
                let me = self.desc(i).handle;
                self.touch(Cell::Lock(x.clone()), Touch::Update);
                self.prim(t, || format!("t{}.acquired := lock[{x}].trylock()", t.0));
                let cell = self.cell_mut(&x);
                if cell.lock.is_some() {
                    return go(self.abort_path(i));
                }
                cell.lock = Some(me);
                let d = self.desc_mut(i);
                d.lset.insert(x);
                go(if n + 1 < d.wset.len() { Pc::TryLock(n + 1) } else { Pc::FetchInc })
            }
            Pc::FetchInc => {
                self.touch(Cell::Clock, Touch::Update);
                let c = self.core.clock;
                if !self.config.faults.skip_clock_increment {
                    self.core.clock += 1;
                }
                self.desc_mut(i).wver = Some(c + 1);
                self.prim(t, || format!("t{}.wver := fetch_and_increment(clock)+1", t.0));
                if !self.desc(i).rset.is_empty() {
                    return go(Pc::ValidateTest(0));
                }
                if let Some(g) = &mut self.ghost {
                    g.txvis(t);
                }
                go(self.after_validation(i))
            }
            Pc::ValidateTest(n) => {
                let d = self.desc(i);
                let (x, me) = (d.rset.iter().nth(n).expect("index within read set").clone(), d.handle);
                let locked = self.lock_test(&x, me);
                self.prim(t, || format!("t{}.locked := lock[{x}].test()", t.0));
                go(Pc::ValidateVer(n, locked))
            }
            Pc::ValidateVer(n, locked) => {
                let x = self.desc(i).rset.iter().nth(n).expect("index within read set").clone();
                let ts = self.load_ver(&x);
                self.prim(t, || format!("t{}.ts := ver[{x}]", t.0));
                let d = self.desc(i);
                let ok = !(locked || d.rver.expect("rver set at begin") < ts);
                let last = n + 1 == d.rset.len();
                if let Some(g) = &mut self.ghost {
                    g.set_pv(t, &x, ok);
                }
                if !ok {
                    return go(self.abort_path(i));
                }
                if !last {
                    return go(Pc::ValidateTest(n + 1));
                }
                if let Some(g) = &mut self.ghost {
                    g.txvis(t);
                }
                go(self.after_validation(i))
            }
            Pc::WriteReg(n) => {
                let (x, v) = self.wset_entry(i, n);
                self.touch(Cell::Reg(x.clone()), Touch::Write);
                self.prim(t, || format!("reg[{x}] := t{}.v", t.0));
                self.cell_mut(&x).reg = v;
                go(Pc::WriteVer(n))
            }
            Pc::WriteVer(n) => {
                let (x, _) = self.wset_entry(i, n);
                let w = self.desc(i).wver.expect("wver set before write-back");
                self.touch(Cell::Ver(x.clone()), Touch::Write);
                self.prim(t, || format!("ver[{x}] := t{}.wver", t.0));
                self.cell_mut(&x).ver = w;
                go(Pc::Unlock(n))
            }
            Pc::Unlock(n) => {
                let (x, _) = self.wset_entry(i, n);
                if !self.config.faults.skip_unlock {
                    self.touch(Cell::Lock(x.clone()), Touch::Write);
                    self.prim(t, || format!("lock[{x}].unlock()"));
                    self.cell_mut(&x).lock = None;
                }
                let more = n + 1 < self.desc(i).wset.len();
                go(if more { Pc::WriteReg(n + 1) } else { Pc::Handler { committed: true, second: false } })
            }
            Pc::AbortUnlock(n) => {
                let d = self.desc(i);
                let x = d.lset.iter().nth(n).expect("index within lock set").clone();
                let more = n + 1 < d.lset.len();
                self.touch(Cell::Lock(x.clone()), Touch::Write);
                self.prim(t, || format!("lock[{x}].unlock()"));
                self.cell_mut(&x).lock = None;
                go(if more { Pc::AbortUnlock(n + 1) } else { Pc::Handler { committed: false, second: false } })
            }
            Pc::Handler { committed, second } => {
                let respond_now = second == self.config.faults.reorder_handler;
                if respond_now {
                    self.emit(t, if committed { ActionKind::Committed } else { ActionKind::Aborted });
                } else {
                    self.prim(t, || format!("active[t{}] := false", t.0));
                    self.store_active(t, false);
                }
                if !second {
                    return go(Pc::Handler { committed, second: true });
                }
                let desc = self.core.threads[i].txn.take().expect("handler inside a transaction");
                if let Some(g) = &mut self.ghost {
                    g.archive(t, desc);
                }
                (None, Done(if committed { OpResult::Committed } else { OpResult::Aborted }))
            }
            Pc::Start(TmOp::Fence) => {
                self.emit(t, ActionKind::FBegin);
                self.core.threads[i].snapshot = vec![false; self.config.threads as usize];
                go(self.snapshot(t, i, 1))
            }
            Pc::Snapshot(k) => go(self.snapshot(t, i, k)),
            Pc::Wait(k) => {
                // enabled only once active[k] is false
                self.load_active(k);
                self.prim(t, || format!("t{}.busy := active[t{k}]", t.0));
                go(self.wait_from(i, k + 1))
            }
            Pc::FenceEnd => {
                self.emit(t, ActionKind::FEnd);
                (None, Done(OpResult::Unit))
            }
            Pc::Start(TmOp::NtRead(x)) => {
                let v = self.load_reg(&x);
                self.emit(t, ActionKind::Read { reg: x.clone() });
                self.emit(t, ActionKind::Ret { val: v });
                if let Some(g) = &mut self.ghost {
                    g.ntxread(t, &x, v);
                }
                (None, Done(OpResult::Value(v)))
            }
            Pc::Start(TmOp::NtWrite(x, v)) => {
                self.touch(Cell::Reg(x.clone()), Touch::Write);
                self.cell_mut(&x).reg = v;
                self.emit(t, ActionKind::Write { reg: x.clone(), val: v });
                self.emit(t, ActionKind::RetUnit);
                if let Some(g) = &mut self.ghost {
                    g.ntxwrite(t, &x);
                }
                (None, Done(OpResult::Unit))
            }
        }
    }

    /// Records `active[k]` in the fence snapshot and says what comes next.
    fn snapshot(&mut self, t: ThreadId, i: usize, k: u32) -> Pc {
        let a = self.load_active(k);
        self.prim(t, || format!("t{}.r[t{k}] := active[t{k}]", t.0));
        self.core.threads[i].snapshot[k as usize - 1] = a;
        if k < self.config.threads {
            Pc::Snapshot(k + 1)
        } else {
            self.wait_from(i, 1)
        }
    }
}
