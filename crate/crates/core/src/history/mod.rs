//! Actions, traces and histories, plus the structural views every analysis
//! is built on: transactions, non-transactional accesses and fence actions.

mod classify;
mod codec;
mod complete;
mod wellformed;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{classify, Classification, Membership, NonTxnAccess, TransactionView, TxnStatus};
pub use codec::{decode, decode_lenient, encode, DecodeError};
pub use complete::{complete, CompletionDecision, CompletionError};
pub use wellformed::{well_formed, Violation, WellFormednessReport};

/// The value every register holds before it is first written.
pub const V_INIT: Value = 0;

pub type Value = i64;

/// Position of an action inside a history or trace.
pub type ActionIndex = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThreadId(pub u32);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegisterId(pub Arc<str>);

impl RegisterId {
    pub fn new(name: &str) -> Self {
        RegisterId(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RegisterId {
    fn from(name: &str) -> Self {
        RegisterId::new(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActionKind {
    /// A thread-local command. The tag names locals as `t<N>.<var>`.
    Prim(String),
    TxBegin,
    Ok,
    TxCommit,
    Committed,
    Aborted,
    Write { reg: RegisterId, val: Value },
    Read { reg: RegisterId },
    Ret { val: Value },
    RetUnit,
    FBegin,
    FEnd,
}

impl ActionKind {
    pub fn is_request(&self) -> bool {
        matches!(
            self,
            ActionKind::TxBegin
                | ActionKind::TxCommit
                | ActionKind::Write { .. }
                | ActionKind::Read { .. }
                | ActionKind::FBegin
        )
    }

    pub fn is_response(&self) -> bool {
        matches!(
            self,
            ActionKind::Ok
                | ActionKind::Committed
                | ActionKind::Aborted
                | ActionKind::Ret { .. }
                | ActionKind::RetUnit
                | ActionKind::FEnd
        )
    }

    pub fn is_prim(&self) -> bool {
        matches!(self, ActionKind::Prim(_))
    }

    /// Committed or aborted: the actions that end a transaction.
    pub fn is_completion(&self) -> bool {
        matches!(self, ActionKind::Committed | ActionKind::Aborted)
    }

    pub fn is_fence(&self) -> bool {
        matches!(self, ActionKind::FBegin | ActionKind::FEnd)
    }

    /// Whether `resp` is a legal response to this request.
    pub fn accepts(&self, resp: &ActionKind) -> bool {
        matches!(
            (self, resp),
            (ActionKind::TxBegin, ActionKind::Ok | ActionKind::Aborted)
                | (ActionKind::TxCommit, ActionKind::Committed | ActionKind::Aborted)
                | (ActionKind::Write { .. }, ActionKind::RetUnit | ActionKind::Aborted)
                | (ActionKind::Read { .. }, ActionKind::Ret { .. } | ActionKind::Aborted)
                | (ActionKind::FBegin, ActionKind::FEnd)
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Prim(_) => "prim",
            ActionKind::TxBegin => "txbegin",
            ActionKind::Ok => "ok",
            ActionKind::TxCommit => "txcommit",
            ActionKind::Committed => "committed",
            ActionKind::Aborted => "aborted",
            ActionKind::Write { .. } => "write",
            ActionKind::Read { .. } => "read",
            ActionKind::Ret { .. } => "ret",
            ActionKind::RetUnit => "retu",
            ActionKind::FBegin => "fbegin",
            ActionKind::FEnd => "fend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub id: ActionId,
    pub thread: ThreadId,
    pub kind: ActionKind,
}

impl Action {
    pub fn new(id: u64, thread: u32, kind: ActionKind) -> Self {
        Action { id: ActionId(id), thread: ThreadId(thread), kind }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, ", self.id.0, self.thread)?;
        match &self.kind {
            ActionKind::Prim(cmd) => write!(f, "{cmd})"),
            ActionKind::Write { reg, val } => write!(f, "write({reg},{val}))"),
            ActionKind::Read { reg } => write!(f, "read({reg}))"),
            ActionKind::Ret { val } => write!(f, "ret({val}))"),
            other => write!(f, "{})", other.name()),
        }
    }
}

/// Any finite sequence of actions, primitive ones included.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Trace {
    pub actions: Vec<Action>,
}

impl Trace {
    pub fn new(actions: Vec<Action>) -> Self {
        Trace { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Projection onto TM interface actions.
    pub fn history(&self) -> History {
        History {
            actions: self.actions.iter().filter(|a| !a.kind.is_prim()).cloned().collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("action {index} is primitive; histories hold only TM interface actions")]
    PrimitiveAction { index: ActionIndex },
    #[error("malformed history at action {index}: {reason}")]
    Malformed { index: ActionIndex, reason: String },
}

/// A trace containing only TM interface actions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct History {
    actions: Vec<Action>,
}

impl History {
    pub fn new(actions: Vec<Action>) -> Result<Self, HistoryError> {
        if let Some(index) = actions.iter().position(|a| a.kind.is_prim()) {
            return Err(HistoryError::PrimitiveAction { index });
        }
        Ok(History { actions })
    }

    pub fn empty() -> Self {
        History::default()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: ActionIndex) -> Option<&Action> {
        self.actions.get(index)
    }

    pub fn to_trace(&self) -> Trace {
        Trace::new(self.actions.clone())
    }

    pub fn into_actions(self) -> Vec<Action> {
        self.actions
    }

    /// The history extended by one action.
    pub fn extended(&self, action: Action) -> Result<Self, HistoryError> {
        let mut actions = self.actions.clone();
        actions.push(action);
        History::new(actions)
    }

    pub fn prefix(&self, len: usize) -> History {
        History { actions: self.actions[..len.min(self.actions.len())].to_vec() }
    }

    pub fn threads(&self) -> Vec<ThreadId> {
        let mut ts: Vec<ThreadId> = self.actions.iter().map(|a| a.thread).collect();
        ts.sort();
        ts.dedup();
        ts
    }

    pub fn next_free_id(&self) -> u64 {
        self.actions.iter().map(|a| a.id.0 + 1).max().unwrap_or(0)
    }
}

impl std::ops::Index<ActionIndex> for History {
    type Output = Action;

    fn index(&self, index: ActionIndex) -> &Action {
        &self.actions[index]
    }
}

/// Compact constructors for hand-written histories in tests and fixtures.
pub mod build {
    use super::*;

    /// Appends actions with sequential ids starting at zero.
    #[derive(Debug, Default, Clone)]
    pub struct HistoryBuilder {
        actions: Vec<Action>,
    }

    impl HistoryBuilder {
        pub fn new() -> Self {
            Self::default()
        }

        pub fn push(mut self, thread: u32, kind: ActionKind) -> Self {
            let id = self.actions.len() as u64;
            self.actions.push(Action::new(id, thread, kind));
            self
        }

        pub fn txbegin(self, t: u32) -> Self {
            self.push(t, ActionKind::TxBegin)
        }

        pub fn ok(self, t: u32) -> Self {
            self.push(t, ActionKind::Ok)
        }

        pub fn begin(self, t: u32) -> Self {
            self.txbegin(t).ok(t)
        }

        pub fn txcommit(self, t: u32) -> Self {
            self.push(t, ActionKind::TxCommit)
        }

        pub fn committed(self, t: u32) -> Self {
            self.push(t, ActionKind::Committed)
        }

        pub fn aborted(self, t: u32) -> Self {
            self.push(t, ActionKind::Aborted)
        }

        pub fn commit(self, t: u32) -> Self {
            self.txcommit(t).committed(t)
        }

        pub fn write_req(self, t: u32, reg: &str, val: Value) -> Self {
            self.push(t, ActionKind::Write { reg: RegisterId::new(reg), val })
        }

        pub fn read_req(self, t: u32, reg: &str) -> Self {
            self.push(t, ActionKind::Read { reg: RegisterId::new(reg) })
        }

        pub fn ret(self, t: u32, val: Value) -> Self {
            self.push(t, ActionKind::Ret { val })
        }

        pub fn retu(self, t: u32) -> Self {
            self.push(t, ActionKind::RetUnit)
        }

        pub fn write(self, t: u32, reg: &str, val: Value) -> Self {
            self.write_req(t, reg, val).retu(t)
        }

        pub fn read(self, t: u32, reg: &str, val: Value) -> Self {
            self.read_req(t, reg).ret(t, val)
        }

        pub fn fence(self, t: u32) -> Self {
            self.push(t, ActionKind::FBegin).push(t, ActionKind::FEnd)
        }

        pub fn trace(self) -> Trace {
            Trace::new(self.actions)
        }

        pub fn history(self) -> History {
            History::new(self.actions).expect("builder emits no primitive actions")
        }
    }

    /// The non-interleaved example history with a commit-pending and a live
    /// transaction and a non-transactional read of the pending write.
    pub fn h0() -> History {
        HistoryBuilder::new()
            .begin(1)
            .write(1, "x", 1)
            .txcommit(1)
            .begin(2)
            .write_req(2, "x", 2)
            .read(3, "x", 1)
            .history()
    }

    /// A committed write of x, then a fence and a non-transactional read of x
    /// in another thread that still returns the initial value.
    pub fn h_bad() -> History {
        HistoryBuilder::new()
            .begin(1)
            .write(1, "x", 1)
            .commit(1)
            .fence(2)
            .read(2, "x", 0)
            .history()
    }
}

/// Append-only log shared by the TM machines and the litmus interpreter.
/// Keeps the full trace and its history projection side by side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Recorder {
    trace: Vec<Action>,
    history: Vec<Action>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a TM interface action and returns its history index.
    pub fn emit(&mut self, thread: ThreadId, kind: ActionKind) -> ActionIndex {
        debug_assert!(!kind.is_prim());
        let a = Action { id: ActionId(self.trace.len() as u64), thread, kind };
        self.trace.push(a.clone());
        self.history.push(a);
        self.history.len() - 1
    }

    pub fn prim(&mut self, thread: ThreadId, cmd: String) {
        let id = ActionId(self.trace.len() as u64);
        self.trace.push(Action { id, thread, kind: ActionKind::Prim(cmd) });
    }

    pub fn history_actions(&self) -> &[Action] {
        &self.history
    }

    pub fn history(&self) -> History {
        History { actions: self.history.clone() }
    }

    pub fn trace(&self) -> Trace {
        Trace::new(self.trace.clone())
    }
}
