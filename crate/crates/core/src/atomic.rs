//! The strongly atomic TM: membership of histories, and an executable model
//! in which transactions run as uninterruptible blocks.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::history::{
    classify, complete, ActionIndex, ActionKind, Classification, CompletionDecision, History, HistoryError,
    Membership, Recorder, RegisterId, ThreadId, TxnStatus, Value, V_INIT,
};

/// Per commit-pending transaction (keyed by its txbegin index): commit or abort.
pub type CompletionChoice = BTreeMap<ActionIndex, CompletionDecision>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AtomicError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("history is interleaved")]
    Interleaved,
    #[error("transaction begun at {0} is still commit-pending")]
    CommitPending(ActionIndex),
}

fn non_interleaved_with(c: &Classification) -> bool {
    for (ti, t) in c.txns.iter().enumerate() {
        for k in t.begin_index()..=t.last_index() {
            match c.membership[k] {
                Membership::Txn(other) if other != ti => return false,
                Membership::NonTxn(_) => return false,
                _ => {}
            }
        }
    }
    true
}

/// No transaction's span overlaps another transaction or a
/// non-transactional access. Fence actions may sit inside spans.
pub fn is_non_interleaved(history: &History) -> Result<bool, HistoryError> {
    Ok(non_interleaved_with(&classify(history)?))
}

fn legal_with(history: &History, c: &Classification) -> bool {
    let acts = history.actions();
    for (j, a) in acts.iter().enumerate() {
        let ActionKind::Ret { val } = a.kind else { continue };
        let Some(req) = c.request_of(j) else { continue };
        let ActionKind::Read { reg } = &acts[req].kind else { continue };
        let own = c.txn_of(req);
        let expected = acts[..req]
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, w)| match &w.kind {
                ActionKind::Write { reg: wr, val } if wr == reg => {
                    let excluded = match c.txn_of(i) {
                        Some(t) if Some(t) != own => {
                            matches!(c.txns[t].status, TxnStatus::Aborted | TxnStatus::Live)
                        }
                        _ => false,
                    };
                    (!excluded).then_some(*val)
                }
                _ => None,
            })
            .unwrap_or(V_INIT);
        if val != expected {
            return false;
        }
    }
    true
}

/// Every read returns the last preceding write to its register that is not
/// in an aborted or live transaction other than its own, or the initial value.
pub fn reads_legal(completed: &History) -> Result<bool, AtomicError> {
    let c = classify(completed)?;
    if !non_interleaved_with(&c) {
        return Err(AtomicError::Interleaved);
    }
    if let Some(t) = c.txns.iter().find(|t| t.status == TxnStatus::CommitPending) {
        return Err(AtomicError::CommitPending(t.begin_index()));
    }
    Ok(legal_with(completed, &c))
}

/// Some completion of the history makes every read legal. Returns the first
/// such completion, enumerating commit-before-abort per pending transaction.
pub fn atomic_witness(history: &History) -> Result<Option<CompletionChoice>, HistoryError> {
    let c = classify(history)?;
    if !non_interleaved_with(&c) {
        return Ok(None);
    }
    let pending: Vec<ActionIndex> = c
        .txns
        .iter()
        .filter(|t| t.status == TxnStatus::CommitPending)
        .map(|t| t.begin_index())
        .collect();
    assert!(pending.len() < 32, "too many commit-pending transactions to enumerate");
    for mask in 0u32..(1 << pending.len()) {
        let choice: CompletionChoice = pending
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let d = if mask & (1 << k) == 0 { CompletionDecision::Commit } else { CompletionDecision::Abort };
                (b, d)
            })
            .collect();
        let hc = complete(history, &choice).expect("choice covers exactly the pending transactions");
        let cc = classify(&hc)?;
        if legal_with(&hc, &cc) {
            return Ok(Some(choice));
        }
    }
    Ok(None)
}

/// Membership in the strongly atomic TM. Malformed histories are not members.
pub fn atomic_member(history: &History) -> bool {
    matches!(atomic_witness(history), Ok(Some(_)))
}

/// Memory of the strongly atomic TM. The open transaction's writes are kept
/// in a buffer and applied on commit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AtomicMemory {
    mem: BTreeMap<RegisterId, Value>,
    open: Option<(ThreadId, BTreeMap<RegisterId, Value>)>,
}

impl AtomicMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, reg: &RegisterId) -> Value {
        self.mem.get(reg).copied().unwrap_or(V_INIT)
    }

    pub fn registers(&self) -> &BTreeMap<RegisterId, Value> {
        &self.mem
    }

    pub fn in_transaction(&self) -> Option<ThreadId> {
        self.open.as_ref().map(|(t, _)| *t)
    }

    pub fn begin(&mut self, rec: &mut Recorder, t: ThreadId) {
        assert!(self.open.is_none(), "atomic blocks do not overlap");
        rec.emit(t, ActionKind::TxBegin);
        rec.emit(t, ActionKind::Ok);
        self.open = Some((t, BTreeMap::new()));
    }

    /// Transactional read; `abort` answers the request with aborted instead.
    pub fn read(&mut self, rec: &mut Recorder, t: ThreadId, reg: &RegisterId, abort: bool) -> Option<Value> {
        rec.emit(t, ActionKind::Read { reg: reg.clone() });
        if abort {
            self.abort(rec, t);
            return None;
        }
        let (_, buf) = self.open.as_ref().expect("read inside a block");
        let v = buf.get(reg).copied().unwrap_or_else(|| self.value(reg));
        rec.emit(t, ActionKind::Ret { val: v });
        Some(v)
    }

    pub fn write(&mut self, rec: &mut Recorder, t: ThreadId, reg: &RegisterId, val: Value, abort: bool) -> bool {
        rec.emit(t, ActionKind::Write { reg: reg.clone(), val });
        if abort {
            self.abort(rec, t);
            return false;
        }
        let (_, buf) = self.open.as_mut().expect("write inside a block");
        buf.insert(reg.clone(), val);
        rec.emit(t, ActionKind::RetUnit);
        true
    }

    pub fn commit(&mut self, rec: &mut Recorder, t: ThreadId, decision: CompletionDecision) {
        rec.emit(t, ActionKind::TxCommit);
        match decision {
            CompletionDecision::Commit => {
                let (_, buf) = self.open.take().expect("commit inside a block");
                self.mem.extend(buf);
                rec.emit(t, ActionKind::Committed);
            }
            CompletionDecision::Abort => self.abort(rec, t),
        }
    }

    fn abort(&mut self, rec: &mut Recorder, t: ThreadId) {
        self.open = None;
        rec.emit(t, ActionKind::Aborted);
    }

    pub fn fence(&mut self, rec: &mut Recorder, t: ThreadId) {
        rec.emit(t, ActionKind::FBegin);
        rec.emit(t, ActionKind::FEnd);
    }

    pub fn nontxn_read(&mut self, rec: &mut Recorder, t: ThreadId, reg: &RegisterId) -> Value {
        let v = self.value(reg);
        rec.emit(t, ActionKind::Read { reg: reg.clone() });
        rec.emit(t, ActionKind::Ret { val: v });
        v
    }

    pub fn nontxn_write(&mut self, rec: &mut Recorder, t: ThreadId, reg: &RegisterId, val: Value) {
        self.mem.insert(reg.clone(), val);
        rec.emit(t, ActionKind::Write { reg: reg.clone(), val });
        rec.emit(t, ActionKind::RetUnit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build::{h0, h_bad, HistoryBuilder};

    #[test]
    fn non_interleaving() {
        assert!(is_non_interleaved(&h0()).unwrap());
        assert!(is_non_interleaved(&History::empty()).unwrap());
        let h = HistoryBuilder::new().begin(1).begin(2).write(1, "x", 1).history();
        assert!(!is_non_interleaved(&h).unwrap());
        let h = HistoryBuilder::new().begin(1).read(2, "x", 0).commit(1).history();
        assert!(!is_non_interleaved(&h).unwrap());
        // fence actions may appear inside a span
        let h = HistoryBuilder::new().begin(1).fence(2).commit(1).history();
        assert!(is_non_interleaved(&h).unwrap());
    }

    #[test]
    fn legality() {
        let ok = HistoryBuilder::new().begin(1).write(1, "x", 1).commit(1).read(2, "x", 1).history();
        assert!(reads_legal(&ok).unwrap());
        let stale = HistoryBuilder::new().begin(1).write(1, "x", 1).commit(1).read(2, "x", 0).history();
        assert!(!reads_legal(&stale).unwrap());
        let live = HistoryBuilder::new().begin(1).write(1, "x", 5).read(2, "x", 0).history();
        assert!(reads_legal(&live).unwrap());
        let own = HistoryBuilder::new().begin(1).write(1, "x", 5).read(1, "x", 5).history();
        assert!(reads_legal(&own).unwrap());
        assert_eq!(reads_legal(&h0()), Err(AtomicError::CommitPending(0)));
    }

    #[test]
    fn membership() {
        let w = atomic_witness(&h0()).unwrap().unwrap();
        assert_eq!(w[&0], CompletionDecision::Commit);
        assert!(!atomic_member(&h_bad()));
        assert!(atomic_member(&History::empty()));
        // a pending transaction whose write nobody saw may go either way; a
        // reader of the initial value forces abort
        let h = HistoryBuilder::new().begin(1).write(1, "x", 1).txcommit(1).read(2, "x", 0).history();
        assert_eq!(atomic_witness(&h).unwrap().unwrap()[&0], CompletionDecision::Abort);
    }

    #[test]
    fn memory_model() {
        let mut m = AtomicMemory::new();
        let mut rec = Recorder::new();
        let (t1, t2, x) = (ThreadId(1), ThreadId(2), RegisterId::new("x"));
        m.begin(&mut rec, t1);
        assert!(m.write(&mut rec, t1, &x, 3, false));
        assert_eq!(m.read(&mut rec, t1, &x, false), Some(3));
        m.commit(&mut rec, t1, CompletionDecision::Abort);
        assert_eq!(m.nontxn_read(&mut rec, t2, &x), 0);
        m.begin(&mut rec, t1);
        m.write(&mut rec, t1, &x, 4, false);
        m.commit(&mut rec, t1, CompletionDecision::Commit);
        assert_eq!(m.nontxn_read(&mut rec, t2, &x), 4);
        assert!(atomic_member(&rec.history()));
    }
}
