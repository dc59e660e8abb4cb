use std::collections::BTreeMap;

use super::{ActionIndex, ActionKind, History, HistoryError, RegisterId, ThreadId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnStatus {
    Committed,
    Aborted,
    CommitPending,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionView {
    pub thread: ThreadId,
    pub action_indices: Vec<ActionIndex>,
    pub status: TxnStatus,
}

impl TransactionView {
    pub fn begin_index(&self) -> ActionIndex {
        self.action_indices[0]
    }

    pub fn last_index(&self) -> ActionIndex {
        *self.action_indices.last().expect("transactions are never empty")
    }

    /// Index of the committed/aborted action, if the transaction has one.
    pub fn completion_index(&self) -> Option<ActionIndex> {
        match self.status {
            TxnStatus::Committed | TxnStatus::Aborted => Some(self.last_index()),
            _ => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.completion_index().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonTxnAccess {
    pub request_index: ActionIndex,
    /// Absent only when the history ends right after the request.
    pub response_index: Option<ActionIndex>,
    pub thread: ThreadId,
    pub reg: RegisterId,
    pub is_write: bool,
    /// The written value, or the value returned by a read.
    pub value: Option<Value>,
}

impl NonTxnAccess {
    pub fn indices(&self) -> Vec<ActionIndex> {
        let mut v = vec![self.request_index];
        v.extend(self.response_index);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Membership {
    Txn(usize),
    NonTxn(usize),
    Fence,
}

/// Partition of a history's actions plus request/response matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub txns: Vec<TransactionView>,
    pub nontxn: Vec<NonTxnAccess>,
    pub fences: Vec<ActionIndex>,
    pub membership: Vec<Membership>,
    /// For a response, its request; for an answered request, its response.
    pub matching: Vec<Option<ActionIndex>>,
}

impl Classification {
    pub fn is_transactional(&self, i: ActionIndex) -> bool {
        matches!(self.membership[i], Membership::Txn(_))
    }

    pub fn is_nontxn(&self, i: ActionIndex) -> bool {
        matches!(self.membership[i], Membership::NonTxn(_))
    }

    pub fn txn_of(&self, i: ActionIndex) -> Option<usize> {
        match self.membership[i] {
            Membership::Txn(t) => Some(t),
            _ => None,
        }
    }

    pub fn request_of(&self, resp: ActionIndex) -> Option<ActionIndex> {
        self.matching[resp].filter(|&r| r < resp)
    }

    pub fn response_of(&self, req: ActionIndex) -> Option<ActionIndex> {
        self.matching[req].filter(|&r| r > req)
    }
}

#[derive(Default)]
struct ThreadCursor {
    open_txn: Option<usize>,
    pending: Option<ActionIndex>,
}

fn malformed(index: ActionIndex, reason: impl Into<String>) -> HistoryError {
    HistoryError::Malformed { index, reason: reason.into() }
}

/// Splits a history into transactions, non-transactional accesses and fence
/// actions, matching every response to its request.
pub fn classify(history: &History) -> Result<Classification, HistoryError> {
    let actions = history.actions();
    let mut txns: Vec<TransactionView> = Vec::new();
    let mut nontxn: Vec<NonTxnAccess> = Vec::new();
    let mut fences = Vec::new();
    let mut membership = Vec::with_capacity(actions.len());
    let mut matching = vec![None; actions.len()];
    let mut cursors: BTreeMap<ThreadId, ThreadCursor> = BTreeMap::new();

    for (i, a) in actions.iter().enumerate() {
        let cur = cursors.entry(a.thread).or_default();
        if a.kind.is_request() {
            if let Some(p) = cur.pending {
                return Err(malformed(i, format!("request while action {p} awaits its response")));
            }
            cur.pending = Some(i);
            match (&a.kind, cur.open_txn) {
                (ActionKind::TxBegin, Some(_)) => return Err(malformed(i, "nested txbegin")),
                (ActionKind::TxBegin, None) => {
                    txns.push(TransactionView {
                        thread: a.thread,
                        action_indices: vec![i],
                        status: TxnStatus::Live,
                    });
                    cur.open_txn = Some(txns.len() - 1);
                    membership.push(Membership::Txn(txns.len() - 1));
                }
                (ActionKind::FBegin, Some(_)) => return Err(malformed(i, "fence inside a transaction")),
                (ActionKind::FBegin, None) => {
                    fences.push(i);
                    membership.push(Membership::Fence);
                }
                (ActionKind::TxCommit, None) => return Err(malformed(i, "txcommit outside a transaction")),
                (_, Some(t)) => {
                    txns[t].action_indices.push(i);
                    membership.push(Membership::Txn(t));
                }
                (ActionKind::Write { reg, val }, None) => {
                    nontxn.push(NonTxnAccess {
                        request_index: i,
                        response_index: None,
                        thread: a.thread,
                        reg: reg.clone(),
                        is_write: true,
                        value: Some(*val),
                    });
                    membership.push(Membership::NonTxn(nontxn.len() - 1));
                }
                (ActionKind::Read { reg }, None) => {
                    nontxn.push(NonTxnAccess {
                        request_index: i,
                        response_index: None,
                        thread: a.thread,
                        reg: reg.clone(),
                        is_write: false,
                        value: None,
                    });
                    membership.push(Membership::NonTxn(nontxn.len() - 1));
                }
                _ => unreachable!("all request kinds handled"),
            }
        } else if a.kind.is_response() {
            let Some(req) = cur.pending.take() else {
                return Err(malformed(i, "response without a pending request"));
            };
            if !actions[req].kind.accepts(&a.kind) {
                return Err(malformed(
                    i,
                    format!("{} does not answer {}", a.kind.name(), actions[req].kind.name()),
                ));
            }
            matching[req] = Some(i);
            matching[i] = Some(req);
            let m = membership[req];
            membership.push(m);
            match m {
                Membership::Txn(t) => {
                    let view = &mut txns[t];
                    view.action_indices.push(i);
                    if a.kind.is_completion() {
                        view.status = if a.kind == ActionKind::Committed {
                            TxnStatus::Committed
                        } else {
                            TxnStatus::Aborted
                        };
                        cur.open_txn = None;
                    }
                }
                Membership::NonTxn(n) => {
                    if a.kind == ActionKind::Aborted {
                        return Err(malformed(i, "non-transactional access aborted"));
                    }
                    let acc = &mut nontxn[n];
                    acc.response_index = Some(i);
                    if let ActionKind::Ret { val } = a.kind {
                        acc.value = Some(val);
                    }
                }
                Membership::Fence => fences.push(i),
            }
        } else {
            return Err(HistoryError::PrimitiveAction { index: i });
        }
    }

    for view in &mut txns {
        if view.status == TxnStatus::Live
            && matches!(actions[view.last_index()].kind, ActionKind::TxCommit)
        {
            view.status = TxnStatus::CommitPending;
        }
    }

    Ok(Classification { txns, nontxn, fences, membership, matching })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build::{h0, HistoryBuilder};

    #[test]
    fn h0_has_pending_and_live_txn() {
        let c = classify(&h0()).unwrap();
        assert_eq!(c.txns.len(), 2);
        assert_eq!(c.txns[0].status, TxnStatus::CommitPending);
        assert_eq!(c.txns[1].status, TxnStatus::Live);
        assert_eq!(c.nontxn.len(), 1);
        assert_eq!(c.nontxn[0].value, Some(1));
        assert!(!c.nontxn[0].is_write);
    }

    #[test]
    fn fence_only() {
        let c = classify(&HistoryBuilder::new().fence(1).history()).unwrap();
        assert!(c.txns.is_empty() && c.nontxn.is_empty());
        assert_eq!(c.fences, vec![0, 1]);
    }

    #[test]
    fn committed_txn() {
        let h = HistoryBuilder::new().begin(1).write(1, "x", 3).commit(1).history();
        let c = classify(&h).unwrap();
        assert_eq!(c.txns.len(), 1);
        assert_eq!(c.txns[0].status, TxnStatus::Committed);
        assert_eq!(c.txns[0].action_indices, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn aborted_txbegin() {
        let h = HistoryBuilder::new().txbegin(1).aborted(1).history();
        let c = classify(&h).unwrap();
        assert_eq!(c.txns[0].status, TxnStatus::Aborted);
    }

    #[test]
    fn rejects_mismatched_response() {
        let h = HistoryBuilder::new().txbegin(1).committed(1).history();
        assert!(classify(&h).is_err());
        let h = HistoryBuilder::new().write_req(1, "x", 1).aborted(1).history();
        assert!(classify(&h).is_err());
    }
}
