use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{classify, Action, ActionId, ActionIndex, ActionKind, History, HistoryError, TxnStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionDecision {
    Commit,
    Abort,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompletionError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("no decision for the commit-pending transaction begun at {0}")]
    Missing(ActionIndex),
    #[error("decision given for {0}, which is not a commit-pending transaction")]
    NotPending(ActionIndex),
}

/// Completes every commit-pending transaction (keyed by the index of its
/// txbegin) by inserting committed/aborted right after its txcommit.
pub fn complete(
    history: &History,
    decisions: &BTreeMap<ActionIndex, CompletionDecision>,
) -> Result<History, CompletionError> {
    let c = classify(history)?;
    let mut after: BTreeMap<ActionIndex, CompletionDecision> = BTreeMap::new();
    let mut pending = 0;
    for t in &c.txns {
        if t.status == TxnStatus::CommitPending {
            pending += 1;
            let d = decisions.get(&t.begin_index()).ok_or(CompletionError::Missing(t.begin_index()))?;
            after.insert(t.last_index(), *d);
        }
    }
    if decisions.len() != pending {
        let stray = decisions
            .keys()
            .find(|k| {
                !c.txns
                    .iter()
                    .any(|t| t.begin_index() == **k && t.status == TxnStatus::CommitPending)
            })
            .copied()
            .unwrap_or_default();
        return Err(CompletionError::NotPending(stray));
    }

    let mut next = history.next_free_id();
    let mut out = Vec::with_capacity(history.len() + after.len());
    for (i, a) in history.actions().iter().enumerate() {
        out.push(a.clone());
        if let Some(d) = after.get(&i) {
            let kind = match d {
                CompletionDecision::Commit => ActionKind::Committed,
                CompletionDecision::Abort => ActionKind::Aborted,
            };
            out.push(Action { id: ActionId(next), thread: a.thread, kind });
            next += 1;
        }
    }
    Ok(History::new(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build::{h0, HistoryBuilder};

    #[test]
    fn h0_commit_inserts_after_txcommit() {
        let h = h0();
        let hc = complete(&h, &BTreeMap::from([(0, CompletionDecision::Commit)])).unwrap();
        assert_eq!(hc.len(), h.len() + 1);
        assert_eq!(hc[5].kind, ActionKind::Committed);
        assert_eq!(hc[5].thread.0, 1);
        let hc = complete(&h, &BTreeMap::from([(0, CompletionDecision::Abort)])).unwrap();
        assert_eq!(hc[5].kind, ActionKind::Aborted);
    }

    #[test]
    fn nothing_pending() {
        let h = HistoryBuilder::new().begin(1).commit(1).history();
        assert_eq!(complete(&h, &BTreeMap::new()).unwrap(), h);
    }

    #[test]
    fn decision_errors() {
        let h = h0();
        assert_eq!(complete(&h, &BTreeMap::new()), Err(CompletionError::Missing(0)));
        let both = BTreeMap::from([(0, CompletionDecision::Commit), (6, CompletionDecision::Commit)]);
        assert_eq!(complete(&h, &both), Err(CompletionError::NotPending(6)));
    }
}
