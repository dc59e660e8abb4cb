use std::collections::BTreeMap;

use crate::history::{classify, ActionIndex, ActionKind, Classification, History, HistoryError, RegisterId, TxnStatus, V_INIT};

/// Request indices of local accesses, each with its response if present.
/// A read is local when its transaction wrote the register before; a write
/// is local when its transaction writes the register again later.
pub fn local_pairs(history: &History) -> Result<Vec<(ActionIndex, Option<ActionIndex>)>, HistoryError> {
    let c = classify(history)?;
    let mut out: Vec<_> = local_requests(history, &c)
        .into_iter()
        .map(|i| (i, c.response_of(i)))
        .collect();
    out.sort();
    Ok(out)
}

pub(crate) fn local_requests(history: &History, c: &Classification) -> Vec<ActionIndex> {
    let acts = history.actions();
    let mut out = Vec::new();
    for t in &c.txns {
        let mut last_write: BTreeMap<&RegisterId, ActionIndex> = BTreeMap::new();
        for &i in &t.action_indices {
            match &acts[i].kind {
                ActionKind::Read { reg } if last_write.contains_key(reg) => out.push(i),
                ActionKind::Write { reg, .. } => {
                    if let Some(prev) = last_write.insert(reg, i) {
                        out.push(prev);
                    }
                }
                _ => {}
            }
        }
    }
    out.sort();
    out
}

/// The first read (request index) that breaks consistency, if any.
pub(crate) fn first_inconsistent_read(history: &History, c: &Classification) -> Option<ActionIndex> {
    let acts = history.actions();
    let local: std::collections::HashSet<ActionIndex> = local_requests(history, c).into_iter().collect();
    for (req, a) in acts.iter().enumerate() {
        let ActionKind::Read { reg } = &a.kind else { continue };
        let Some(resp) = c.response_of(req) else { continue };
        let ActionKind::Ret { val } = acts[resp].kind else { continue };
        let own = c.txn_of(req);
        let ok = if local.contains(&req) {
            let t = &c.txns[own.expect("local reads are transactional")];
            let latest = t
                .action_indices
                .iter()
                .rev()
                .filter(|&&i| i < req)
                .find_map(|&i| match &acts[i].kind {
                    ActionKind::Write { reg: r, val } if r == reg => Some(*val),
                    _ => None,
                });
            latest == Some(val)
        } else {
            let source = acts.iter().enumerate().any(|(i, w)| {
                let ActionKind::Write { reg: r, val: wv } = &w.kind else { return false };
                if r != reg || *wv != val || local.contains(&i) {
                    return false;
                }
                match c.txn_of(i) {
                    // a non-local read cannot take its value from its own transaction
                    Some(t) if Some(t) == own => false,
                    Some(t) => !matches!(c.txns[t].status, TxnStatus::Aborted | TxnStatus::Live),
                    None => true,
                }
            });
            source || val == V_INIT
        };
        if !ok {
            return Some(req);
        }
    }
    None
}

pub fn is_consistent(history: &History) -> Result<bool, HistoryError> {
    let c = classify(history)?;
    Ok(first_inconsistent_read(history, &c).is_none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build::{h0, HistoryBuilder};

    #[test]
    fn local_accesses() {
        let h = HistoryBuilder::new()
            .begin(1)
            .write(1, "x", 1)
            .write(1, "x", 2)
            .read(1, "x", 2)
            .commit(1)
            .read(2, "x", 2)
            .history();
        assert_eq!(local_pairs(&h).unwrap(), vec![(2, Some(3)), (6, Some(7))]);
        let h = HistoryBuilder::new().begin(1).read(1, "x", 0).history();
        assert!(local_pairs(&h).unwrap().is_empty());
        let h = HistoryBuilder::new().write(1, "x", 1).write(1, "x", 2).history();
        assert!(local_pairs(&h).unwrap().is_empty());
    }

    #[test]
    fn consistency_cases() {
        assert!(is_consistent(&h0()).unwrap());
        let live_source = HistoryBuilder::new().begin(1).write(1, "x", 5).begin(2).read(2, "x", 5).history();
        assert!(!is_consistent(&live_source).unwrap());
        let init = HistoryBuilder::new().read(1, "x", 0).history();
        assert!(is_consistent(&init).unwrap());
        let stale_local = HistoryBuilder::new().begin(1).write(1, "x", 1).read(1, "x", 0).history();
        assert!(!is_consistent(&stale_local).unwrap());
        let overwritten = HistoryBuilder::new()
            .begin(1)
            .write(1, "x", 1)
            .write(1, "x", 2)
            .commit(1)
            .read(2, "x", 1)
            .history();
        assert!(!is_consistent(&overwritten).unwrap());
        let from_future_self = HistoryBuilder::new()
            .begin(1)
            .read(1, "x", 3)
            .write(1, "x", 3)
            .commit(1)
            .history();
        assert!(!is_consistent(&from_future_self).unwrap());
    }
}
