use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::{ActionIndex, ActionKind, ThreadId, Trace, V_INIT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: u8,
    pub index: ActionIndex,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WellFormednessReport {
    pub violations: Vec<Violation>,
}

impl WellFormednessReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rules(&self) -> Vec<u8> {
        let mut r: Vec<u8> = self.violations.iter().map(|v| v.rule).collect();
        r.sort();
        r.dedup();
        r
    }

    fn push(&mut self, rule: u8, index: ActionIndex, message: impl Into<String>) {
        self.violations.push(Violation { rule, index, message: message.into() });
    }
}

#[derive(Default)]
struct ThreadScan {
    in_txn: bool,
    pending: Option<ActionIndex>,
    last_txbegin: Option<ActionIndex>,
}

/// Thread numbers mentioned as `t<N>.` in a primitive command tag.
fn referenced_threads(cmd: &str) -> Vec<u32> {
    let bytes = cmd.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let boundary = i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
        if boundary && bytes[i] == b't' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'.' {
                if let Ok(n) = cmd[i + 1..j].parse() {
                    out.push(n);
                }
                i = j;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Checks all ten well-formedness conditions and reports every violation.
pub fn well_formed(trace: &Trace) -> WellFormednessReport {
    let actions = &trace.actions;
    let mut report = WellFormednessReport::default();

    let mut ids = HashMap::new();
    let mut written = HashMap::new();
    for (i, a) in actions.iter().enumerate() {
        if let Some(first) = ids.insert(a.id, i) {
            report.push(1, i, format!("id {} already used by action {first}", a.id.0));
            ids.insert(a.id, first);
        }
        match &a.kind {
            ActionKind::Prim(cmd) => {
                for t in referenced_threads(cmd) {
                    if t != a.thread.0 {
                        report.push(2, i, format!("{} touches a local of t{t}", a.thread));
                    }
                }
            }
            ActionKind::Write { val, .. } => {
                if *val == V_INIT {
                    report.push(3, i, "write of the initial value");
                } else if let Some(first) = written.insert(*val, i) {
                    report.push(3, i, format!("value {val} already written by action {first}"));
                }
            }
            _ => {}
        }
    }

    let mut scans: BTreeMap<ThreadId, ThreadScan> = BTreeMap::new();
    // (fbegin index, thread) for fences still waiting for their fend
    let mut open_fences: BTreeMap<ThreadId, ActionIndex> = BTreeMap::new();
    let mut txbegins_at: Vec<(ActionIndex, ThreadId)> = Vec::new();
    let mut completions: Vec<(ActionIndex, ThreadId)> = Vec::new();

    for (i, a) in actions.iter().enumerate() {
        let scan = scans.entry(a.thread).or_default();
        if a.kind.is_prim() {
            if let Some(p) = scan.pending {
                report.push(4, i, format!("primitive action between request {p} and its response"));
            }
            continue;
        }
        if a.kind.is_request() {
            if let Some(p) = scan.pending {
                report.push(5, i, format!("request while request {p} is unanswered"));
            }
            scan.pending = Some(i);
            match &a.kind {
                ActionKind::TxBegin => {
                    if scan.in_txn {
                        report.push(6, i, "txbegin inside a transaction");
                    }
                    scan.in_txn = true;
                    scan.last_txbegin = Some(i);
                    txbegins_at.push((i, a.thread));
                }
                ActionKind::TxCommit if !scan.in_txn => {
                    report.push(5, i, "txcommit outside a transaction");
                }
                ActionKind::FBegin => {
                    if scan.in_txn {
                        report.push(9, i, "fence inside a transaction");
                    }
                    open_fences.insert(a.thread, i);
                }
                ActionKind::Read { .. } | ActionKind::Write { .. } if !scan.in_txn => {
                    // Non-transactional access: its response must come next.
                    match actions.get(i + 1) {
                        Some(next) if next.thread == a.thread && a.kind.accepts(&next.kind) => {
                            if next.kind == ActionKind::Aborted {
                                report.push(8, i + 1, "non-transactional access aborted");
                            }
                        }
                        _ => report.push(7, i, "non-transactional access not answered immediately"),
                    }
                }
                _ => {}
            }
        } else {
            let Some(req) = scan.pending.take() else {
                report.push(5, i, format!("{} without a pending request", a.kind.name()));
                if a.kind.is_completion() && !scan.in_txn {
                    report.push(6, i, "completion outside a transaction");
                }
                continue;
            };
            if !actions[req].kind.accepts(&a.kind) {
                report.push(
                    5,
                    i,
                    format!("{} does not answer {}", a.kind.name(), actions[req].kind.name()),
                );
            }
            if a.kind.is_completion() {
                if scan.in_txn {
                    completions.push((i, a.thread));
                } else {
                    report.push(6, i, "completion outside a transaction");
                }
                scan.in_txn = false;
            }
            if a.kind == ActionKind::FEnd {
                if let Some(fb) = open_fences.remove(&a.thread) {
                    check_fence(fb, i, &txbegins_at, &completions, &mut report);
                }
            }
        }
    }
    report
}

/// Every transaction begun before the fence started must complete before the
/// fence ends. Only the last txbegin per thread can still be open.
fn check_fence(
    fbegin: ActionIndex,
    fend: ActionIndex,
    txbegins: &[(ActionIndex, ThreadId)],
    completions: &[(ActionIndex, ThreadId)],
    report: &mut WellFormednessReport,
) {
    let mut last: BTreeMap<ThreadId, ActionIndex> = BTreeMap::new();
    for &(b, t) in txbegins.iter().take_while(|(b, _)| *b < fbegin) {
        last.insert(t, b);
    }
    for (t, b) in last {
        let done = completions.iter().any(|&(c, ct)| ct == t && c > b && c < fend);
        if !done {
            report.push(
                10,
                fend,
                format!("fence ended before the transaction begun by {t} at {b} completed"),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build::{h0, h_bad, HistoryBuilder};
    use crate::history::{Action, ActionKind};

    #[test]
    fn empty_trace() {
        assert!(well_formed(&Trace::default()).is_ok());
    }

    #[test]
    fn fixtures_are_well_formed() {
        assert!(well_formed(&h0().to_trace()).is_ok());
        assert!(well_formed(&h_bad().to_trace()).is_ok());
    }

    #[test]
    fn open_txn_across_fence_breaks_rule_10() {
        let t = HistoryBuilder::new().txbegin(1).fence(2).trace();
        assert_eq!(well_formed(&t).rules(), vec![10]);
        // txbegin answered, transaction still live
        let t = HistoryBuilder::new().begin(1).fence(2).trace();
        assert_eq!(well_formed(&t).rules(), vec![10]);
        // completing before fend is fine
        let t = HistoryBuilder::new()
            .begin(1)
            .push(2, ActionKind::FBegin)
            .commit(1)
            .push(2, ActionKind::FEnd)
            .trace();
        assert!(well_formed(&t).is_ok());
    }

    #[test]
    fn each_rule_detected() {
        let dup = Trace::new(vec![Action::new(0, 1, ActionKind::FBegin), Action::new(0, 1, ActionKind::FEnd)]);
        assert_eq!(well_formed(&dup).rules(), vec![1]);

        let foreign = HistoryBuilder::new().push(1, ActionKind::Prim("t2.l := 1".into())).trace();
        assert_eq!(well_formed(&foreign).rules(), vec![2]);
        let own = HistoryBuilder::new().push(1, ActionKind::Prim("t1.l := t1.m".into())).trace();
        assert!(well_formed(&own).is_ok());

        let same_val = HistoryBuilder::new().write(1, "x", 5).write(1, "y", 5).trace();
        assert_eq!(well_formed(&same_val).rules(), vec![3]);
        let init_val = HistoryBuilder::new().write(1, "x", 0).trace();
        assert_eq!(well_formed(&init_val).rules(), vec![3]);

        let prim_in_op = HistoryBuilder::new()
            .begin(1)
            .read_req(1, "x")
            .push(1, ActionKind::Prim("t1.l := 1".into()))
            .ret(1, 0)
            .trace();
        assert_eq!(well_formed(&prim_in_op).rules(), vec![4]);

        let bad_resp = HistoryBuilder::new().txbegin(1).retu(1).trace();
        assert!(well_formed(&bad_resp).rules().contains(&5));

        let dangling_commit = HistoryBuilder::new().committed(1).trace();
        assert!(well_formed(&dangling_commit).rules().contains(&6));

        let split_access = HistoryBuilder::new().read_req(1, "x").fence(2).ret(1, 0).trace();
        assert_eq!(well_formed(&split_access).rules(), vec![7]);
        let trailing = HistoryBuilder::new().read_req(1, "x").trace();
        assert_eq!(well_formed(&trailing).rules(), vec![7]);

        let nt_abort = HistoryBuilder::new().read_req(1, "x").aborted(1).trace();
        assert!(well_formed(&nt_abort).rules().contains(&8));

        let fence_in_txn = HistoryBuilder::new().begin(1).fence(1).trace();
        assert!(well_formed(&fence_in_txn).rules().contains(&9));
    }

    #[test]
    fn pending_txn_request_at_end_is_fine() {
        let t = HistoryBuilder::new().begin(1).write_req(1, "x", 1).trace();
        assert!(well_formed(&t).is_ok());
    }
}
