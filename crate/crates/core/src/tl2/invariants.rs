use std::collections::BTreeSet;

use serde::Serialize;

use super::{GhostNode, Tl2Machine, TxnDesc};
use crate::history::{classify, well_formed, RegisterId, V_INIT};
use crate::opacity::find_cycle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvariantViolation {
    /// Clause name such as "INV.5(c)" or "WF".
    pub clause: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub violations: Vec<InvariantViolation>,
    /// Whether the history so far is data-race free. Not a violation: the
    /// remaining clauses are only meaningful when it holds.
    pub drf: bool,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn clauses(&self) -> BTreeSet<&str> {
        self.violations.iter().map(|v| v.clause.as_str()).collect()
    }

    fn fail(&mut self, clause: &str, detail: String) {
        self.violations.push(InvariantViolation { clause: clause.to_string(), detail });
    }
}

/// Read timestamp with ⊥ below every integer.
fn rver(d: Option<&TxnDesc>) -> i128 {
    d.and_then(|d| d.rver).map_or(-1, i128::from)
}

/// Write timestamp with ⊤ above every integer.
fn wver(d: Option<&TxnDesc>) -> i128 {
    d.and_then(|d| d.wver).map_or(i128::MAX, i128::from)
}

fn show(ts: i128) -> String {
    match ts {
        -1 => "⊥".into(),
        i128::MAX => "⊤".into(),
        v => v.to_string(),
    }
}

fn descriptor<'a>(m: &'a Tl2Machine, n: &'a GhostNode) -> Option<&'a TxnDesc> {
    n.txn.and_then(|h| m.live_txn(h).or(n.archived.as_ref()))
}

/// Checks every invariant clause against the machine's current state,
/// history and ghost graph. Without ghost state only the history clauses run.
pub fn check_invariants(m: &Tl2Machine) -> InvariantReport {
    let mut r = InvariantReport { drf: true, ..Default::default() };
    let wf = well_formed(&m.trace());
    for v in &wf.violations {
        r.fail("WF", format!("rule {} at {}: {}", v.rule, v.index, v.message));
    }
    let Some(g) = m.ghost() else { return r };
    r.drf = !g.is_racy();

    let history = m.history();
    match classify(&history) {
        Ok(c) => {
            if let Some(i) = crate::opacity::consistency_violation(&history, &c) {
                r.fail("INV.2(a)", format!("read at {i} has no admissible source"));
            }
        }
        Err(e) => r.fail("WF", e.to_string()),
    }

    let nodes = &g.nodes;
    let name = |k: usize| format!("node@{}", nodes[k].key);
    let txns: Vec<usize> = (0..nodes.len()).filter(|&k| nodes[k].is_txn()).collect();

    // INV.2(b)
    for &k in &txns {
        if let Some(d) = descriptor(m, &nodes[k]) {
            if d.wset != nodes[k].writes {
                r.fail("INV.2(b)", format!("{} write set {:?} differs from its writes {:?}", name(k), d.wset, nodes[k].writes));
            }
        }
    }

    let ww = g.ww_edges();
    let mut dep: BTreeSet<(usize, usize, &RegisterId, char)> = BTreeSet::new();
    for (x, e) in &g.wr {
        dep.extend(e.iter().map(|&(a, b)| (a, b, x, 'r')));
    }
    for (x, e) in &ww {
        dep.extend(e.iter().map(|&(a, b)| (a, b, x, 'w')));
    }
    for (x, e) in &g.rw {
        dep.extend(e.iter().map(|&(a, b)| (a, b, x, 'a')));
    }

    // INV.3
    for &(a, b) in &g.hb {
        if let Some(&(_, _, x, _)) = dep.iter().find(|&&(p, q, _, _)| p == b && q == a) {
            r.fail("INV.3", format!("{} HB {} and back by a dependency on {x}", name(a), name(b)));
        }
    }

    // INV.4
    let rt: Vec<(usize, usize)> = txns
        .iter()
        .flat_map(|&a| txns.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| nodes[a].completion.is_some_and(|(c, _)| c < nodes[b].key))
        .collect();
    let mut tx_edges = rt.clone();
    tx_edges.extend(dep.iter().filter(|d| nodes[d.0].is_txn() && nodes[d.1].is_txn()).map(|d| (d.0, d.1)));
    if let Some(cycle) = find_cycle(nodes.len(), &tx_edges) {
        r.fail("INV.4", format!("transaction cycle {:?}", cycle.iter().map(|&k| nodes[k].key).collect::<Vec<_>>()));
    }

    // INV.5
    for &(a, b) in &rt {
        let (da, db) = (descriptor(m, &nodes[a]), descriptor(m, &nodes[b]));
        let ok = rver(db) == -1
            || if nodes[a].vis { wver(da) <= rver(db) } else { rver(da) <= rver(db) };
        if !ok {
            r.fail("INV.5(a)", format!("{} RT {} but timestamps out of order", name(a), name(b)));
        }
    }
    for &(a, b, x, kind) in &dep {
        if !(nodes[a].is_txn() && nodes[b].is_txn()) {
            continue;
        }
        let (da, db) = (descriptor(m, &nodes[a]), descriptor(m, &nodes[b]));
        let (clause, ok, lhs, rhs) = match kind {
            'r' => ("INV.5(b)", wver(da) <= rver(db), wver(da), rver(db)),
            'w' => ("INV.5(c)", wver(da) < wver(db), wver(da), wver(db)),
            _ => ("INV.5(d)", rver(da) < wver(db), rver(da), wver(db)),
        };
        if !ok {
            r.fail(clause, format!("{} -> {} on {x}: {} vs {}", name(a), name(b), show(lhs), show(rhs)));
        }
        if kind == 'a' && nodes[a].pv.get(x) == Some(&true) && wver(da) >= wver(db) {
            r.fail("INV.5(e)", format!("{} RW {} on {x} after post-validation", name(a), name(b)));
        }
    }

    // INV.6 and INV.8(e)
    for (x, cell) in &m.core().cells {
        let Some(h) = cell.lock else { continue };
        let Some(owner) = g.node_of_handle(h) else {
            r.fail("INV.8(e)", format!("{x} locked by unknown {h}"));
            continue;
        };
        let dl = descriptor(m, &nodes[owner]);
        let overwritten = g.ww.get(x).is_some_and(|o| o.iter().position(|&n| n == owner).is_some_and(|p| p + 1 < o.len()));
        if nodes[owner].is_completed() || !nodes[owner].writes.contains_key(x) || overwritten {
            r.fail("INV.8(e)", format!("{x} locked by {h} which is completed, not writing it, or overwritten"));
        }
        for &k in txns.iter().filter(|&&k| k != owner) {
            let d = descriptor(m, &nodes[k]);
            if nodes[k].vis && nodes[k].writes.contains_key(x) && wver(d) >= wver(dl) {
                r.fail("INV.6(a)", format!("{} writes {x} visibly but {} holds its lock", name(k), h));
            }
            if nodes[k].reads_reg(x) && rver(d) >= wver(dl) {
                r.fail("INV.6(b)", format!("{} read {x} but {} holds its lock", name(k), h));
            }
            if nodes[k].pv.get(x) == Some(&true) && wver(d) >= wver(dl) {
                r.fail("INV.6(c)", format!("{} validated {x} but {} holds its lock", name(k), h));
            }
        }
    }

    // INV.7
    let clock = i128::from(m.clock());
    for &k in &txns {
        let d = descriptor(m, &nodes[k]);
        let (rv, wv) = (rver(d), wver(d));
        if rv >= wv {
            r.fail("INV.7(a)", format!("{}: rver {} >= wver {}", name(k), show(rv), show(wv)));
        }
        if rv > clock || (wv != i128::MAX && wv > clock) {
            r.fail("INV.7(b)", format!("{}: timestamps {}/{} exceed clock {clock}", name(k), show(rv), show(wv)));
        }
        if wv != i128::MAX && rv == -1 {
            r.fail("INV.7(c)", format!("{}: wver set without rver", name(k)));
        }
        if !nodes[k].reads.is_empty() && rv == -1 {
            r.fail("INV.7(d)", format!("{}: reads without rver", name(k)));
        }
        if (nodes[k].pv.values().any(|&p| p) || nodes[k].vis) && wv == i128::MAX {
            r.fail("INV.7(e)", format!("{}: visible or validated without wver", name(k)));
        }
    }

    // INV.8(a,b)
    let regs: BTreeSet<&RegisterId> = m.core().cells.keys().chain(g.ww.keys()).collect();
    for x in regs {
        let cell = m.cell(x);
        if cell.lock.is_some() {
            continue;
        }
        let order = g.ww.get(x).map(Vec::as_slice).unwrap_or(&[]);
        let ok_a = match order.last() {
            None => cell.reg == V_INIT,
            Some(&n) => cell.reg != V_INIT && nodes[n].writes.get(x) == Some(&cell.reg),
        };
        if !ok_a {
            r.fail("INV.8(a)", format!("{x} holds {} but its last visible writer disagrees", cell.reg));
        }
        let last_txn = order.iter().rev().find(|&&n| nodes[n].is_txn());
        let ok_b = match last_txn {
            None => cell.ver == 0,
            Some(&n) => cell.ver != 0 && wver(descriptor(m, &nodes[n])) == i128::from(cell.ver),
        };
        if !ok_b {
            r.fail("INV.8(b)", format!("{x} has version {} but its last transactional writer disagrees", cell.ver));
        }
    }

    // INV.8(c,d)
    for &k in &txns {
        if nodes[k].vis {
            for (x, _) in &nodes[k].reads {
                if nodes[k].pv.get(x) != Some(&true) {
                    r.fail("INV.8(c)", format!("{} visible with {x} not post-validated", name(k)));
                }
            }
        }
        if !nodes[k].is_completed() {
            if let Some(&(_, b)) = g.hb.iter().find(|&&(a, _)| a == k) {
                r.fail("INV.8(d)", format!("HB edge from incomplete {} to {}", name(k), name(b)));
            }
        }
    }
    r
}
