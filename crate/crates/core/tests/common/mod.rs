#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmcheck::atomic::atomic_member;
use stmcheck::history::{classify, well_formed, Action, ActionKind, History, RegisterId, TxnStatus, Value};
use stmcheck::opacity::{build_graph, OpacityGraph, VisAssignment, WwOrder};
use stmcheck::relations::happens_before;

const REGS: [&str; 2] = ["x", "y"];

/// Read responses get their values once the interleaving is fixed.
const UNRESOLVED: Value = -1;

fn thread_actions(rng: &mut ChaCha8Rng, next_val: &mut Value) -> Vec<ActionKind> {
    let mut out = Vec::new();
    let mut fresh = || {
        *next_val += 1;
        *next_val
    };
    for _ in 0..rng.gen_range(1..=3) {
        let reg = RegisterId::new(REGS.choose(rng).unwrap());
        match rng.gen_range(0..10) {
            0..=4 => {
                out.extend([ActionKind::TxBegin, ActionKind::Ok]);
                let ops = rng.gen_range(1..=2);
                let abort_at = (rng.gen_range(0..10) == 0).then(|| rng.gen_range(0..ops));
                for k in 0..ops {
                    let r = RegisterId::new(REGS.choose(rng).unwrap());
                    if rng.gen_bool(0.5) {
                        out.push(ActionKind::Write { reg: r, val: fresh() });
                        out.push(if abort_at == Some(k) { ActionKind::Aborted } else { ActionKind::RetUnit });
                    } else {
                        out.push(ActionKind::Read { reg: r });
                        out.push(if abort_at == Some(k) { ActionKind::Aborted } else { ActionKind::Ret { val: UNRESOLVED } });
                    }
                    if abort_at == Some(k) {
                        break;
                    }
                }
                if abort_at.is_some() {
                    continue;
                }
                match rng.gen_range(0..20) {
                    0..=11 => out.extend([ActionKind::TxCommit, ActionKind::Committed]),
                    12..=14 => out.extend([ActionKind::TxCommit, ActionKind::Aborted]),
                    15..=17 => {
                        out.push(ActionKind::TxCommit);
                        return out;
                    }
                    _ => return out,
                }
            }
            5 | 6 => out.extend([ActionKind::Read { reg }, ActionKind::Ret { val: UNRESOLVED }]),
            7 | 8 => out.extend([ActionKind::Write { reg, val: fresh() }, ActionKind::RetUnit]),
            _ => out.extend([ActionKind::FBegin, ActionKind::FEnd]),
        }
    }
    out
}

/// A random interleaving of random thread programs, cut at `max_actions`.
/// Reads return the latest earlier write to their register about a third of
/// the time and otherwise some other value written to it or the initial one, so both consistent and inconsistent
/// histories come out. `None` when the result is not well-formed.
pub fn random_history(seed: u64, max_actions: usize) -> Option<History> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_val = 0;
    let threads = rng.gen_range(2..=3);
    let mut programs: Vec<std::collections::VecDeque<ActionKind>> =
        (0..threads).map(|_| thread_actions(&mut rng, &mut next_val).into()).collect();
    let limit = rng.gen_range(max_actions.min(6)..=max_actions);
    let mut actions: Vec<Action> = Vec::new();
    while actions.len() < limit {
        let live: Vec<usize> = (0..threads).filter(|&t| !programs[t].is_empty()).collect();
        let Some(&t) = live.choose(&mut rng) else { break };
        let kind = programs[t].pop_front().unwrap();
        actions.push(Action::new(actions.len() as u64, t as u32 + 1, kind));
    }
    let mut written: BTreeMap<RegisterId, Vec<Value>> = BTreeMap::new();
    for a in &actions {
        if let ActionKind::Write { reg, val } = &a.kind {
            written.entry(reg.clone()).or_default().push(*val);
        }
    }
    for j in 0..actions.len() {
        if actions[j].kind != (ActionKind::Ret { val: UNRESOLVED }) {
            continue;
        }
        let reg = (0..j)
            .rev()
            .find_map(|i| match &actions[i].kind {
                ActionKind::Read { reg } if actions[i].thread == actions[j].thread => Some(reg.clone()),
                _ => None,
            })
            .unwrap();
        let latest = actions[..j].iter().rev().find_map(|a| match &a.kind {
            ActionKind::Write { reg: r, val } if *r == reg => Some(*val),
            _ => None,
        });
        let val = if rng.gen_bool(0.35) {
            latest.unwrap_or(0)
        } else {
            let mut pool = vec![0];
            pool.extend(written.get(&reg).into_iter().flatten());
            let stale: Vec<Value> = pool.iter().copied().filter(|&v| Some(v) != latest).collect();
            *stale.choose(&mut rng).unwrap_or(&0)
        };
        actions[j].kind = ActionKind::Ret { val };
    }
    let h = History::new(actions).ok()?;
    well_formed(&h.to_trace()).is_ok().then_some(h)
}

pub fn has_fence(h: &History) -> bool {
    h.actions().iter().any(|a| a.kind == ActionKind::FBegin)
}

/// Brute force: some order of the actions that keeps every hb pair and the
/// per-thread order is a well-formed member of the atomic TM.
pub fn oracle_strongly_opaque(h: &History) -> bool {
    let n = h.len();
    assert!(n <= 16, "oracle is for small histories");
    let mut preds = vec![0u32; n];
    for (i, j) in happens_before(h).unwrap().pairs() {
        preds[j] |= 1 << i;
    }
    let acts = h.actions();
    for j in 0..n {
        for i in 0..j {
            if acts[i].thread == acts[j].thread {
                preds[j] |= 1 << i;
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    extend(h, &preds, 0, &mut order)
}

fn extend(h: &History, preds: &[u32], placed: u32, order: &mut Vec<usize>) -> bool {
    let n = h.len();
    if order.len() == n {
        let s = History::new(order.iter().map(|&i| h.actions()[i].clone()).collect()).unwrap();
        return well_formed(&s.to_trace()).is_ok() && atomic_member(&s);
    }
    for i in 0..n {
        if placed & (1 << i) == 0 && preds[i] & !placed == 0 {
            order.push(i);
            if extend(h, preds, placed | (1 << i), order) {
                return true;
            }
            order.pop();
        }
    }
    false
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(k);
        for mut p in permutations(&rest) {
            p.insert(0, first);
            out.push(p);
        }
    }
    out
}

/// Every opacity graph of the history over all visibility choices and write
/// orders, up to `cap` graphs. Candidates the builder rejects are skipped.
pub fn all_graphs(h: &History, cap: usize) -> Vec<OpacityGraph> {
    let c = classify(h).unwrap();
    let acts = h.actions();
    // (key, status or None for non-transactional, registers written)
    let mut nodes: Vec<(usize, Option<TxnStatus>, Vec<RegisterId>)> = Vec::new();
    for t in &c.txns {
        let regs = t
            .action_indices
            .iter()
            .filter_map(|&i| match &acts[i].kind {
                ActionKind::Write { reg, .. } => Some(reg.clone()),
                _ => None,
            })
            .collect();
        nodes.push((t.begin_index(), Some(t.status), regs));
    }
    for a in &c.nontxn {
        let regs = if a.is_write { vec![a.reg.clone()] } else { Vec::new() };
        nodes.push((a.request_index, None, regs));
    }
    let free: Vec<usize> =
        nodes.iter().filter(|n| n.1 == Some(TxnStatus::CommitPending)).map(|n| n.0).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << free.len()) {
        let vis: VisAssignment = free.iter().enumerate().map(|(b, &k)| (k, mask & (1 << b) != 0)).collect();
        let visible = |n: &(usize, Option<TxnStatus>, Vec<RegisterId>)| match n.1 {
            None | Some(TxnStatus::Committed) => true,
            Some(TxnStatus::CommitPending) => vis[&n.0],
            _ => false,
        };
        let mut per_reg: BTreeMap<RegisterId, Vec<usize>> = BTreeMap::new();
        for n in nodes.iter().filter(|n| visible(n)) {
            let mut regs = n.2.clone();
            regs.sort();
            regs.dedup();
            for r in regs {
                per_reg.entry(r).or_default().push(n.0);
            }
        }
        let mut orders: Vec<WwOrder> = vec![WwOrder::new()];
        for (r, writers) in &per_reg {
            let perms = permutations(writers);
            orders = orders
                .into_iter()
                .flat_map(|o| {
                    perms.iter().map(move |p| {
                        let mut o = o.clone();
                        o.insert(r.clone(), p.clone());
                        o
                    })
                })
                .collect();
        }
        for ww in orders {
            if let Ok(g) = build_graph(h, &vis, &ww) {
                out.push(g);
                if out.len() >= cap {
                    return out;
                }
            }
        }
    }
    out
}
