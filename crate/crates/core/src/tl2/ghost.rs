use std::collections::{BTreeMap, HashMap};

use super::{TxnDesc, TxnHandle};
use crate::history::{Action, ActionIndex, ActionKind, RegisterId, ThreadId, Value, V_INIT};
use crate::opacity::EdgeSet;
use crate::relations::{ConflictPair, Race};

/// Growable bitset over action indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct Bits(Vec<u64>);

impl Bits {
    fn insert(&mut self, i: usize) {
        let w = i / 64;
        if self.0.len() <= w {
            self.0.resize(w + 1, 0);
        }
        self.0[w] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    fn union_with(&mut self, other: &Bits) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), 0);
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(w, &bits)| (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| w * 64 + b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GhostNode {
    /// Index of the node's first action.
    pub key: ActionIndex,
    pub thread: ThreadId,
    /// Present for transactions.
    pub txn: Option<TxnHandle>,
    pub vis: bool,
    /// Last write per register.
    pub writes: BTreeMap<RegisterId, Value>,
    /// Non-local reads in order.
    pub reads: Vec<(RegisterId, Value)>,
    /// Completion response index and whether it was a commit.
    pub completion: Option<(ActionIndex, bool)>,
    /// Post-validation flags, set during commit.
    pub pv: BTreeMap<RegisterId, bool>,
    /// The descriptor as it was when the transaction finished.
    pub archived: Option<TxnDesc>,
    /// Last action of the thread before this node began.
    before: Option<ActionIndex>,
}

impl GhostNode {
    pub fn is_txn(&self) -> bool {
        self.txn.is_some()
    }

    pub fn is_completed(&self) -> bool {
        self.completion.is_some()
    }

    pub fn reads_reg(&self, x: &RegisterId) -> bool {
        self.reads.iter().any(|(r, _)| r == x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Access {
    index: ActionIndex,
    thread: ThreadId,
    is_write: bool,
    in_txn: bool,
}

/// Opacity graph built step by step alongside the execution, with the
/// happens-before and race bookkeeping it needs.
#[derive(Debug, Clone, Default)]
pub struct Ghost {
    preds: Vec<Bits>,
    owner: Vec<Option<usize>>,
    last_of_thread: HashMap<ThreadId, ActionIndex>,
    last_nontxn: Option<ActionIndex>,
    fbegins: Vec<ActionIndex>,
    completions: Vec<ActionIndex>,
    writers: HashMap<(RegisterId, Value), Vec<ActionIndex>>,
    accesses: HashMap<RegisterId, Vec<Access>>,
    current: HashMap<ThreadId, usize>,
    pending_request: HashMap<ThreadId, ActionIndex>,
    kinds: Vec<ActionKind>,
    pub nodes: Vec<GhostNode>,
    pub hb: EdgeSet,
    pub wr: BTreeMap<RegisterId, EdgeSet>,
    /// Visible writers per register in the order they became visible.
    pub ww: BTreeMap<RegisterId, Vec<usize>>,
    pub rw: BTreeMap<RegisterId, EdgeSet>,
    pub races: Vec<Race>,
}

impl Ghost {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_racy(&self) -> bool {
        !self.races.is_empty()
    }

    /// hb between two recorded actions.
    pub fn happens_before(&self, i: ActionIndex, j: ActionIndex) -> bool {
        self.preds.get(j).is_some_and(|p| p.contains(i))
    }

    pub fn node_of_handle(&self, h: TxnHandle) -> Option<usize> {
        self.nodes.iter().rposition(|n| n.txn == Some(h))
    }

    pub fn ww_edges(&self) -> BTreeMap<RegisterId, EdgeSet> {
        self.ww
            .iter()
            .map(|(x, order)| {
                let mut e = EdgeSet::new();
                for (i, &a) in order.iter().enumerate() {
                    e.extend(order[i + 1..].iter().map(|&b| (a, b)));
                }
                (x.clone(), e)
            })
            .collect()
    }

    /// Bookkeeping for one appended history action. `txn` is the open
    /// transaction of the acting thread, if any.
    pub(crate) fn on_action(&mut self, index: ActionIndex, action: &Action, txn: Option<TxnHandle>) {
        debug_assert_eq!(index, self.preds.len());
        let t = action.thread;
        let fence = action.kind.is_fence();
        let in_txn = txn.is_some() && !fence;

        let node = if fence {
            None
        } else if action.kind == ActionKind::TxBegin {
            let k = self.new_node(index, t, txn, false);
            self.current.insert(t, k);
            Some(k)
        } else if in_txn {
            self.current.get(&t).copied()
        } else if action.kind.is_request() {
            Some(self.new_node(index, t, None, true))
        } else {
            self.current.get(&t).copied()
        };
        if !in_txn && !fence && action.kind.is_request() {
            self.current.insert(t, node.expect("non-transactional request opens a node"));
        }

        let mut direct: Vec<ActionIndex> = Vec::new();
        direct.extend(self.last_of_thread.get(&t));
        if !in_txn && !fence {
            direct.extend(self.last_nontxn);
        }
        match &action.kind {
            ActionKind::TxBegin => direct.extend(&self.fbegins),
            ActionKind::FEnd => direct.extend(&self.completions),
            ActionKind::Ret { val } if in_txn => {
                if let Some(&req) = self.pending_request.get(&t) {
                    if let Some(reg) = self.request_reg(req) {
                        for &w in self.writers.get(&(reg, *val)).into_iter().flatten() {
                            if let Some(n) = self.owner[w].filter(|&n| self.nodes[n].is_txn()) {
                                direct.extend(self.nodes[n].before);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        let mut preds = Bits::default();
        for d in direct {
            preds.union_with(&self.preds[d]);
            preds.insert(d);
        }
        if let Some(m) = node {
            for i in preds.iter() {
                if let Some(n) = self.owner[i] {
                    if n != m {
                        self.hb.insert((n, m));
                    }
                }
            }
        }

        if let ActionKind::Read { reg } | ActionKind::Write { reg, .. } = &action.kind {
            let is_write = matches!(action.kind, ActionKind::Write { .. });
            let earlier = self.accesses.entry(reg.clone()).or_default();
            for a in earlier.iter() {
                if a.thread != t && (a.is_write || is_write) && a.in_txn != in_txn && !preds.contains(a.index) {
                    let (nontxn_index, txn_index) = if in_txn { (a.index, index) } else { (index, a.index) };
                    self.races.push(Race {
                        conflict: ConflictPair { nontxn_index, txn_index, reg: reg.clone() },
                        nontxn_first: nontxn_index < txn_index,
                    });
                }
            }
            earlier.push(Access { index, thread: t, is_write, in_txn });
        }

        self.preds.push(preds);
        self.owner.push(node);
        self.last_of_thread.insert(t, index);
        if !in_txn && !fence {
            self.last_nontxn = Some(index);
        }
        match &action.kind {
            ActionKind::FBegin => self.fbegins.push(index),
            ActionKind::Committed | ActionKind::Aborted => {
                self.completions.push(index);
                if let Some(n) = node {
                    self.nodes[n].completion = Some((index, action.kind == ActionKind::Committed));
                }
            }
            ActionKind::Write { reg, val } => {
                self.writers.entry((reg.clone(), *val)).or_default().push(index);
                if let Some(n) = node {
                    self.nodes[n].writes.insert(reg.clone(), *val);
                }
            }
            _ => {}
        }
        if action.kind.is_request() {
            self.pending_request.insert(t, index);
        }
        self.kinds.push(action.kind.clone());
    }

    fn request_reg(&self, req: ActionIndex) -> Option<RegisterId> {
        match &self.kinds[req] {
            ActionKind::Read { reg } => Some(reg.clone()),
            _ => None,
        }
    }

    fn new_node(&mut self, key: ActionIndex, thread: ThreadId, txn: Option<TxnHandle>, vis: bool) -> usize {
        self.nodes.push(GhostNode {
            key,
            thread,
            txn,
            vis,
            writes: BTreeMap::new(),
            reads: Vec::new(),
            completion: None,
            pv: BTreeMap::new(),
            archived: None,
            before: self.last_of_thread.get(&thread).copied(),
        });
        self.nodes.len() - 1
    }

    fn writers_of(&self, x: &RegisterId, v: Option<Value>, except: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&n| n != except)
            .filter(|&n| match v {
                Some(v) => self.nodes[n].writes.get(x) == Some(&v),
                None => self.nodes[n].vis && self.nodes[n].writes.contains_key(x),
            })
            .collect()
    }

    fn readers_of(&self, x: &RegisterId, except: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| n != except && self.nodes[n].reads_reg(x)).collect()
    }

    fn reader_edges(&mut self, node: usize, x: &RegisterId, v: Value) {
        if v == V_INIT {
            for n in self.writers_of(x, None, node) {
                self.rw.entry(x.clone()).or_default().insert((node, n));
            }
        } else {
            for n in self.writers_of(x, Some(v), node) {
                self.wr.entry(x.clone()).or_default().insert((n, node));
                let later: Vec<usize> = match self.ww.get(x) {
                    Some(order) => order.iter().skip_while(|&&w| w != n).skip(1).copied().collect(),
                    None => Vec::new(),
                };
                for m in later.into_iter().filter(|&m| m != node) {
                    self.rw.entry(x.clone()).or_default().insert((node, m));
                }
            }
        }
    }

    fn writer_edges(&mut self, node: usize, x: &RegisterId) {
        for n in self.readers_of(x, node) {
            self.rw.entry(x.clone()).or_default().insert((n, node));
        }
        self.ww.entry(x.clone()).or_default().push(node);
    }

    /// A transaction returned a value read from memory.
    pub(crate) fn txread(&mut self, thread: ThreadId, x: &RegisterId, v: Value) {
        let node = self.current[&thread];
        self.nodes[node].reads.push((x.clone(), v));
        self.reader_edges(node, x, v);
    }

    /// The transaction's writes become visible.
    pub(crate) fn txvis(&mut self, thread: ThreadId) {
        let node = self.current[&thread];
        self.nodes[node].vis = true;
        let regs: Vec<RegisterId> = self.nodes[node].writes.keys().cloned().collect();
        for x in regs {
            self.writer_edges(node, &x);
        }
    }

    pub(crate) fn set_pv(&mut self, thread: ThreadId, x: &RegisterId, ok: bool) {
        let node = self.current[&thread];
        self.nodes[node].pv.insert(x.clone(), ok);
    }

    pub(crate) fn archive(&mut self, thread: ThreadId, desc: TxnDesc) {
        let node = self.current[&thread];
        self.nodes[node].archived = Some(desc);
    }

    pub(crate) fn ntxread(&mut self, thread: ThreadId, x: &RegisterId, v: Value) {
        let node = self.current[&thread];
        self.nodes[node].reads.push((x.clone(), v));
        if v != V_INIT {
            for n in self.writers_of(x, Some(v), node) {
                self.wr.entry(x.clone()).or_default().insert((n, node));
            }
        }
    }

    pub(crate) fn ntxwrite(&mut self, thread: ThreadId, x: &RegisterId) {
        let node = self.current[&thread];
        self.writer_edges(node, x);
    }
}
