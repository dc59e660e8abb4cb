use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::OpacityError;
use crate::history::{
    ActionIndex, ActionKind, Classification, History, Membership, NonTxnAccess, RegisterId, TransactionView,
    TxnStatus, Value, V_INIT,
};
use crate::relations::Relation;

/// Edges between node indices of one graph.
pub type EdgeSet = BTreeSet<(usize, usize)>;

/// Nodes are identified across graphs of the same history by the index of
/// their first action.
pub type NodeKey = ActionIndex;

/// Visibility per node key; only commit-pending transactions are free.
pub type VisAssignment = BTreeMap<NodeKey, bool>;

/// Per register, the visible writers in write-dependency order.
pub type WwOrder = BTreeMap<RegisterId, Vec<NodeKey>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphNode {
    Txn(TransactionView),
    NonTxn(NonTxnAccess),
    /// A single fbegin or fend action; only present in fenced graphs.
    Fence(ActionIndex),
}

impl GraphNode {
    pub fn key(&self) -> NodeKey {
        match self {
            GraphNode::Txn(t) => t.begin_index(),
            GraphNode::NonTxn(n) => n.request_index,
            GraphNode::Fence(i) => *i,
        }
    }

    pub fn actions(&self) -> Vec<ActionIndex> {
        match self {
            GraphNode::Txn(t) => t.action_indices.clone(),
            GraphNode::NonTxn(n) => n.indices(),
            GraphNode::Fence(i) => vec![*i],
        }
    }

    pub fn is_txn(&self) -> bool {
        matches!(self, GraphNode::Txn(_))
    }

    /// The visibility forced on this node by its status, or `None` when it is free.
    pub fn forced_vis(&self) -> Option<bool> {
        match self {
            GraphNode::Txn(t) => match t.status {
                TxnStatus::Committed => Some(true),
                TxnStatus::Aborted | TxnStatus::Live => Some(false),
                TxnStatus::CommitPending => None,
            },
            GraphNode::NonTxn(_) | GraphNode::Fence(_) => Some(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpacityGraph {
    pub nodes: Vec<GraphNode>,
    pub vis: Vec<bool>,
    pub hb: EdgeSet,
    pub wr: BTreeMap<RegisterId, EdgeSet>,
    pub ww: BTreeMap<RegisterId, Vec<usize>>,
    pub rw: BTreeMap<RegisterId, EdgeSet>,
}

/// Which relation an edge of a cycle came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EdgeLabel {
    Hb,
    Wr,
    Ww,
    Rw,
    Rt,
}

impl OpacityGraph {
    pub fn node_of_key(&self, key: NodeKey) -> Option<usize> {
        self.nodes.iter().position(|n| n.key() == key)
    }

    pub fn ww_edges(&self) -> BTreeMap<RegisterId, EdgeSet> {
        self.ww
            .iter()
            .map(|(x, order)| {
                let mut e = EdgeSet::new();
                for (i, &a) in order.iter().enumerate() {
                    for &b in &order[i + 1..] {
                        e.insert((a, b));
                    }
                }
                (x.clone(), e)
            })
            .collect()
    }

    /// WR ∪ WW ∪ RW, labelled.
    pub fn dep_edges(&self) -> Vec<(usize, usize, EdgeLabel)> {
        let mut out = Vec::new();
        for e in self.wr.values() {
            out.extend(e.iter().map(|&(a, b)| (a, b, EdgeLabel::Wr)));
        }
        for e in self.ww_edges().values() {
            out.extend(e.iter().map(|&(a, b)| (a, b, EdgeLabel::Ww)));
        }
        for e in self.rw.values() {
            out.extend(e.iter().map(|&(a, b)| (a, b, EdgeLabel::Rw)));
        }
        out
    }

    pub fn all_edges(&self) -> Vec<(usize, usize, EdgeLabel)> {
        let mut out: Vec<_> = self.hb.iter().map(|&(a, b)| (a, b, EdgeLabel::Hb)).collect();
        out.extend(self.dep_edges());
        out
    }

    /// One cycle over the union of all edges, as a node-index sequence.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        let edges: Vec<(usize, usize)> = self.all_edges().into_iter().map(|(a, b, _)| (a, b)).collect();
        find_cycle(self.nodes.len(), &edges)
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }

    pub fn keys(&self) -> Vec<NodeKey> {
        self.nodes.iter().map(|n| n.key()).collect()
    }
}

pub fn is_acyclic(graph: &OpacityGraph) -> bool {
    graph.is_acyclic()
}

/// Iterative three-colour DFS. Returns the nodes of one cycle in edge order.
pub fn find_cycle(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    for succ in &mut adj {
        succ.sort();
        succ.dedup();
    }
    let mut color = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                    1 => {
                        let mut cycle = vec![v];
                        let mut u = v;
                        while u != w {
                            u = parent[u];
                            cycle.push(u);
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Per-node access summary used to derive WR/RW and the invariants.
#[derive(Debug, Clone, Default)]
pub(crate) struct NodeAccess {
    /// Every write action of the node, in order.
    pub writes: Vec<(RegisterId, Value)>,
    /// Every non-local read of the node: (register, value returned).
    pub reads: Vec<(RegisterId, Value)>,
}

impl NodeAccess {
    pub fn writes_reg(&self, x: &RegisterId) -> bool {
        self.writes.iter().any(|(r, _)| r == x)
    }
}

pub(crate) fn node_list(c: &Classification) -> Vec<GraphNode> {
    let mut nodes: Vec<GraphNode> = c.txns.iter().cloned().map(GraphNode::Txn).collect();
    nodes.extend(c.nontxn.iter().cloned().map(GraphNode::NonTxn));
    nodes.sort_by_key(|n| n.key());
    nodes
}

pub(crate) fn node_accesses(history: &History, c: &Classification, nodes: &[GraphNode]) -> Vec<NodeAccess> {
    let acts = history.actions();
    nodes
        .iter()
        .map(|n| {
            let mut acc = NodeAccess::default();
            for i in n.actions() {
                match &acts[i].kind {
                    ActionKind::Write { reg, val } => acc.writes.push((reg.clone(), *val)),
                    ActionKind::Ret { val } => {
                        if let Some(req) = c.request_of(i) {
                            // local reads take their value from the node itself
                            if let ActionKind::Read { reg } = &acts[req].kind {
                                if !acc.writes_reg(reg) {
                                    acc.reads.push((reg.clone(), *val));
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            acc
        })
        .collect()
}

/// Maps every action index to the node holding it.
pub(crate) fn action_owner(history: &History, nodes: &[GraphNode]) -> Vec<Option<usize>> {
    let mut owner = vec![None; history.len()];
    for (k, n) in nodes.iter().enumerate() {
        for i in n.actions() {
            owner[i] = Some(k);
        }
    }
    owner
}

pub(crate) fn lift(rel: &Relation, owner: &[Option<usize>]) -> EdgeSet {
    rel.pairs()
        .into_iter()
        .filter_map(|(i, j)| match (owner[i], owner[j]) {
            (Some(a), Some(b)) if a != b => Some((a, b)),
            _ => None,
        })
        .collect()
}

pub(crate) fn wr_edges(accesses: &[NodeAccess]) -> BTreeMap<RegisterId, EdgeSet> {
    let mut writer: BTreeMap<(&RegisterId, Value), Vec<usize>> = BTreeMap::new();
    for (k, a) in accesses.iter().enumerate() {
        for (x, v) in &a.writes {
            writer.entry((x, *v)).or_default().push(k);
        }
    }
    let mut wr: BTreeMap<RegisterId, EdgeSet> = BTreeMap::new();
    for (k, a) in accesses.iter().enumerate() {
        for (x, v) in &a.reads {
            for &w in writer.get(&(x, *v)).into_iter().flatten() {
                if w != k {
                    wr.entry(x.clone()).or_default().insert((w, k));
                }
            }
        }
    }
    wr
}

pub(crate) fn rw_edges(
    accesses: &[NodeAccess],
    wr: &BTreeMap<RegisterId, EdgeSet>,
    ww: &BTreeMap<RegisterId, Vec<usize>>,
) -> BTreeMap<RegisterId, EdgeSet> {
    let mut rw: BTreeMap<RegisterId, EdgeSet> = BTreeMap::new();
    for (x, order) in ww {
        let mut e = EdgeSet::new();
        for &(src, reader) in wr.get(x).into_iter().flatten() {
            if let Some(p) = order.iter().position(|&w| w == src) {
                for &later in &order[p + 1..] {
                    if later != reader {
                        e.insert((reader, later));
                    }
                }
            }
        }
        for (reader, a) in accesses.iter().enumerate() {
            if a.reads.iter().any(|(r, v)| r == x && *v == V_INIT) {
                for &w in order {
                    if w != reader {
                        e.insert((reader, w));
                    }
                }
            }
        }
        if !e.is_empty() {
            rw.insert(x.clone(), e);
        }
    }
    rw
}

/// Shared inputs for building many graphs over one history.
pub(crate) struct GraphContext {
    pub nodes: Vec<GraphNode>,
    pub accesses: Vec<NodeAccess>,
    pub hb_nodes: EdgeSet,
    pub wr: BTreeMap<RegisterId, EdgeSet>,
}

impl GraphContext {
    pub fn new(history: &History, c: &Classification, hb: &Relation) -> Self {
        let nodes = node_list(c);
        let accesses = node_accesses(history, c, &nodes);
        let owner = action_owner(history, &nodes);
        let hb_nodes = lift(hb, &owner);
        let wr = wr_edges(&accesses);
        GraphContext { nodes, accesses, hb_nodes, wr }
    }

    pub fn index_of(&self, key: NodeKey) -> Option<usize> {
        self.nodes.iter().position(|n| n.key() == key)
    }

    pub fn build(&self, vis: &VisAssignment, ww: &WwOrder) -> Result<OpacityGraph, OpacityError> {
        let mut vis_vec = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let given = vis.get(&n.key()).copied();
            let v = match (n.forced_vis(), given) {
                (Some(f), Some(g)) if f != g => return Err(OpacityError::VisForced { node: n.key() }),
                (Some(f), _) => f,
                (None, Some(g)) => g,
                (None, None) => return Err(OpacityError::VisMissing { node: n.key() }),
            };
            vis_vec.push(v);
        }
        if let Some(k) = vis.keys().find(|k| self.index_of(**k).is_none()) {
            return Err(OpacityError::VisMissing { node: *k });
        }

        for (x, e) in &self.wr {
            if let Some(&(src, _)) = e.iter().find(|(src, _)| !vis_vec[*src]) {
                return Err(OpacityError::InvisibleSource { reg: x.clone(), node: self.nodes[src].key() });
            }
        }

        let mut ww_idx: BTreeMap<RegisterId, Vec<usize>> = BTreeMap::new();
        let mut regs: BTreeSet<&RegisterId> = BTreeSet::new();
        for (k, a) in self.accesses.iter().enumerate() {
            if vis_vec[k] {
                regs.extend(a.writes.iter().map(|(x, _)| x));
            }
        }
        for x in regs {
            let mut expected: Vec<usize> =
                (0..self.nodes.len()).filter(|&k| vis_vec[k] && self.accesses[k].writes_reg(x)).collect();
            let given = ww.get(x).ok_or_else(|| OpacityError::WwMismatch { reg: x.clone() })?;
            let mut order = Vec::with_capacity(given.len());
            for key in given {
                order.push(self.index_of(*key).ok_or_else(|| OpacityError::WwMismatch { reg: x.clone() })?);
            }
            let mut sorted = order.clone();
            sorted.sort();
            expected.sort();
            if sorted != expected || sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(OpacityError::WwMismatch { reg: x.clone() });
            }
            ww_idx.insert(x.clone(), order);
        }
        if let Some(x) = ww.keys().find(|x| !ww_idx.contains_key(*x) && !ww[*x].is_empty()) {
            return Err(OpacityError::WwMismatch { reg: x.clone() });
        }

        let rw = rw_edges(&self.accesses, &self.wr, &ww_idx);
        Ok(OpacityGraph {
            nodes: self.nodes.clone(),
            vis: vis_vec,
            hb: self.hb_nodes.clone(),
            wr: self.wr.clone(),
            ww: ww_idx,
            rw,
        })
    }
}

/// Builds the opacity graph for a visibility choice and write order.
pub fn build_graph(history: &History, vis: &VisAssignment, ww: &WwOrder) -> Result<OpacityGraph, OpacityError> {
    let c = crate::history::classify(history)?;
    let hb = crate::relations::relations_with(history, &c).happens_before();
    GraphContext::new(history, &c, &hb).build(vis, ww)
}

/// Result of the split acyclicity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecomposedCheck {
    /// No n HB n' with n' (WR ∪ WW ∪ RW) n.
    pub hb_dep_irreflexive: bool,
    /// No cycle among transactions over RT ∪ WR ∪ WW ∪ RW.
    pub txn_cycle_free: bool,
}

impl DecomposedCheck {
    pub fn passes(&self) -> bool {
        self.hb_dep_irreflexive && self.txn_cycle_free
    }

    /// Evaluates both conditions without the race-freedom gate.
    pub fn evaluate(history: &History, graph: &OpacityGraph) -> Result<Self, OpacityError> {
        crate::history::classify(history)?;
        let dep: BTreeSet<(usize, usize)> = graph.dep_edges().into_iter().map(|(a, b, _)| (a, b)).collect();
        let hb_dep_irreflexive = !graph.hb.iter().any(|&(a, b)| dep.contains(&(b, a)));
        let edges: Vec<(usize, usize)> = rt_edges(graph)
            .into_iter()
            .chain(dep.iter().copied())
            .filter(|&(a, b)| graph.nodes[a].is_txn() && graph.nodes[b].is_txn())
            .collect();
        let txn_cycle_free = find_cycle(graph.nodes.len(), &edges).is_none();
        Ok(DecomposedCheck { hb_dep_irreflexive, txn_cycle_free })
    }
}

/// Real-time order lifted to transaction nodes: T ended before T' began.
pub(crate) fn rt_edges(graph: &OpacityGraph) -> EdgeSet {
    let mut e = EdgeSet::new();
    for (a, na) in graph.nodes.iter().enumerate() {
        let GraphNode::Txn(ta) = na else { continue };
        let Some(end) = ta.completion_index() else { continue };
        for (b, nb) in graph.nodes.iter().enumerate() {
            if let GraphNode::Txn(tb) = nb {
                if end < tb.begin_index() {
                    e.insert((a, b));
                }
            }
        }
    }
    e
}

/// The split check, gated on race freedom.
pub fn decomposed_check(history: &History, graph: &OpacityGraph) -> Result<DecomposedCheck, OpacityError> {
    if !crate::relations::is_drf(history)? {
        return Err(OpacityError::NotDrf);
    }
    DecomposedCheck::evaluate(history, graph)
}

/// The graph extended with one node per fence action and every hb-lifted
/// edge touching those nodes.
pub fn fenced_graph(graph: &OpacityGraph, history: &History) -> Result<OpacityGraph, OpacityError> {
    let c = crate::history::classify(history)?;
    let hb = crate::relations::relations_with(history, &c).happens_before();
    Ok(fenced_with(graph, history, &c, &hb))
}

pub(crate) fn fenced_with(graph: &OpacityGraph, history: &History, c: &Classification, hb: &Relation) -> OpacityGraph {
    let mut g = graph.clone();
    let base = g.nodes.len();
    for (i, m) in c.membership.iter().enumerate() {
        if *m == Membership::Fence {
            g.nodes.push(GraphNode::Fence(i));
            g.vis.push(true);
        }
    }
    if g.nodes.len() == base {
        return g;
    }
    let owner = action_owner(history, &g.nodes);
    for (a, b) in lift(hb, &owner) {
        if a >= base || b >= base {
            g.hb.insert((a, b));
        }
    }
    g
}
