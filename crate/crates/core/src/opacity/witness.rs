use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::graph::{fenced_with, find_cycle, GraphNode, OpacityGraph};
use super::OpacityError;
use crate::atomic::{is_non_interleaved, reads_legal, CompletionChoice};
use crate::history::{classify, complete, ActionIndex, CompletionDecision, History, TxnStatus};
use crate::relations::{happens_before, relations_with};

/// A serial history related to the input, with the completion that makes it
/// legal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub serial: History,
    /// Input index to serial index.
    pub theta: Vec<ActionIndex>,
    /// Per commit-pending transaction of `serial`, keyed by its txbegin index there.
    pub completion: CompletionChoice,
}

impl Witness {
    pub fn completed(&self) -> History {
        complete(&self.serial, &self.completion).expect("witness completion covers its pending transactions")
    }

    pub fn theta_pairs(&self) -> Vec<(ActionIndex, ActionIndex)> {
        self.theta.iter().copied().enumerate().collect()
    }
}

/// The bijection matching actions of `h1` to equal actions of `h2` by id.
pub fn bijection(h1: &History, h2: &History) -> Result<Vec<ActionIndex>, OpacityError> {
    if h1.len() != h2.len() {
        return Err(OpacityError::LengthMismatch { left: h1.len(), right: h2.len() });
    }
    let mut by_id = HashMap::with_capacity(h2.len());
    for (j, a) in h2.actions().iter().enumerate() {
        if by_id.insert(a.id, j).is_some() {
            return Err(OpacityError::NotPermutation { index: j });
        }
    }
    let mut theta = Vec::with_capacity(h1.len());
    for (i, a) in h1.actions().iter().enumerate() {
        match by_id.remove(&a.id) {
            Some(j) if h2.actions()[j] == *a => theta.push(j),
            _ => return Err(OpacityError::NotPermutation { index: i }),
        }
    }
    Ok(theta)
}

/// `h2` is a permutation of `h1` that keeps every hb(h1)-ordered pair in order.
pub fn opacity_relation(h1: &History, h2: &History) -> Result<bool, OpacityError> {
    let theta = bijection(h1, h2)?;
    let hb = happens_before(h1)?;
    Ok(hb.pairs().into_iter().all(|(i, j)| theta[i] < theta[j]))
}

/// Serializes an acyclic graph into a witness and re-checks it.
pub fn extract_witness(history: &History, graph: &OpacityGraph) -> Result<Witness, OpacityError> {
    let c = classify(history)?;
    let hb = relations_with(history, &c).happens_before();
    let fenced = fenced_with(graph, history, &c, &hb);
    let edges: Vec<(usize, usize)> = fenced.all_edges().into_iter().map(|(a, b, _)| (a, b)).collect();
    if let Some(cycle) = find_cycle(fenced.nodes.len(), &edges) {
        let keys = cycle.iter().map(|&k| fenced.nodes[k].key()).collect::<Vec<_>>();
        return Err(OpacityError::WitnessFailure(format!("fenced graph has a cycle through {keys:?}")));
    }

    let n = fenced.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    let mut dedup = edges;
    dedup.sort();
    dedup.dedup();
    for (a, b) in dedup {
        succ[a].push(b);
        indegree[b] += 1;
    }
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).filter(|&k| indegree[k] == 0).map(|k| Reverse((fenced.nodes[k].key(), k))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, k))) = ready.pop() {
        order.push(k);
        for &s in &succ[k] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse((fenced.nodes[s].key(), s)));
            }
        }
    }

    let acts = history.actions();
    let mut serial = Vec::with_capacity(history.len());
    let mut theta = vec![usize::MAX; history.len()];
    let mut completion = CompletionChoice::new();
    for &k in &order {
        let node = &fenced.nodes[k];
        if let GraphNode::Txn(t) = node {
            if t.status == TxnStatus::CommitPending {
                let d = if fenced.vis[k] { CompletionDecision::Commit } else { CompletionDecision::Abort };
                completion.insert(serial.len(), d);
            }
        }
        for i in node.actions() {
            theta[i] = serial.len();
            serial.push(acts[i].clone());
        }
    }
    if let Some(i) = theta.iter().position(|&j| j == usize::MAX) {
        return Err(OpacityError::WitnessFailure(format!("action {i} belongs to no node")));
    }
    let serial = History::new(serial)?;
    let witness = Witness { serial, theta, completion };
    verify(history, &witness)?;
    Ok(witness)
}

/// Re-checks every property a witness promises.
pub fn verify(history: &History, witness: &Witness) -> Result<(), OpacityError> {
    let fail = |m: &str| Err(OpacityError::WitnessFailure(m.to_string()));
    if bijection(history, &witness.serial)? != witness.theta {
        return fail("theta is not the id matching");
    }
    if !opacity_relation(history, &witness.serial)? {
        return fail("serial history breaks happens-before");
    }
    if !is_non_interleaved(&witness.serial)? {
        return fail("serial history interleaves");
    }
    let completed = complete(&witness.serial, &witness.completion)
        .map_err(|e| OpacityError::WitnessFailure(format!("bad completion: {e}")))?;
    match reads_legal(&completed) {
        Ok(true) => Ok(()),
        Ok(false) => fail("completed serial history has an illegal read"),
        Err(e) => Err(OpacityError::WitnessFailure(e.to_string())),
    }
}
