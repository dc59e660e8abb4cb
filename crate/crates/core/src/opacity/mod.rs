//! Strong opacity: consistency, opacity graphs, graph search and serial
//! witnesses.

mod consistency;
mod graph;
mod search;
mod witness;

use serde_json::{json, Value as Json};
use thiserror::Error;

pub use consistency::{is_consistent, local_pairs};
pub(crate) use consistency::first_inconsistent_read as consistency_violation;
pub use graph::{
    build_graph, decomposed_check, fenced_graph, find_cycle, is_acyclic, DecomposedCheck, EdgeLabel, EdgeSet,
    GraphNode, NodeKey, OpacityGraph, VisAssignment, WwOrder,
};
pub use search::{search_graph, search_with, SearchConfig, SearchOutcome};
pub use witness::{bijection, extract_witness, opacity_relation, verify, Witness};

use crate::history::{classify, ActionIndex, History, HistoryError, RegisterId};
use crate::relations::{races_with, relations_with, Race};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpacityError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("visibility of node {node} contradicts its status")]
    VisForced { node: NodeKey },
    #[error("no visibility given for node {node}")]
    VisMissing { node: NodeKey },
    #[error("node {node} is read from on {reg} but invisible")]
    InvisibleSource { reg: RegisterId, node: NodeKey },
    #[error("write order for {reg} is not a total order of its visible writers")]
    WwMismatch { reg: RegisterId },
    #[error("history is not data-race free")]
    NotDrf,
    #[error("search bound exceeded: {0}")]
    BoundExceeded(String),
    #[error("histories differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("action {index} has no equal counterpart")]
    NotPermutation { index: ActionIndex },
    #[error("witness check failed: {0}")]
    WitnessFailure(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NotOpaque {
    /// The read at this request index has no admissible source.
    Inconsistent { read: ActionIndex },
    /// Every candidate graph is cyclic; the first cycle found, as node keys.
    NoAcyclicGraph { cycle: Option<Vec<NodeKey>> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpacityVerdict {
    /// An acyclic graph and a verified witness exist. `races` is empty
    /// unless the history is racy yet still certified.
    StronglyOpaque { witness: Witness, graph: OpacityGraph, races: Vec<Race> },
    NotOpaque(NotOpaque),
    /// Racy and no certificate found, so nothing is claimed.
    Racy(Vec<Race>),
}

impl OpacityVerdict {
    pub fn is_strongly_opaque(&self) -> bool {
        matches!(self, OpacityVerdict::StronglyOpaque { .. })
    }

    pub fn is_racy(&self) -> bool {
        match self {
            OpacityVerdict::Racy(_) => true,
            OpacityVerdict::StronglyOpaque { races, .. } => !races.is_empty(),
            OpacityVerdict::NotOpaque(_) => false,
        }
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            OpacityVerdict::StronglyOpaque { witness, .. } => Some(witness),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            OpacityVerdict::StronglyOpaque { .. } => "strongly_opaque",
            OpacityVerdict::NotOpaque(NotOpaque::Inconsistent { .. }) => "inconsistent",
            OpacityVerdict::NotOpaque(NotOpaque::NoAcyclicGraph { .. }) => "no_acyclic_graph",
            OpacityVerdict::Racy(_) => "racy",
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            OpacityVerdict::StronglyOpaque { witness, graph, races } => json!({
                "verdict": self.label(),
                "races": races,
                "graph": graph_json(graph),
                "theta": witness.theta_pairs(),
            }),
            OpacityVerdict::NotOpaque(NotOpaque::Inconsistent { read }) => {
                json!({ "verdict": self.label(), "read": read })
            }
            OpacityVerdict::NotOpaque(NotOpaque::NoAcyclicGraph { cycle }) => {
                json!({ "verdict": self.label(), "cycle": cycle })
            }
            OpacityVerdict::Racy(races) => json!({ "verdict": self.label(), "races": races }),
        }
    }
}

/// Nodes by key with their visibility, and edges by node key.
pub fn graph_json(graph: &OpacityGraph) -> Json {
    let key = |k: usize| graph.nodes[k].key();
    let nodes: Vec<Json> = graph
        .nodes
        .iter()
        .zip(&graph.vis)
        .map(|(n, v)| {
            let kind = match n {
                GraphNode::Txn(_) => "txn",
                GraphNode::NonTxn(_) => "nontxn",
                GraphNode::Fence(_) => "fence",
            };
            json!({ "key": n.key(), "kind": kind, "vis": v })
        })
        .collect();
    let edges: Vec<Json> =
        graph.all_edges().into_iter().map(|(a, b, l)| json!({ "from": key(a), "to": key(b), "label": l })).collect();
    json!({ "nodes": nodes, "edges": edges })
}

/// Decides strong opacity. A graph certificate is looked for before races
/// are consulted, so a racy history with an acyclic graph is still certified
/// (with its races attached).
pub fn check_strong_opacity(history: &History) -> Result<OpacityVerdict, OpacityError> {
    check_with(history, &SearchConfig::default())
}

pub fn check_with(history: &History, config: &SearchConfig) -> Result<OpacityVerdict, OpacityError> {
    let c = classify(history)?;
    let hb = relations_with(history, &c).happens_before();
    let races = races_with(history, &c, &hb);
    if let Some(read) = consistency::first_inconsistent_read(history, &c) {
        if !races.is_empty() {
            return Ok(OpacityVerdict::Racy(races));
        }
        return Ok(OpacityVerdict::NotOpaque(NotOpaque::Inconsistent { read }));
    }
    let ctx = graph::GraphContext::new(history, &c, &hb);
    let outcome = search::search_in(&ctx, config)?;
    match outcome.graph {
        Some(graph) => {
            let witness = extract_witness(history, &graph)?;
            Ok(OpacityVerdict::StronglyOpaque { witness, graph, races })
        }
        None if !races.is_empty() => Ok(OpacityVerdict::Racy(races)),
        None => Ok(OpacityVerdict::NotOpaque(NotOpaque::NoAcyclicGraph { cycle: outcome.first_cycle })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::atomic_member;
    use crate::history::build::{h0, h_bad, HistoryBuilder};
    use crate::relations::is_drf;

    #[test]
    fn fixture_verdicts() {
        let v = check_strong_opacity(&h0()).unwrap();
        let OpacityVerdict::StronglyOpaque { witness, races, .. } = &v else { panic!("{v:?}") };
        assert!(atomic_member(&witness.serial));
        assert!(opacity_relation(&h0(), &witness.serial).unwrap());
        // ν3's read of x is unordered with both transactional writes to x
        assert_eq!(races.len(), 2);
        assert!(v.is_racy());

        assert!(is_drf(&h_bad()).unwrap());
        let v = check_strong_opacity(&h_bad()).unwrap();
        assert_eq!(v, OpacityVerdict::NotOpaque(NotOpaque::NoAcyclicGraph { cycle: Some(vec![0, 8]) }));
        assert_eq!(v.label(), "no_acyclic_graph");
    }

    #[test]
    fn inconsistent_and_racy() {
        let h = HistoryBuilder::new().begin(1).read(1, "x", 5).commit(1).history();
        assert_eq!(
            check_strong_opacity(&h).unwrap(),
            OpacityVerdict::NotOpaque(NotOpaque::Inconsistent { read: 2 })
        );
        // a non-transactional read overlapping the transaction that wrote
        // its value, reading the value before commit: racy and cyclic
        let h = HistoryBuilder::new()
            .begin(1)
            .write(1, "x", 1)
            .read(2, "x", 0)
            .read(2, "x", 1)
            .read(2, "x", 0)
            .commit(1)
            .history();
        let v = check_strong_opacity(&h).unwrap();
        assert!(matches!(v, OpacityVerdict::Racy(ref r) if !r.is_empty()), "{v:?}");
    }

    #[test]
    fn json_shape() {
        let v = check_strong_opacity(&h0()).unwrap().to_json();
        assert_eq!(v["verdict"], "strongly_opaque");
        assert_eq!(v["graph"]["nodes"].as_array().unwrap().len(), 3);
        assert_eq!(v["theta"][0], json!([0, 0]));
    }
}
