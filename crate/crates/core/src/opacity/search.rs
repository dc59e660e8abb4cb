use std::collections::{BTreeMap, BTreeSet};

use super::graph::{find_cycle, rw_edges, GraphContext, NodeKey, OpacityGraph, VisAssignment, WwOrder};
use super::OpacityError;
use crate::history::{classify, History, RegisterId};
use crate::relations::relations_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    /// Most visible writers allowed on one register.
    pub max_writers: usize,
    /// Most complete per-register write orders examined overall.
    pub max_candidates: u64,
    /// Skip write orders that contradict HB between writers.
    pub prune_hb: bool,
    /// Reject partial assignments as soon as their edges form a cycle.
    pub prune_partial: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { max_writers: 8, max_candidates: 2_000_000, prune_hb: true, prune_partial: true }
    }
}

impl SearchConfig {
    pub fn unpruned() -> Self {
        SearchConfig { prune_hb: false, prune_partial: false, ..Self::default() }
    }
}

/// What the search found, with the first cycle it rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub graph: Option<OpacityGraph>,
    pub candidates: u64,
    pub first_cycle: Option<Vec<NodeKey>>,
}

/// First acyclic opacity graph in the fixed enumeration order, if any.
pub fn search_graph(history: &History) -> Result<Option<OpacityGraph>, OpacityError> {
    Ok(search_with(history, &SearchConfig::default())?.graph)
}

pub fn search_with(history: &History, config: &SearchConfig) -> Result<SearchOutcome, OpacityError> {
    let c = classify(history)?;
    let hb = relations_with(history, &c).happens_before();
    let ctx = GraphContext::new(history, &c, &hb);
    search_in(&ctx, config)
}

pub(crate) fn search_in(ctx: &GraphContext, config: &SearchConfig) -> Result<SearchOutcome, OpacityError> {
    let free: Vec<usize> = (0..ctx.nodes.len()).filter(|&k| ctx.nodes[k].forced_vis().is_none()).collect();
    if free.len() >= 24 {
        return Err(OpacityError::BoundExceeded(format!("{} commit-pending transactions", free.len())));
    }
    let sources: BTreeSet<usize> = ctx.wr.values().flatten().map(|&(src, _)| src).collect();
    let mut state = Search { ctx, config, candidates: 0, first_cycle: None };
    for mask in 0u32..(1 << free.len()) {
        let mut vis: Vec<bool> = ctx.nodes.iter().map(|n| n.forced_vis().unwrap_or(false)).collect();
        for (bit, &k) in free.iter().enumerate() {
            vis[k] = mask & (1 << bit) != 0;
        }
        if sources.iter().any(|&s| !vis[s]) {
            continue;
        }
        if let Some(graph) = state.for_vis(&vis)? {
            return Ok(SearchOutcome { graph: Some(graph), candidates: state.candidates, first_cycle: None });
        }
    }
    Ok(SearchOutcome { graph: None, candidates: state.candidates, first_cycle: state.first_cycle })
}

struct Search<'a> {
    ctx: &'a GraphContext,
    config: &'a SearchConfig,
    candidates: u64,
    first_cycle: Option<Vec<NodeKey>>,
}

impl Search<'_> {
    fn for_vis(&mut self, vis: &[bool]) -> Result<Option<OpacityGraph>, OpacityError> {
        let n = self.ctx.nodes.len();
        let mut writers: BTreeMap<RegisterId, Vec<usize>> = BTreeMap::new();
        for k in (0..n).filter(|&k| vis[k]) {
            for (x, _) in &self.ctx.accesses[k].writes {
                let w = writers.entry(x.clone()).or_default();
                if w.last() != Some(&k) {
                    w.push(k);
                }
            }
        }
        if let Some((x, w)) = writers.iter().find(|(_, w)| w.len() > self.config.max_writers) {
            return Err(OpacityError::BoundExceeded(format!("{} visible writers to {}", w.len(), x)));
        }
        let mut edges: Vec<(usize, usize)> = self.ctx.hb_nodes.iter().copied().collect();
        edges.extend(self.ctx.wr.values().flatten().copied());
        if self.config.prune_partial && self.note_cycle(n, &edges) {
            return Ok(None);
        }
        let regs: Vec<(RegisterId, Vec<usize>)> = writers.into_iter().collect();
        let mut chosen = WwOrder::new();
        if self.assign(&regs, 0, &mut edges, &mut chosen)? {
            let vis_map: VisAssignment = self
                .ctx
                .nodes
                .iter()
                .zip(vis)
                .filter(|(node, _)| node.forced_vis().is_none())
                .map(|(node, &v)| (node.key(), v))
                .collect();
            let graph = self.ctx.build(&vis_map, &chosen)?;
            return Ok(Some(graph));
        }
        Ok(None)
    }

    fn note_cycle(&mut self, n: usize, edges: &[(usize, usize)]) -> bool {
        match find_cycle(n, edges) {
            Some(cycle) => {
                if self.first_cycle.is_none() {
                    self.first_cycle = Some(cycle.iter().map(|&k| self.ctx.nodes[k].key()).collect());
                }
                true
            }
            None => false,
        }
    }

    /// Chooses write orders for `regs[i..]`; true once all are chosen acyclically.
    fn assign(
        &mut self,
        regs: &[(RegisterId, Vec<usize>)],
        i: usize,
        edges: &mut Vec<(usize, usize)>,
        chosen: &mut WwOrder,
    ) -> Result<bool, OpacityError> {
        let n = self.ctx.nodes.len();
        if i == regs.len() {
            if self.config.prune_partial {
                return Ok(true);
            }
            return Ok(!self.note_cycle(n, edges));
        }
        let (x, writers) = &regs[i];
        let mut orders = Vec::new();
        let mut cur = Vec::with_capacity(writers.len());
        let mut used = vec![false; writers.len()];
        self.orders(writers, &mut cur, &mut used, &mut orders);
        for order in orders {
            self.candidates += 1;
            if self.candidates > self.config.max_candidates {
                return Err(OpacityError::BoundExceeded(format!(
                    "more than {} write orders",
                    self.config.max_candidates
                )));
            }
            let mark = edges.len();
            for (a, &p) in order.iter().enumerate() {
                edges.extend(order[a + 1..].iter().map(|&q| (p, q)));
            }
            let ww = BTreeMap::from([(x.clone(), order.clone())]);
            if let Some(rw) = rw_edges(&self.ctx.accesses, &self.ctx.wr, &ww).remove(x) {
                edges.extend(rw);
            }
            let cyclic = self.config.prune_partial && self.note_cycle(n, edges);
            if !cyclic {
                chosen.insert(x.clone(), order.iter().map(|&k| self.ctx.nodes[k].key()).collect());
                if self.assign(regs, i + 1, edges, chosen)? {
                    return Ok(true);
                }
                chosen.remove(x);
            }
            edges.truncate(mark);
        }
        Ok(false)
    }

    /// All lexicographic permutations of `writers`, optionally only those
    /// that extend HB between them.
    fn orders(&self, writers: &[usize], cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == writers.len() {
            out.push(cur.clone());
            return;
        }
        for (j, &w) in writers.iter().enumerate() {
            if used[j] {
                continue;
            }
            if self.config.prune_hb
                && writers
                    .iter()
                    .enumerate()
                    .any(|(o, &v)| !used[o] && o != j && self.ctx.hb_nodes.contains(&(v, w)))
            {
                continue;
            }
            used[j] = true;
            cur.push(w);
            self.orders(writers, cur, used, out);
            cur.pop();
            used[j] = false;
        }
    }
}
