//! Order relations over history actions, happens-before, conflicts and races.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::history::{classify, ActionIndex, ActionKind, Classification, History, HistoryError, RegisterId, ThreadId, Value};

/// A binary relation over the action indices of one history, stored as a
/// dense bit matrix.
#[derive(Clone, PartialEq, Eq)]
pub struct Relation {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.pairs()).finish()
    }
}

impl Relation {
    pub fn empty(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Relation { n, words, bits: vec![0; n * words] }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut r = Relation::empty(n);
        for (i, j) in pairs {
            r.insert(i, j);
        }
        r
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n, "index out of bounds");
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.bits[i * self.words + j / 64] & (1 << (j % 64)) != 0
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.contains(i, j))
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for (w, &word) in self.row(i).iter().enumerate() {
                let mut word = word;
                while word != 0 {
                    let b = word.trailing_zeros() as usize;
                    out.push((i, w * 64 + b));
                    word &= word - 1;
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &Relation) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn is_subset(&self, other: &Relation) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    /// `self ; other`: pairs (i, k) with i self j and j other k.
    pub fn compose(&self, other: &Relation) -> Relation {
        assert_eq!(self.n, other.n);
        let mut out = Relation::empty(self.n);
        for i in 0..self.n {
            for j in self.successors(i).collect::<Vec<_>>() {
                let (row_i, row_j) = (i * self.words, j * other.words);
                for w in 0..self.words {
                    out.bits[row_i + w] |= other.bits[row_j + w];
                }
            }
        }
        out
    }

    pub fn transitive_closure(&self) -> Relation {
        let mut r = self.clone();
        let words = r.words;
        for k in 0..r.n {
            let row_k: Vec<u64> = r.row(k).to_vec();
            for i in 0..r.n {
                if r.contains(i, k) {
                    let base = i * words;
                    for (dst, src) in r.bits[base..base + words].iter_mut().zip(&row_k) {
                        *dst |= src;
                    }
                }
            }
        }
        r
    }

    pub fn is_irreflexive(&self) -> bool {
        (0..self.n).all(|i| !self.contains(i, i))
    }

    pub fn is_transitive(&self) -> bool {
        self.compose(self).is_subset(self)
    }
}

#[derive(Debug, Clone)]
pub struct RelationBundle {
    pub po: Relation,
    pub xpo: Relation,
    pub cl: Relation,
    pub af: Relation,
    pub bf: Relation,
    pub rt: Relation,
    pub wr: BTreeMap<RegisterId, Relation>,
    pub txwr: BTreeMap<RegisterId, Relation>,
}

/// Computes po, xpo, cl, af, bf, rt and the per-register read-from relations.
pub fn base_relations(history: &History) -> Result<RelationBundle, HistoryError> {
    let c = classify(history)?;
    Ok(relations_with(history, &c))
}

pub(crate) fn relations_with(history: &History, c: &Classification) -> RelationBundle {
    let acts = history.actions();
    let n = acts.len();
    let mut po = Relation::empty(n);
    let mut xpo = Relation::empty(n);
    let mut cl = Relation::empty(n);
    let mut af = Relation::empty(n);
    let mut bf = Relation::empty(n);
    let mut rt = Relation::empty(n);

    let mut txbegins: HashMap<ThreadId, Vec<ActionIndex>> = HashMap::new();
    for (i, a) in acts.iter().enumerate() {
        if a.kind == ActionKind::TxBegin {
            txbegins.entry(a.thread).or_default().push(i);
        }
    }
    let begin_between = |t: ThreadId, i: usize, j: usize| {
        txbegins.get(&t).is_some_and(|bs| {
            let k = bs.partition_point(|&b| b <= i);
            k < bs.len() && bs[k] < j
        })
    };

    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&acts[i], &acts[j]);
            if a.thread == b.thread {
                po.insert(i, j);
                if begin_between(a.thread, i, j) {
                    xpo.insert(i, j);
                }
            }
            if c.is_nontxn(i) && c.is_nontxn(j) {
                cl.insert(i, j);
            }
            if a.kind == ActionKind::FBegin && b.kind == ActionKind::TxBegin {
                af.insert(i, j);
            }
            if a.kind.is_completion() && b.kind == ActionKind::FEnd {
                bf.insert(i, j);
            }
            if a.kind.is_completion() && b.kind == ActionKind::TxBegin {
                rt.insert(i, j);
            }
        }
    }

    let mut writes: HashMap<(&RegisterId, Value), Vec<ActionIndex>> = HashMap::new();
    for (i, a) in acts.iter().enumerate() {
        if let ActionKind::Write { reg, val } = &a.kind {
            writes.entry((reg, *val)).or_default().push(i);
        }
    }
    let mut wr: BTreeMap<RegisterId, Relation> = BTreeMap::new();
    let mut txwr: BTreeMap<RegisterId, Relation> = BTreeMap::new();
    for (j, a) in acts.iter().enumerate() {
        let ActionKind::Ret { val } = a.kind else { continue };
        let Some(req) = c.request_of(j) else { continue };
        let ActionKind::Read { reg } = &acts[req].kind else { continue };
        for &i in writes.get(&(reg, val)).into_iter().flatten() {
            wr.entry(reg.clone()).or_insert_with(|| Relation::empty(n)).insert(i, j);
            if c.is_transactional(i) && c.is_transactional(j) {
                txwr.entry(reg.clone()).or_insert_with(|| Relation::empty(n)).insert(i, j);
            }
        }
    }

    RelationBundle { po, xpo, cl, af, bf, rt, wr, txwr }
}

impl RelationBundle {
    /// (po ∪ cl ∪ af ∪ bf ∪ ⋃x xpo;txwr_x)⁺
    pub fn happens_before(&self) -> Relation {
        let mut base = self.po.clone();
        base.union_with(&self.cl);
        base.union_with(&self.af);
        base.union_with(&self.bf);
        for txwr in self.txwr.values() {
            base.union_with(&self.xpo.compose(txwr));
        }
        base.transitive_closure()
    }
}

pub fn happens_before(history: &History) -> Result<Relation, HistoryError> {
    Ok(base_relations(history)?.happens_before())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConflictPair {
    pub nontxn_index: ActionIndex,
    pub txn_index: ActionIndex,
    pub reg: RegisterId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Race {
    pub conflict: ConflictPair,
    /// Which endpoint executed first; hb orders the pair in neither direction.
    pub nontxn_first: bool,
}

pub(crate) fn conflicts_with(history: &History, c: &Classification) -> Vec<ConflictPair> {
    let acts = history.actions();
    let access = |i: usize| match &acts[i].kind {
        ActionKind::Read { reg } => Some((reg, false)),
        ActionKind::Write { reg, .. } => Some((reg, true)),
        _ => None,
    };
    let mut out = Vec::new();
    for i in 0..acts.len() {
        for j in i + 1..acts.len() {
            let (Some((ri, wi)), Some((rj, wj))) = (access(i), access(j)) else { continue };
            if ri != rj || !(wi || wj) || acts[i].thread == acts[j].thread {
                continue;
            }
            let pair = if c.is_nontxn(i) && c.is_transactional(j) {
                (i, j)
            } else if c.is_transactional(i) && c.is_nontxn(j) {
                (j, i)
            } else {
                continue;
            };
            out.push(ConflictPair { nontxn_index: pair.0, txn_index: pair.1, reg: ri.clone() });
        }
    }
    out
}

pub fn conflicts(history: &History) -> Result<Vec<ConflictPair>, HistoryError> {
    let c = classify(history)?;
    Ok(conflicts_with(history, &c))
}

pub(crate) fn races_with(history: &History, c: &Classification, hb: &Relation) -> Vec<Race> {
    conflicts_with(history, c)
        .into_iter()
        .filter(|p| !hb.contains(p.nontxn_index, p.txn_index) && !hb.contains(p.txn_index, p.nontxn_index))
        .map(|p| Race { nontxn_first: p.nontxn_index < p.txn_index, conflict: p })
        .collect()
}

pub fn races(history: &History) -> Result<Vec<Race>, HistoryError> {
    let c = classify(history)?;
    let hb = relations_with(history, &c).happens_before();
    Ok(races_with(history, &c, &hb))
}

pub fn is_drf(history: &History) -> Result<bool, HistoryError> {
    Ok(races(history)?.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build::{h_bad, HistoryBuilder};

    /// ν writes x; T1 writes the flag; T2 reads the flag, then x.
    fn publication() -> History {
        HistoryBuilder::new()
            .write(1, "x", 42)
            .begin(1)
            .write(1, "xp", 5)
            .commit(1)
            .begin(2)
            .read(2, "xp", 5)
            .read(2, "x", 42)
            .commit(2)
            .history()
    }

    /// T2 commits, T1 commits, thread 1 fences and writes x.
    fn privatization_fenced() -> History {
        HistoryBuilder::new()
            .begin(2)
            .read(2, "xp", 0)
            .write(2, "x", 42)
            .commit(2)
            .begin(1)
            .write(1, "xp", 7)
            .commit(1)
            .fence(1)
            .write(1, "x", 1)
            .history()
    }

    #[test]
    fn closure_basics() {
        let r = Relation::from_pairs(4, [(0, 1), (1, 2), (2, 3)]);
        let c = r.transitive_closure();
        assert!(c.contains(0, 3) && c.is_transitive() && c.is_irreflexive());
        assert_eq!(c.len(), 6);
        let big = Relation::from_pairs(130, (0..129).map(|i| (i, i + 1)));
        assert!(big.transitive_closure().contains(0, 129));
    }

    #[test]
    fn empty_history() {
        let b = base_relations(&History::empty()).unwrap();
        assert!(b.po.is_empty() && b.wr.is_empty() && b.happens_before().is_empty());
        assert!(is_drf(&History::empty()).unwrap());
    }

    #[test]
    fn publication_reads_from_flag() {
        let h = publication();
        let b = base_relations(&h).unwrap();
        // flag write at 4, T2's flag read response at 11
        assert!(b.wr[&RegisterId::new("xp")].contains(4, 11));
        assert!(b.txwr[&RegisterId::new("xp")].contains(4, 11));
        let hb = b.happens_before();
        // ν's write request (0) before T2's read of x (12, 13)
        assert!(hb.contains(0, 12) && hb.contains(0, 13));
        assert!(is_drf(&h).unwrap());
    }

    #[test]
    fn fenced_privatization_is_ordered() {
        let h = privatization_fenced();
        let b = base_relations(&h).unwrap();
        assert!(b.bf.contains(7, 15));
        let hb = b.happens_before();
        for i in 0..8 {
            assert!(hb.contains(i, 16), "T2 action {i} should precede ν");
        }
        assert!(races(&h).unwrap().is_empty());
    }

    #[test]
    fn racy_example() {
        let h = HistoryBuilder::new()
            .begin(1)
            .write(1, "x", 1)
            .write(1, "y", 2)
            .commit(1)
            .read(2, "x", 1)
            .read(2, "y", 2)
            .history();
        assert_eq!(conflicts(&h).unwrap().len(), 2);
        let r = races(&h).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|r| !r.nontxn_first));
    }

    #[test]
    fn conflict_needs_txn_endpoint_and_two_threads() {
        let h = HistoryBuilder::new().write(1, "x", 1).write(2, "x", 2).history();
        assert!(conflicts(&h).unwrap().is_empty());
        let h = HistoryBuilder::new().begin(1).write(1, "x", 1).commit(1).read(1, "x", 1).history();
        assert!(conflicts(&h).unwrap().is_empty());
    }

    #[test]
    fn h_bad_is_drf() {
        assert!(is_drf(&h_bad()).unwrap());
    }

    #[test]
    fn xpo_needs_intervening_begin() {
        let h = HistoryBuilder::new().write(1, "z", 9).begin(1).write(1, "x", 1).commit(1).history();
        let b = base_relations(&h).unwrap();
        assert!(b.xpo.contains(0, 4));
        assert!(!b.xpo.contains(2, 4));
        assert!(b.xpo.is_subset(&b.po));
    }
}
