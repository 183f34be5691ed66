use std::collections::HashSet;

use rand::Rng;

use super::{Edge, Hierarchy, NodeIdx};
use crate::error::{Error, Result, Side};

/// Rejection draws per slot and level before falling back to an exact scan.
const MAX_RETRIES: usize = 100;

/// The view of a graph that negative sampling needs: node levels and the
/// positive (closure) relation.
#[derive(Debug, Clone)]
pub struct SamplingGraph {
    ids: Vec<String>,
    levels: Vec<Vec<NodeIdx>>,
    all: Vec<NodeIdx>,
    closure: HashSet<Edge>,
}

impl SamplingGraph {
    pub fn new(ids: Vec<String>, levels: Vec<Vec<NodeIdx>>, closure: impl IntoIterator<Item = Edge>) -> Self {
        let all = (0..ids.len()).collect();
        SamplingGraph { ids, levels, all, closure: closure.into_iter().collect() }
    }

    pub fn from_hierarchy(h: &Hierarchy) -> Self {
        SamplingGraph::new(
            h.nodes().iter().map(|n| n.id.clone()).collect(),
            h.levels().to_vec(),
            h.transitive_closure(),
        )
    }

    pub fn is_positive(&self, e: Edge) -> bool {
        self.closure.contains(&e)
    }

    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn levels(&self) -> &[Vec<NodeIdx>] {
        &self.levels
    }

    pub fn closure_len(&self) -> usize {
        self.closure.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub side: Side,
    pub source: Edge,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeBatch {
    pub edges: Vec<Edge>,
    pub provenance: Vec<Provenance>,
    /// Requested sides for which no feasible corruption existed (lenient
    /// sampling only).
    pub infeasible: Vec<Side>,
}

impl NegativeBatch {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn push(&mut self, e: Edge, side: Side, source: Edge) {
        self.edges.push(e);
        self.provenance.push(Provenance { side, source });
    }
}

fn corrupt(positive: Edge, side: Side, node: NodeIdx) -> Edge {
    match side {
        Side::Left => (node, positive.1),
        Side::Right => (positive.0, node),
    }
}

struct SideSampler<'a, F: Fn(Edge) -> bool> {
    g: &'a SamplingGraph,
    positive: Edge,
    side: Side,
    forbid: &'a F,
    exhausted: Vec<bool>,
}

impl<F: Fn(Edge) -> bool> SideSampler<'_, F> {
    fn valid(&self, node: NodeIdx) -> bool {
        let e = corrupt(self.positive, self.side, node);
        e.0 != e.1 && !self.g.closure.contains(&e) && !(self.forbid)(e)
    }

    fn draw_from<R: Rng + ?Sized>(&self, pool: &[NodeIdx], rng: &mut R) -> Option<NodeIdx> {
        if pool.is_empty() {
            return None;
        }
        for _ in 0..MAX_RETRIES {
            let c = pool[rng.gen_range(0..pool.len())];
            if self.valid(c) {
                return Some(c);
            }
        }
        let feasible: Vec<NodeIdx> = pool.iter().copied().filter(|&c| self.valid(c)).collect();
        if feasible.is_empty() {
            None
        } else {
            Some(feasible[rng.gen_range(0..feasible.len())])
        }
    }

    fn slot<R: Rng + ?Sized>(&mut self, k: usize, pick_per_level: bool, rng: &mut R) -> Option<NodeIdx> {
        if !pick_per_level {
            return self.draw_from(&self.g.all, rng);
        }
        let n_levels = self.g.levels.len();
        for off in 0..n_levels {
            let level = (k + off) % n_levels;
            if self.exhausted[level] {
                continue;
            }
            match self.draw_from(&self.g.levels[level], rng) {
                Some(c) => return Some(c),
                None => self.exhausted[level] = true,
            }
        }
        None
    }
}

fn sample_side<R, F>(
    g: &SamplingGraph,
    positive: Edge,
    side: Side,
    n: usize,
    pick_per_level: bool,
    forbid: &F,
    rng: &mut R,
    out: &mut NegativeBatch,
) -> bool
where
    R: Rng + ?Sized,
    F: Fn(Edge) -> bool,
{
    let mut s = SideSampler { g, positive, side, forbid, exhausted: vec![false; g.levels.len()] };
    for k in 0..n {
        match s.slot(k, pick_per_level, rng) {
            Some(c) => out.push(corrupt(positive, side, c), side, positive),
            None => return false,
        }
    }
    true
}

fn check_positive(g: &SamplingGraph, positive: Edge) -> Result<()> {
    if positive.0 >= g.n_nodes() || positive.1 >= g.n_nodes() || !g.is_positive(positive) {
        return Err(Error::arg(format!("({}, {}) is not a closure edge", positive.0, positive.1)));
    }
    Ok(())
}

/// Draws `n_left` corruptions `(x', y)` and `n_right` corruptions `(x, y')`
/// of `positive`, none of which lies in the closure or is rejected by
/// `forbid`.
///
/// With `pick_per_level`, slot `k` on each side starts at level
/// `k mod L` (round-robin from level 1) and moves to the next level only
/// when the current one has no feasible corrupter.
pub fn sample_negatives<R, F>(
    g: &SamplingGraph,
    positive: Edge,
    n_left: usize,
    n_right: usize,
    pick_per_level: bool,
    forbid: F,
    rng: &mut R,
) -> Result<NegativeBatch>
where
    R: Rng + ?Sized,
    F: Fn(Edge) -> bool,
{
    check_positive(g, positive)?;
    if n_left + n_right == 0 {
        return Err(Error::arg("at least one negative must be requested"));
    }
    let mut out = NegativeBatch::default();
    for (side, n) in [(Side::Left, n_left), (Side::Right, n_right)] {
        if n > 0 && !sample_side(g, positive, side, n, pick_per_level, &forbid, rng, &mut out) {
            return Err(Error::Sampling { side, parent: g.ids[positive.0].clone(), child: g.ids[positive.1].clone() });
        }
    }
    Ok(out)
}

/// Like [`sample_negatives`], but a side without any feasible corruption is
/// recorded in [`NegativeBatch::infeasible`] instead of failing. Edges out
/// of the root of a single-rooted tree, for instance, have no right-side
/// negatives at all.
pub fn sample_negatives_lenient<R, F>(
    g: &SamplingGraph,
    positive: Edge,
    n_left: usize,
    n_right: usize,
    pick_per_level: bool,
    forbid: F,
    rng: &mut R,
) -> Result<NegativeBatch>
where
    R: Rng + ?Sized,
    F: Fn(Edge) -> bool,
{
    check_positive(g, positive)?;
    let mut out = NegativeBatch::default();
    for (side, n) in [(Side::Left, n_left), (Side::Right, n_right)] {
        if n == 0 {
            continue;
        }
        let mark = out.edges.len();
        if !sample_side(g, positive, side, n, pick_per_level, &forbid, rng, &mut out) {
            out.edges.truncate(mark);
            out.provenance.truncate(mark);
            out.infeasible.push(side);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{fixture, gen_leveled_forest, gen_toy_tree, Fixture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn none(_: Edge) -> bool {
        false
    }

    #[test]
    fn forced_unique_candidate() {
        let h = gen_toy_tree(2, 2).unwrap();
        let g = SamplingGraph::from_hierarchy(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for ppl in [false, true] {
            let b = sample_negatives(&g, (0, 1), 1, 0, ppl, none, &mut rng).unwrap();
            assert_eq!(b.edges, vec![(2, 1)]);
            assert_eq!(b.provenance[0], Provenance { side: Side::Left, source: (0, 1) });
        }
    }

    #[test]
    fn infeasible_side_errors_with_side() {
        let h = gen_toy_tree(2, 2).unwrap();
        let g = SamplingGraph::from_hierarchy(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // (root, leaf) has no right corruption: every other node is the root's descendant.
        let err = sample_negatives(&g, (0, 1), 0, 1, true, none, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Sampling { side: Side::Right, .. }), "{err}");
        let lenient = sample_negatives_lenient(&g, (0, 1), 2, 3, true, none, &mut rng).unwrap();
        assert_eq!(lenient.infeasible, vec![Side::Right]);
        assert_eq!(lenient.len(), 2);
    }

    #[test]
    fn rejects_non_closure_positive() {
        let h = gen_toy_tree(2, 2).unwrap();
        let g = SamplingGraph::from_hierarchy(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_negatives(&g, (1, 2), 1, 1, false, none, &mut rng).is_err());
    }

    #[test]
    fn pick_per_level_covers_levels() {
        // Two roots so that every level has feasible corrupters on both sides.
        let h = gen_leveled_forest(&[2, 4, 8, 16], 5).unwrap();
        let g = SamplingGraph::from_hierarchy(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let leaf = h.leaves()[0];
        let path = h.path_to(leaf).unwrap();
        let positive = (path[1], leaf);
        let b = sample_negatives(&g, positive, 5, 5, true, none, &mut rng).unwrap();
        for side in [Side::Left, Side::Right] {
            let levels: std::collections::BTreeSet<usize> = b
                .edges
                .iter()
                .zip(&b.provenance)
                .filter(|(_, p)| p.side == side)
                .map(|(e, _)| if side == Side::Left { h.level(e.0) } else { h.level(e.1) })
                .collect();
            assert!(levels.len() >= 4, "{side}: {levels:?}");
        }
    }

    #[test]
    fn forbid_is_respected() {
        let h = gen_toy_tree(3, 3).unwrap();
        let g = SamplingGraph::from_hierarchy(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves: HashSet<usize> = h.leaves().iter().copied().collect();
        let forbid = |e: Edge| leaves.contains(&e.0);
        for &pos in h.edges().iter() {
            let b = sample_negatives_lenient(&g, pos, 5, 5, true, forbid, &mut rng).unwrap();
            assert!(b.edges.iter().all(|e| !leaves.contains(&e.0)));
        }
    }

    #[test]
    fn never_returns_closure_edges_on_cifar() {
        let h = fixture(Fixture::Cifar10);
        let g = SamplingGraph::from_hierarchy(&h);
        let closure = h.transitive_closure();
        let positives: Vec<Edge> = closure.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut n = 0;
        while n < 1000 {
            let pos = positives[rng.gen_range(0..positives.len())];
            let b = sample_negatives_lenient(&g, pos, 5, 5, n % 2 == 0, none, &mut rng).unwrap();
            for e in &b.edges {
                assert!(!closure.contains(e) && e.0 != e.1);
            }
            n += b.len();
        }
    }
}
