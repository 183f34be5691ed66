//! Leveled label hierarchies.
//!
//! A [`Hierarchy`] is a directed graph of labels where every node carries a
//! level in `1..=L` and every edge goes from level `i` to level `i + 1`.
//! In [`HierarchyMode::Tree`] each non-root node has exactly one parent; in
//! [`HierarchyMode::Dag`] nodes may have several. Level 1 may hold several
//! roots (a forest), which is how taxonomies such as a family/subfamily/genus
//! tree without a virtual root are represented.

mod closure;
mod generate;
mod sampling;
mod split;
mod weights;

use std::collections::{BTreeSet, HashMap};

pub use closure::{transitive_closure_of, transitive_reduction_of};
pub use generate::{ethec_level_counts, fixture, gen_leveled_forest, gen_toy_tree, Fixture};
pub use sampling::{sample_negatives, sample_negatives_lenient, NegativeBatch, Provenance, SamplingGraph};
pub use split::{split_edges, EdgeSplit, SplitKind};
pub use weights::{class_weights, WeightScheme};

use crate::error::{Error, Result};

/// Dense node index into a [`Hierarchy`].
pub type NodeIdx = usize;

/// Directed edge `(parent, child)`: the child is-a parent.
pub type Edge = (NodeIdx, NodeIdx);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyMode {
    #[default]
    Tree,
    Dag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub name: String,
    /// 1-based level.
    pub level: usize,
}

impl Node {
    pub fn new(id: impl Into<String>, name: impl Into<String>, level: usize) -> Self {
        Node { id: id.into(), name: name.into(), level }
    }
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    nodes: Vec<Node>,
    index: HashMap<String, NodeIdx>,
    edges: Vec<Edge>,
    parents: Vec<Vec<NodeIdx>>,
    children: Vec<Vec<NodeIdx>>,
    levels: Vec<Vec<NodeIdx>>,
    mode: HierarchyMode,
}

impl Hierarchy {
    /// Builds and validates a hierarchy. Edges are deduplicated.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, mode: HierarchyMode) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Structural("hierarchy has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.level == 0 {
                return Err(Error::Structural(format!("node {} has level 0; levels start at 1", n.id)));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Structural(format!("duplicate node id {}", n.id)));
            }
        }
        let n_levels = nodes.iter().map(|n| n.level).max().unwrap_or(0);
        let mut levels = vec![Vec::new(); n_levels];
        for (i, n) in nodes.iter().enumerate() {
            levels[n.level - 1].push(i);
        }
        if let Some(empty) = levels.iter().position(|l| l.is_empty()) {
            return Err(Error::Structural(format!("level {} has no nodes", empty + 1)));
        }

        let edges: Vec<Edge> = edges.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut parents = vec![Vec::new(); nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        for &(u, v) in &edges {
            if u >= nodes.len() || v >= nodes.len() {
                return Err(Error::Structural(format!("edge ({u}, {v}) references a missing node")));
            }
            if nodes[v].level != nodes[u].level + 1 {
                return Err(Error::Structural(format!(
                    "edge ({}, {}) goes from level {} to level {}; edges must descend exactly one level",
                    nodes[u].id, nodes[v].id, nodes[u].level, nodes[v].level
                )));
            }
            parents[v].push(u);
            children[u].push(v);
        }
        if mode == HierarchyMode::Tree {
            for (i, n) in nodes.iter().enumerate() {
                if n.level > 1 && parents[i].len() != 1 {
                    return Err(Error::Structural(format!(
                        "tree mode: node {} has {} parents",
                        n.id,
                        parents[i].len()
                    )));
                }
            }
        }
        Ok(Hierarchy { nodes, index, edges, parents, children, levels, mode })
    }

    /// Builds a hierarchy from string-keyed edges.
    pub fn from_named_edges(nodes: Vec<Node>, edges: &[(String, String)], mode: HierarchyMode) -> Result<Self> {
        let index: HashMap<&str, NodeIdx> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let lookup = |id: &str| {
            index.get(id).copied().ok_or_else(|| Error::Structural(format!("edge references unknown node {id}")))
        };
        let mut idx_edges = Vec::with_capacity(edges.len());
        for (p, c) in edges {
            idx_edges.push((lookup(p)?, lookup(c)?));
        }
        Hierarchy::new(nodes, idx_edges, mode)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mode(&self) -> HierarchyMode {
        self.mode
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: NodeIdx) -> &Node {
        &self.nodes[i]
    }

    pub fn id(&self, i: NodeIdx) -> &str {
        &self.nodes[i].id
    }

    pub fn level(&self, i: NodeIdx) -> usize {
        self.nodes[i].level
    }

    pub fn index_of(&self, id: &str) -> Option<NodeIdx> {
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn parents(&self, i: NodeIdx) -> &[NodeIdx] {
        &self.parents[i]
    }

    pub fn children(&self, i: NodeIdx) -> &[NodeIdx] {
        &self.children[i]
    }

    /// Number of levels `L`.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Nodes at 1-based `level`, in index order.
    pub fn level_nodes(&self, level: usize) -> &[NodeIdx] {
        &self.levels[level - 1]
    }

    pub fn levels(&self) -> &[Vec<NodeIdx>] {
        &self.levels
    }

    /// `N_i` for each level.
    pub fn per_level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn roots(&self) -> &[NodeIdx] {
        &self.levels[0]
    }

    pub fn leaves(&self) -> &[NodeIdx] {
        &self.levels[self.levels.len() - 1]
    }

    /// All ancestors of `i` (not including `i`), nearest first in tree mode.
    pub fn ancestors(&self, i: NodeIdx) -> Vec<NodeIdx> {
        let mut out = Vec::new();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeIdx> = self.parents[i].to_vec();
        while let Some(p) = stack.pop() {
            if !std::mem::replace(&mut seen[p], true) {
                out.push(p);
                stack.extend_from_slice(&self.parents[p]);
            }
        }
        out
    }

    /// Root-to-node path in tree mode (`path[0]` is at level 1).
    pub fn path_to(&self, i: NodeIdx) -> Result<Vec<NodeIdx>> {
        let mut path = vec![i];
        let mut cur = i;
        while self.nodes[cur].level > 1 {
            match self.parents[cur].as_slice() {
                [p] => {
                    path.push(*p);
                    cur = *p;
                }
                _ => {
                    return Err(Error::Structural(format!(
                        "node {} has no unique parent; paths need tree mode",
                        self.nodes[cur].id
                    )))
                }
            }
        }
        path.reverse();
        Ok(path)
    }

    /// Every ordered pair `(u, v)` with a directed path `u ⇝ v`, `u ≠ v`.
    pub fn transitive_closure(&self) -> BTreeSet<Edge> {
        // Level-monotone edges cannot form a cycle.
        transitive_closure_of(self.nodes.len(), &self.edges).expect("leveled hierarchy is acyclic")
    }

    pub fn transitive_reduction(&self) -> BTreeSet<Edge> {
        transitive_reduction_of(self.nodes.len(), &self.edges).expect("leveled hierarchy is acyclic")
    }

    /// Checks that every node above the last level has at least one child,
    /// i.e. every leaf sits at level `L`.
    pub fn require_uniform_depth(&self) -> Result<()> {
        let last = self.n_levels();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.level < last && self.children[i].is_empty() {
                return Err(Error::Structural(format!(
                    "node {} at level {} has no children; all leaves must be at level {last}",
                    n.id, n.level
                )));
            }
        }
        Ok(())
    }

    pub fn require_tree(&self) -> Result<()> {
        match self.mode {
            HierarchyMode::Tree => Ok(()),
            HierarchyMode::Dag => Err(Error::Structural("operation requires a tree-mode hierarchy".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Hierarchy {
        Hierarchy::new(
            vec![Node::new("a", "a", 1), Node::new("b", "b", 2), Node::new("c", "c", 3)],
            vec![(0, 1), (1, 2)],
            HierarchyMode::Tree,
        )
        .unwrap()
    }

    #[test]
    fn chain_closure_composes_paths() {
        let h = chain();
        let c: Vec<_> = h.transitive_closure().into_iter().collect();
        assert_eq!(c, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(h.transitive_reduction().len(), 2);
    }

    #[test]
    fn single_node_has_empty_closure() {
        let h = Hierarchy::new(vec![Node::new("r", "r", 1)], vec![], HierarchyMode::Tree).unwrap();
        assert!(h.transitive_closure().is_empty());
    }

    #[test]
    fn rejects_level_skipping_edges() {
        let err = Hierarchy::new(
            vec![Node::new("a", "a", 1), Node::new("b", "b", 2), Node::new("c", "c", 3)],
            vec![(0, 1), (0, 2)],
            HierarchyMode::Dag,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn tree_mode_needs_single_parent() {
        let nodes = vec![Node::new("a", "a", 1), Node::new("b", "b", 1), Node::new("c", "c", 2)];
        assert!(Hierarchy::new(nodes.clone(), vec![(0, 2), (1, 2)], HierarchyMode::Tree).is_err());
        let dag = Hierarchy::new(nodes, vec![(0, 2), (1, 2)], HierarchyMode::Dag).unwrap();
        assert_eq!(dag.parents(2), &[0, 1]);
    }

    #[test]
    fn path_and_ancestors() {
        let h = chain();
        assert_eq!(h.path_to(2).unwrap(), vec![0, 1, 2]);
        let mut anc = h.ancestors(2);
        anc.sort();
        assert_eq!(anc, vec![0, 1]);
        assert_eq!(h.per_level_counts(), vec![1, 1, 1]);
    }

    #[test]
    fn uniform_depth_check() {
        let h = Hierarchy::new(
            vec![Node::new("a", "a", 1), Node::new("b", "b", 1), Node::new("c", "c", 2)],
            vec![(0, 2)],
            HierarchyMode::Tree,
        )
        .unwrap();
        assert!(h.require_uniform_depth().is_err());
        assert!(chain().require_uniform_depth().is_ok());
    }
}
