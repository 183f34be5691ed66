use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Edge, Hierarchy, HierarchyMode, Node};
use crate::error::{Error, Result};

/// Full `branching`-ary tree with `levels` levels and a single root.
///
/// Node ids are `t<k>` in breadth-first order.
pub fn gen_toy_tree(levels: usize, branching: usize) -> Result<Hierarchy> {
    if levels == 0 || branching == 0 {
        return Err(Error::arg("toy tree needs levels >= 1 and branching >= 1"));
    }
    let mut nodes = vec![Node::new("t0", "t0", 1)];
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    for level in 2..=levels {
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for &p in &frontier {
            for _ in 0..branching {
                let i = nodes.len();
                let id = format!("t{i}");
                nodes.push(Node::new(id.clone(), id, level));
                edges.push((p, i));
                next.push(i);
            }
        }
        frontier = next;
    }
    Hierarchy::new(nodes, edges, HierarchyMode::Tree)
}

/// Per-level label counts of the merged four-level entomological taxonomy
/// (family, subfamily, genus, genus + species).
pub fn ethec_level_counts() -> [usize; 4] {
    [6, 21, 135, 561]
}

/// Random leveled forest with exactly `counts[i]` nodes at level `i + 1`.
///
/// Every node above the last level gets at least one child; the remaining
/// children are attached to uniformly random parents. Requires
/// non-decreasing counts.
pub fn gen_leveled_forest(counts: &[usize], seed: u64) -> Result<Hierarchy> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::arg("level counts must be non-empty and positive"));
    }
    if counts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("level counts must be non-decreasing so every parent gets a child"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut prev: Vec<usize> = Vec::new();
    for (li, &count) in counts.iter().enumerate() {
        let level = li + 1;
        let start = nodes.len();
        for k in 0..count {
            let id = format!("l{level}_{k}");
            nodes.push(Node::new(id.clone(), id, level));
        }
        let current: Vec<usize> = (start..start + count).collect();
        if !prev.is_empty() {
            let mut parents: Vec<usize> = prev.clone();
            while parents.len() < count {
                parents.push(prev[rng.gen_range(0..prev.len())]);
            }
            parents.shuffle(&mut rng);
            for (&child, &p) in current.iter().zip(&parents) {
                edges.push((p, child));
            }
        }
        prev = current;
    }
    Hierarchy::new(nodes, edges, HierarchyMode::Tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Cifar10,
    Fmnist,
}

impl std::str::FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" => Ok(Fixture::Cifar10),
            "fmnist" | "fashion-mnist" => Ok(Fixture::Fmnist),
            other => Err(Error::arg(format!("unknown fixture {other:?}; expected cifar10 or fmnist"))),
        }
    }
}

/// The hierarchical CIFAR-10 and Fashion-MNIST label trees.
pub fn fixture(which: Fixture) -> Hierarchy {
    let spec: &[(&str, &[&str])] = match which {
        Fixture::Cifar10 => &[
            ("entity", &["living", "non-living"]),
            ("living", &["mammal", "non-mammal"]),
            ("non-living", &["vehicle", "craft"]),
            ("mammal", &["cat", "deer", "dog", "horse"]),
            ("non-mammal", &["bird", "frog"]),
            ("vehicle", &["automobile", "truck"]),
            ("craft", &["airplane", "ship"]),
        ],
        Fixture::Fmnist => &[
            ("fashion-wear", &["top-wear", "bottom-wear and accessories", "footwear"]),
            ("top-wear", &["t-shirt", "pullover", "dress", "coat", "shirt"]),
            ("bottom-wear and accessories", &["trousers", "bag"]),
            ("footwear", &["sandal", "sneaker", "ankle-boot"]),
        ],
    };
    let root = spec[0].0;
    let mut nodes = vec![Node::new(root, root, 1)];
    let mut named = Vec::new();
    for (parent, kids) in spec {
        let level = nodes.iter().find(|n| n.id == *parent).map(|n| n.level).expect("parent listed before children");
        for kid in kids.iter() {
            nodes.push(Node::new(*kid, *kid, level + 1));
            named.push((parent.to_string(), kid.to_string()));
        }
    }
    Hierarchy::from_named_edges(nodes, &named, HierarchyMode::Tree).expect("fixture is a valid tree")
}
