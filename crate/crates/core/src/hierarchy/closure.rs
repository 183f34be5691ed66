use std::collections::BTreeSet;

use super::{Edge, NodeIdx};
use crate::error::{Error, Result};

fn adjacency(n: usize, edges: &[Edge]) -> Result<Vec<Vec<NodeIdx>>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::Structural(format!("edge ({u}, {v}) out of range for {n} nodes")));
        }
        adj[u].push(v);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    Ok(adj)
}

/// Reverse topological order (children before parents). Errors with one node
/// on a cycle if the graph is not acyclic.
fn postorder(adj: &[Vec<NodeIdx>]) -> Result<Vec<NodeIdx>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = adj.len();
    let mut mark = vec![Mark::New; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack: Vec<(NodeIdx, usize)> = vec![(start, 0)];
        mark[start] = Mark::Open;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if let Some(&v) = adj[u].get(*next) {
                *next += 1;
                match mark[v] {
                    Mark::New => {
                        mark[v] = Mark::Open;
                        stack.push((v, 0));
                    }
                    Mark::Open => {
                        return Err(Error::Structural(format!("cycle detected through node {v}")));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[u] = Mark::Done;
                order.push(u);
                stack.pop();
            }
        }
    }
    Ok(order)
}

/// Transitive closure of a DAG over `n` nodes: all `(u, v)` with a path
/// `u ⇝ v`, `u ≠ v`.
pub fn transitive_closure_of(n: usize, edges: &[Edge]) -> Result<BTreeSet<Edge>> {
    let adj = adjacency(n, edges)?;
    let order = postorder(&adj)?;
    let mut reach: Vec<BTreeSet<NodeIdx>> = vec![BTreeSet::new(); n];
    for &u in &order {
        let mut r = BTreeSet::new();
        for &v in &adj[u] {
            r.insert(v);
            r.extend(reach[v].iter().copied());
        }
        reach[u] = r;
    }
    Ok(reach.into_iter().enumerate().flat_map(|(u, r)| r.into_iter().map(move |v| (u, v))).collect())
}

/// Transitive reduction of a DAG: the edges `(u, v)` for which no other
/// path `u ⇝ v` exists.
pub fn transitive_reduction_of(n: usize, edges: &[Edge]) -> Result<BTreeSet<Edge>> {
    let closure = transitive_closure_of(n, edges)?;
    let adj = adjacency(n, edges)?;
    let mut out = BTreeSet::new();
    for (u, kids) in adj.iter().enumerate() {
        for &v in kids {
            let redundant = kids.iter().any(|&w| w != v && closure.contains(&(w, v)));
            if !redundant {
                out.insert((u, v));
            }
        }
    }
    Ok(out)
}
