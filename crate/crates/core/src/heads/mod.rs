//! Hierarchy-aware probability heads over logits.
//!
//! Logit layouts, for a tree with `N` labels over `L` levels:
//!
//! - *flat* (`N` values): level blocks concatenated in level order, the
//!   block of level `i` holding that level's labels in hierarchy order. The
//!   one-vs-rest, per-level and masked heads use it.
//! - *leaf* (`N_L` values): the last level's block only, for the
//!   marginalization head.
//! - *groups* (`N` values): one block per sibling group (the roots first,
//!   then the children of each internal node in flat order), for the
//!   hierarchical softmax.

mod scorer;

pub use scorer::{evaluate_head, score_items, train_heads, HeadEpoch, HeadReport, HeadTrainConfig, LinearScorer};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeIdx};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

fn lse(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn lse_at(x: &[f64], idx: &[usize]) -> f64 {
    let m = idx.iter().map(|&j| x[j]).fold(f64::NEG_INFINITY, f64::max);
    m + idx.iter().map(|&j| (x[j] - m).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let l = lse(x);
    x.iter().map(|v| (v - l).exp()).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index tables for the logit layouts of a uniform-depth tree.
#[derive(Debug, Clone)]
pub struct LabelLayout {
    n_levels: usize,
    levels: Vec<Vec<NodeIdx>>,
    offsets: Vec<usize>,
    flat_of: Vec<usize>,
    flat_nodes: Vec<NodeIdx>,
    level_of: Vec<usize>,
    parent: Vec<Option<NodeIdx>>,
    children: Vec<Vec<NodeIdx>>,
    groups: Vec<Vec<NodeIdx>>,
    group_offsets: Vec<usize>,
    group_slot: Vec<usize>,
    group_of_parent: Vec<Option<usize>>,
}

impl LabelLayout {
    pub fn new(h: &Hierarchy) -> Result<Self> {
        h.require_tree()?;
        h.require_uniform_depth()?;
        let n = h.len();
        let levels: Vec<Vec<NodeIdx>> = h.levels().to_vec();
        let mut offsets = Vec::with_capacity(levels.len() + 1);
        let mut flat_of = vec![0; n];
        let mut flat_nodes = Vec::with_capacity(n);
        let mut acc = 0;
        for lv in &levels {
            offsets.push(acc);
            for &v in lv {
                flat_of[v] = flat_nodes.len();
                flat_nodes.push(v);
            }
            acc += lv.len();
        }
        offsets.push(acc);
        let parent: Vec<Option<NodeIdx>> = (0..n).map(|v| h.parents(v).first().copied()).collect();
        let children: Vec<Vec<NodeIdx>> = (0..n)
            .map(|v| {
                let mut c = h.children(v).to_vec();
                c.sort_by_key(|&x| flat_of[x]);
                c
            })
            .collect();
        let mut groups = vec![levels[0].clone()];
        let mut group_of_parent = vec![None; n];
        for &v in &flat_nodes {
            if !children[v].is_empty() {
                group_of_parent[v] = Some(groups.len());
                groups.push(children[v].clone());
            }
        }
        let mut group_offsets = Vec::with_capacity(groups.len());
        let mut group_slot = vec![0; n];
        let mut acc = 0;
        for g in &groups {
            group_offsets.push(acc);
            for (k, &v) in g.iter().enumerate() {
                group_slot[v] = acc + k;
            }
            acc += g.len();
        }
        Ok(LabelLayout {
            n_levels: levels.len(),
            level_of: (0..n).map(|v| h.level(v)).collect(),
            levels,
            offsets,
            flat_of,
            flat_nodes,
            parent,
            children,
            groups,
            group_offsets,
            group_slot,
            group_of_parent,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.flat_nodes.len()
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_leaves(&self) -> usize {
        self.levels[self.n_levels - 1].len()
    }

    /// Labels of level `i` (0-based) in block order.
    pub fn level(&self, i: usize) -> &[NodeIdx] {
        &self.levels[i]
    }

    pub fn level_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Position of `node` in the flat layout.
    pub fn flat_index(&self, node: NodeIdx) -> usize {
        self.flat_of[node]
    }

    pub fn flat_node(&self, j: usize) -> NodeIdx {
        self.flat_nodes[j]
    }

    /// Position of `node` within its level block.
    pub fn level_pos(&self, node: NodeIdx) -> usize {
        self.flat_of[node] - self.offsets[self.level_of[node] - 1]
    }

    pub fn groups(&self) -> &[Vec<NodeIdx>] {
        &self.groups
    }

    /// Position of `node` in the group layout.
    pub fn group_slot(&self, node: NodeIdx) -> usize {
        self.group_slot[node]
    }

    pub fn children(&self, node: NodeIdx) -> &[NodeIdx] {
        &self.children[node]
    }

    /// Root-first path ending at `node`.
    pub fn path(&self, node: NodeIdx) -> Vec<NodeIdx> {
        let mut p = vec![node];
        let mut v = node;
        while let Some(u) = self.parent[v] {
            p.push(u);
            v = u;
        }
        p.reverse();
        p
    }

    fn check_len(&self, x: &[f64], n: usize, what: &str) -> Result<()> {
        if x.len() != n {
            return Err(Error::Structural(format!("{what} has {} logits, layout needs {n}", x.len())));
        }
        Ok(())
    }

    fn check_path(&self, tau: &[NodeIdx]) -> Result<()> {
        if tau.len() != self.n_levels {
            return Err(Error::arg(format!("path has {} labels for {} levels", tau.len(), self.n_levels)));
        }
        for (i, &v) in tau.iter().enumerate() {
            if v >= self.n_labels() || self.level_of[v] != i + 1 {
                return Err(Error::arg(format!("path entry {i} is not a level-{} label", i + 1)));
            }
            if i > 0 && self.parent[v] != Some(tau[i - 1]) {
                return Err(Error::arg("path is not connected"));
            }
        }
        Ok(())
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.n_levels {
            return Err(Error::arg(format!("{} level weights for {} levels", w.len(), self.n_levels)));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy over all labels, each term optionally weighted.
pub fn ovr_loss_grad(layout: &LabelLayout, x: &[f64], y: &[bool], w: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let n = layout.n_labels();
    layout.check_len(x, n, "one-vs-rest logits")?;
    if y.len() != n {
        return Err(Error::arg("target length differs from label count"));
    }
    let ones = y.iter().filter(|&&b| b).count();
    if ones != layout.n_levels() {
        return Err(Error::arg(format!("target has {ones} positives, expected one per level ({})", layout.n_levels())));
    }
    let mut loss = 0.0;
    let mut g = vec![0.0; n];
    for j in 0..n {
        let wj = w.map_or(1.0, |w| w[j]);
        let t = if y[j] { 1.0 } else { 0.0 };
        loss += wj * (softplus(x[j]) - t * x[j]);
        g[j] = wj * (sigmoid(x[j]) - t) / n as f64;
    }
    Ok((loss / n as f64, g))
}

pub fn ovr_loss(layout: &LabelLayout, x: &[f64], y: &[bool], w: Option<&[f64]>) -> Result<f64> {
    Ok(ovr_loss_grad(layout, x, y, w)?.0)
}

/// Multi-hot target for a root-first path.
pub fn multi_hot(layout: &LabelLayout, tau: &[NodeIdx]) -> Vec<bool> {
    let mut y = vec![false; layout.n_labels()];
    tau.iter().for_each(|&v| y[layout.flat_index(v)] = true);
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// One threshold per class.
    #[default]
    Pcdb,
    /// One threshold shared by all classes.
    Ofadb,
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcdb" => Ok(ThresholdPolicy::Pcdb),
            "ofadb" => Ok(ThresholdPolicy::Ofadb),
            other => Err(Error::arg(format!("unknown threshold policy {other:?}"))),
        }
    }
}

/// Decision thresholds for one-vs-rest prediction: label `j` is predicted iff
/// `score_j > θ_j`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Thresholds {
    Untuned,
    Pcdb(#[serde(with = "crate::io::vec_f64")] Vec<f64>),
    Ofadb(#[serde(with = "crate::io::f64_or_string")] f64),
}

impl Thresholds {
    pub fn get(&self, j: usize) -> Result<f64> {
        match self {
            Thresholds::Untuned => Err(Error::State("one-vs-rest thresholds have not been tuned".into())),
            Thresholds::Pcdb(t) => t.get(j).copied().ok_or_else(|| Error::arg(format!("no threshold for class {j}"))),
            Thresholds::Ofadb(t) => Ok(*t),
        }
    }
}

pub fn ovr_predict(scores: &[f64], th: &Thresholds) -> Result<Vec<usize>> {
    if let Thresholds::Pcdb(t) = th {
        if t.len() != scores.len() {
            return Err(Error::arg(format!("{} thresholds for {} scores", t.len(), scores.len())));
        }
    }
    let mut out = Vec::new();
    for (j, &s) in scores.iter().enumerate() {
        if s > th.get(j)? {
            out.push(j);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedThresholds {
    pub thresholds: Thresholds,
    /// F1 per class (PCDB) or the pooled micro-F1 (OFADB) on the tuning data.
    pub f1: Vec<f64>,
    /// Classes without a positive example; their threshold is `+∞`.
    pub no_positives: Vec<usize>,
}

fn f1_counts(tp: usize, fp: usize, n_pos: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (tp + fp + n_pos) as f64
    }
}

/// Threshold maximizing F1 for "positive iff score > θ" over candidates
/// `+∞`, midpoints of sorted unique scores and `−∞`; ties go to the smaller
/// threshold.
fn best_upper_threshold(scored: &mut [(f64, bool)]) -> (f64, f64) {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = scored.iter().filter(|s| s.1).count();
    let mut best = (f64::INFINITY, 0.0);
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scored.len() {
        let v = scored[i].0;
        while i < scored.len() && scored[i].0 == v {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let theta = match scored.get(i) {
            Some(&(next, _)) => {
                let mid = next + (v - next) / 2.0;
                if mid >= v {
                    next
                } else {
                    mid
                }
            }
            None => f64::NEG_INFINITY,
        };
        let f = f1_counts(tp, fp, n_pos);
        if f >= best.1 && (f > best.1 || theta < best.0) {
            best = (theta, f);
        }
    }
    best
}

/// Tunes one-vs-rest thresholds on validation scores (rows are samples).
pub fn tune_ovr_thresholds(
    scores: &[Vec<f64>],
    targets: &[Vec<bool>],
    policy: ThresholdPolicy,
) -> Result<TunedThresholds> {
    if scores.is_empty() || scores.len() != targets.len() {
        return Err(Error::arg("threshold tuning needs matching, non-empty scores and targets"));
    }
    let n = scores[0].len();
    if scores.iter().chain(std::iter::empty()).any(|s| s.len() != n) || targets.iter().any(|t| t.len() != n) {
        return Err(Error::arg("ragged score or target rows"));
    }
    let no_positives: Vec<usize> = (0..n).filter(|&j| targets.iter().all(|t| !t[j])).collect();
    match policy {
        ThresholdPolicy::Pcdb => {
            let mut th = vec![f64::INFINITY; n];
            let mut f1 = vec![0.0; n];
            for j in 0..n {
                if no_positives.contains(&j) {
                    continue;
                }
                let mut col: Vec<(f64, bool)> = scores.iter().zip(targets).map(|(s, t)| (s[j], t[j])).collect();
                let (t, f) = best_upper_threshold(&mut col);
                th[j] = t;
                f1[j] = f;
            }
            Ok(TunedThresholds { thresholds: Thresholds::Pcdb(th), f1, no_positives })
        }
        ThresholdPolicy::Ofadb => {
            let mut all: Vec<(f64, bool)> =
                scores.iter().zip(targets).flat_map(|(s, t)| s.iter().copied().zip(t.iter().copied())).collect();
            let (t, f) = best_upper_threshold(&mut all);
            Ok(TunedThresholds { thresholds: Thresholds::Ofadb(t), f1: vec![f], no_positives })
        }
    }
}

/// `Σ_i w_i · CE(softmax(x_i), τ_i)` over flat-layout logits.
pub fn per_level_loss_grad(layout: &LabelLayout, x: &[f64], tau: &[NodeIdx], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    layout.check_len(x, layout.n_labels(), "per-level logits")?;
    layout.check_weights(w)?;
    if tau.len() != layout.n_levels() {
        return Err(Error::arg("path length differs from level count"));
    }
    let mut loss = 0.0;
    let mut g = vec![0.0; x.len()];
    for i in 0..layout.n_levels() {
        let r = layout.level_range(i);
        let t = tau[i];
        if t >= layout.n_labels() || layout.level_of[t] != i + 1 {
            return Err(Error::arg(format!("target {t} is not a level-{} label", i + 1)));
        }
        if w[i] == 0.0 {
            continue;
        }
        let block = &x[r.clone()];
        let l = lse(block);
        let k = layout.level_pos(t);
        loss += w[i] * (l - block[k]);
        for (j, v) in block.iter().enumerate() {
            g[r.start + j] += w[i] * ((v - l).exp() - if j == k { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, g))
}

pub fn per_level_loss(layout: &LabelLayout, x: &[f64], tau: &[NodeIdx], w: &[f64]) -> Result<f64> {
    Ok(per_level_loss_grad(layout, x, tau, w)?.0)
}

/// Per-level probabilities obtained by summing children bottom-up.
pub fn marginalize_up(layout: &LabelLayout, p_leaf: &[f64]) -> Result<Vec<Vec<f64>>> {
    layout.check_len(p_leaf, layout.n_leaves(), "leaf distribution")?;
    let s: f64 = p_leaf.iter().sum();
    if (s - 1.0).abs() > 1e-9 || p_leaf.iter().any(|&p| p < 0.0) {
        return Err(Error::arg(format!("leaf distribution sums to {s}")));
    }
    let n_levels = layout.n_levels();
    let mut out = vec![Vec::new(); n_levels];
    out[n_levels - 1] = p_leaf.to_vec();
    for i in (0..n_levels - 1).rev() {
        let below = &out[i + 1];
        let lv: Vec<f64> = layout
            .level(i)
            .iter()
            .map(|&v| layout.children(v).iter().map(|&c| below[layout.level_pos(c)]).sum())
            .collect();
        out[i] = lv;
    }
    Ok(out)
}

/// Leaf positions under each label, per level.
fn leaves_under(layout: &LabelLayout, v: NodeIdx) -> Vec<usize> {
    let mut stack = vec![v];
    let mut out = Vec::new();
    while let Some(u) = stack.pop() {
        if layout.children(u).is_empty() {
            out.push(layout.level_pos(u));
        } else {
            stack.extend_from_slice(layout.children(u));
        }
    }
    out.sort_unstable();
    out
}

/// `−Σ_{i ∈ mask} w_i log p_i[τ_i]` with `p_i` marginalized from the leaf softmax.
/// `mask` holds 1-based levels.
pub fn marginalization_loss_grad(
    layout: &LabelLayout,
    x_leaf: &[f64],
    leaf: NodeIdx,
    w: &[f64],
    mask: &[usize],
) -> Result<(f64, Vec<f64>)> {
    layout.check_len(x_leaf, layout.n_leaves(), "leaf logits")?;
    layout.check_weights(w)?;
    if mask.is_empty() {
        return Err(Error::arg("the loss-level mask is empty"));
    }
    if mask.iter().any(|&l| l == 0 || l > layout.n_levels()) {
        return Err(Error::arg("loss-level mask refers to a missing level"));
    }
    if leaf >= layout.n_labels() || layout.level_of[leaf] != layout.n_levels() {
        return Err(Error::arg("target is not a leaf"));
    }
    let tau = layout.path(leaf);
    let l_all = lse(x_leaf);
    let p: Vec<f64> = x_leaf.iter().map(|v| (v - l_all).exp()).collect();
    let mut loss = 0.0;
    let mut g = vec![0.0; x_leaf.len()];
    let mut levels: Vec<usize> = mask.to_vec();
    levels.sort_unstable();
    levels.dedup();
    for lvl in levels {
        let wi = w[lvl - 1];
        if wi == 0.0 {
            continue;
        }
        let a = leaves_under(layout, tau[lvl - 1]);
        let l_a = lse_at(x_leaf, &a);
        loss += wi * (l_all - l_a);
        for (j, pj) in p.iter().enumerate() {
            g[j] += wi * pj;
        }
        for &j in &a {
            g[j] -= wi * (x_leaf[j] - l_a).exp();
        }
    }
    Ok((loss, g))
}

pub fn marginalization_loss(
    layout: &LabelLayout,
    x_leaf: &[f64],
    leaf: NodeIdx,
    w: &[f64],
    mask: &[usize],
) -> Result<f64> {
    Ok(marginalization_loss_grad(layout, x_leaf, leaf, w, mask)?.0)
}

/// Level 1 uses a full softmax; level `i > 1` a softmax over the children of
/// the true level-`(i−1)` label.
pub fn masked_loss_grad(layout: &LabelLayout, x: &[f64], tau: &[NodeIdx], w: &[f64]) -> Result<(f64, Vec<f64>)> {
    layout.check_len(x, layout.n_labels(), "per-level logits")?;
    layout.check_weights(w)?;
    layout.check_path(tau)?;
    let mut loss = 0.0;
    let mut g = vec![0.0; x.len()];
    for i in 0..layout.n_levels() {
        if w[i] == 0.0 {
            continue;
        }
        let cand: Vec<usize> = if i == 0 {
            layout.level_range(0).collect()
        } else {
            layout.children(tau[i - 1]).iter().map(|&c| layout.flat_index(c)).collect()
        };
        let l = lse_at(x, &cand);
        let t = layout.flat_index(tau[i]);
        loss += w[i] * (l - x[t]);
        for &j in &cand {
            g[j] += w[i] * (x[j] - l).exp();
        }
        g[t] -= w[i];
    }
    Ok((loss, g))
}

pub fn masked_loss(layout: &LabelLayout, x: &[f64], tau: &[NodeIdx], w: &[f64]) -> Result<f64> {
    Ok(masked_loss_grad(layout, x, tau, w)?.0)
}

fn argmax_over(x: &[f64], idx: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for j in idx {
        if best.is_none_or(|b| x[j] > x[b]) {
            best = Some(j);
        }
    }
    best.expect("non-empty candidate set")
}

/// Root-to-leaf path: global argmax at level 1, then argmax among the
/// children of the previous prediction.
pub fn masked_predict(layout: &LabelLayout, x: &[f64]) -> Result<Vec<NodeIdx>> {
    layout.check_len(x, layout.n_labels(), "per-level logits")?;
    let mut path = Vec::with_capacity(layout.n_levels());
    let first = argmax_over(x, layout.level_range(0));
    path.push(layout.flat_node(first));
    for _ in 1..layout.n_levels() {
        let prev = *path.last().expect("non-empty");
        let j = argmax_over(x, layout.children(prev).iter().map(|&c| layout.flat_index(c)));
        path.push(layout.flat_node(j));
    }
    Ok(path)
}

/// Independent argmax per level block.
pub fn per_level_predict(layout: &LabelLayout, x: &[f64]) -> Result<Vec<NodeIdx>> {
    layout.check_len(x, layout.n_labels(), "per-level logits")?;
    Ok((0..layout.n_levels()).map(|i| layout.flat_node(argmax_over(x, layout.level_range(i)))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsOutput {
    /// Joint probability of each leaf, in leaf-block order.
    pub leaf_joint: Vec<f64>,
    /// Marginal probability of every label, per level block.
    pub per_level: Vec<Vec<f64>>,
}

/// Conditional softmax per sibling group; a label's probability is the
/// product of conditionals along its path.
pub fn hsoftmax(layout: &LabelLayout, x: &[f64]) -> Result<HsOutput> {
    layout.check_len(x, layout.n_labels(), "sibling-group logits")?;
    let mut cond = vec![0.0; x.len()];
    for (g, nodes) in layout.groups().iter().enumerate() {
        let off = layout.group_offsets[g];
        let sm = softmax(&x[off..off + nodes.len()]);
        cond[off..off + nodes.len()].copy_from_slice(&sm);
    }
    let mut per_level: Vec<Vec<f64>> = Vec::with_capacity(layout.n_levels());
    for i in 0..layout.n_levels() {
        let lv: Vec<f64> = layout
            .level(i)
            .iter()
            .map(|&v| {
                let c = cond[layout.group_slot(v)];
                match layout.parent[v] {
                    Some(u) => per_level[i - 1][layout.level_pos(u)] * c,
                    None => c,
                }
            })
            .collect();
        per_level.push(lv);
    }
    Ok(HsOutput { leaf_joint: per_level[layout.n_levels() - 1].clone(), per_level })
}

/// `−log P(leaf)` under the hierarchical softmax and its gradient.
pub fn hsoftmax_loss_grad(layout: &LabelLayout, x: &[f64], leaf: NodeIdx) -> Result<(f64, Vec<f64>)> {
    layout.check_len(x, layout.n_labels(), "sibling-group logits")?;
    if leaf >= layout.n_labels() || layout.level_of[leaf] != layout.n_levels() {
        return Err(Error::arg("target is not a leaf"));
    }
    let mut loss = 0.0;
    let mut g = vec![0.0; x.len()];
    for v in layout.path(leaf) {
        let grp = match layout.parent[v] {
            Some(u) => layout.group_of_parent[u].expect("internal node owns a group"),
            None => 0,
        };
        let off = layout.group_offsets[grp];
        let len = layout.groups[grp].len();
        let block = &x[off..off + len];
        let l = lse(block);
        let t = layout.group_slot(v);
        loss += l - x[t];
        for j in 0..len {
            g[off + j] += (block[j] - l).exp();
        }
        g[t] -= 1.0;
    }
    Ok((loss, g))
}

pub fn hsoftmax_loss(layout: &LabelLayout, x: &[f64], leaf: NodeIdx) -> Result<f64> {
    Ok(hsoftmax_loss_grad(layout, x, leaf)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    OneVsRest,
    PerLevel,
    Marginalization,
    Masked,
    Hsoftmax,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::OneVsRest => "ovr",
            HeadKind::PerLevel => "per_level",
            HeadKind::Marginalization => "marginalization",
            HeadKind::Masked => "masked",
            HeadKind::Hsoftmax => "hsoftmax",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ovr" | "one_vs_rest" => Ok(HeadKind::OneVsRest),
            "per_level" => Ok(HeadKind::PerLevel),
            "marginalization" | "marg" => Ok(HeadKind::Marginalization),
            "masked" => Ok(HeadKind::Masked),
            "hsoftmax" => Ok(HeadKind::Hsoftmax),
            other => Err(Error::arg(format!("unknown head {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub level_weights: Vec<f64>,
    /// 1-based levels contributing to the loss.
    pub loss_levels: Vec<usize>,
    /// Per-label loss multipliers, indexed by node.
    pub class_weights: Option<Vec<f64>>,
    pub threshold_policy: ThresholdPolicy,
}

impl HeadConfig {
    pub fn new(kind: HeadKind, n_levels: usize) -> Self {
        HeadConfig {
            kind,
            level_weights: vec![1.0; n_levels],
            loss_levels: (1..=n_levels).collect(),
            class_weights: None,
            threshold_policy: ThresholdPolicy::Pcdb,
        }
    }

    /// Inverse-frequency weights normalized per level to mean one.
    pub fn with_class_weights(
        mut self,
        h: &Hierarchy,
        counts: &[u64],
        scheme: crate::hierarchy::WeightScheme,
    ) -> Result<Self> {
        if counts.len() != h.len() {
            return Err(Error::arg("class counts must cover every label"));
        }
        let mut w = vec![0.0; h.len()];
        for nodes in h.levels() {
            let c: Vec<u64> = nodes.iter().map(|&v| counts[v]).collect();
            let lw = crate::hierarchy::class_weights(&c, scheme)?;
            for (&v, x) in nodes.iter().zip(lw) {
                w[v] = x * nodes.len() as f64;
            }
        }
        self.class_weights = Some(w);
        Ok(self)
    }

    pub fn validate(&self, layout: &LabelLayout) -> Result<()> {
        layout.check_weights(&self.level_weights)?;
        if self.loss_levels.is_empty() {
            return Err(Error::Config("loss_levels is empty".into()));
        }
        if self.loss_levels.iter().any(|&l| l == 0 || l > layout.n_levels()) {
            return Err(Error::Config("loss_levels refers to a missing level".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != layout.n_labels() {
                return Err(Error::Config("class_weights must cover every label".into()));
            }
        }
        Ok(())
    }

    /// Number of logits the head consumes.
    pub fn logit_dim(&self, layout: &LabelLayout) -> usize {
        match self.kind {
            HeadKind::Marginalization => layout.n_leaves(),
            _ => layout.n_labels(),
        }
    }

    fn masked_weights(&self, layout: &LabelLayout, tau: &[NodeIdx]) -> Vec<f64> {
        (0..layout.n_levels())
            .map(|i| {
                let on = self.loss_levels.contains(&(i + 1));
                let cw = self.class_weights.as_ref().map_or(1.0, |c| c[tau[i]]);
                if on {
                    self.level_weights[i] * cw
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Loss and logit gradient for one sample with true leaf `leaf`.
    pub fn loss_grad(&self, layout: &LabelLayout, x: &[f64], leaf: NodeIdx) -> Result<(f64, Vec<f64>)> {
        let tau = layout.path(leaf);
        if tau.len() != layout.n_levels() {
            return Err(Error::arg("target is not a leaf"));
        }
        match self.kind {
            HeadKind::OneVsRest => {
                let y = multi_hot(layout, &tau);
                let w: Option<Vec<f64>> = self
                    .class_weights
                    .as_ref()
                    .map(|c| (0..layout.n_labels()).map(|j| c[layout.flat_node(j)]).collect());
                ovr_loss_grad(layout, x, &y, w.as_deref())
            }
            HeadKind::PerLevel => per_level_loss_grad(layout, x, &tau, &self.masked_weights(layout, &tau)),
            HeadKind::Masked => masked_loss_grad(layout, x, &tau, &self.masked_weights(layout, &tau)),
            HeadKind::Marginalization => {
                let w: Vec<f64> = (0..layout.n_levels())
                    .map(|i| self.level_weights[i] * self.class_weights.as_ref().map_or(1.0, |c| c[tau[i]]))
                    .collect();
                marginalization_loss_grad(layout, x, leaf, &w, &self.loss_levels)
            }
            HeadKind::Hsoftmax => {
                let (l, mut g) = hsoftmax_loss_grad(layout, x, leaf)?;
                let cw = self.class_weights.as_ref().map_or(1.0, |c| c[leaf]);
                g.iter_mut().for_each(|v| *v *= cw);
                Ok((l * cw, g))
            }
        }
    }

    /// Per-level marginal probabilities, for the heads that define them.
    pub fn level_probabilities(&self, layout: &LabelLayout, x: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
        match self.kind {
            HeadKind::OneVsRest => Ok(None),
            HeadKind::PerLevel | HeadKind::Masked => {
                layout.check_len(x, layout.n_labels(), "per-level logits")?;
                Ok(Some((0..layout.n_levels()).map(|i| softmax(&x[layout.level_range(i)])).collect()))
            }
            HeadKind::Marginalization => {
                layout.check_len(x, layout.n_leaves(), "leaf logits")?;
                let p = softmax(x);
                let s: f64 = p.iter().sum();
                let p: Vec<f64> = p.iter().map(|v| v / s).collect();
                Ok(Some(marginalize_up(layout, &p)?))
            }
            HeadKind::Hsoftmax => Ok(Some(hsoftmax(layout, x)?.per_level)),
        }
    }

    /// Predicted label set (node indices).
    pub fn predict(&self, layout: &LabelLayout, x: &[f64], th: &Thresholds) -> Result<Vec<NodeIdx>> {
        match self.kind {
            HeadKind::OneVsRest => Ok(ovr_predict(x, th)?.into_iter().map(|j| layout.flat_node(j)).collect()),
            HeadKind::PerLevel => per_level_predict(layout, x),
            HeadKind::Masked => masked_predict(layout, x),
            HeadKind::Marginalization | HeadKind::Hsoftmax => {
                let probs = self.level_probabilities(layout, x)?.expect("probabilistic head");
                Ok(probs.iter().enumerate().map(|(i, p)| layout.level(i)[argmax_over(p, 0..p.len())]).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests;
