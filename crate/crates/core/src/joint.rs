//! Joint embedding of feature-vector items with the label hierarchy, and
//! classification by minimum order violation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{exp0, exp0_vjp, EnergyModel, ModelKind};
use crate::hierarchy::{Edge, Hierarchy, NodeIdx, SamplingGraph};
use crate::metrics::{micro_macro, ConfusionCounts};
use crate::optim::{OptimizerKind, OptimizerState, ParamSpace};
use crate::trainer::engine::{self, EngineSpec, EpochEval, ItemParams, Params};
use crate::trainer::{EmbeddingTable, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub leaf: NodeIdx,
    pub feature: Vec<f64>,
}

/// Items with features and a leaf label each.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSet {
    items: Vec<Item>,
    d_f: usize,
}

impl ItemSet {
    pub fn new(h: &Hierarchy, items: Vec<Item>) -> Result<Self> {
        let d_f = items.first().map_or(0, |i| i.feature.len());
        let deepest = h.n_levels();
        let mut seen = std::collections::HashSet::new();
        for it in &items {
            if it.feature.len() != d_f {
                return Err(Error::arg(format!("item {} has {} features, expected {d_f}", it.id, it.feature.len())));
            }
            if it.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("item {} has a non-finite feature", it.id)));
            }
            if it.leaf >= h.len() || h.level(it.leaf) != deepest {
                return Err(Error::arg(format!("item {} does not reference a final-level label", it.id)));
            }
            if !seen.insert(it.id.as_str()) {
                return Err(Error::arg(format!("duplicate item id {}", it.id)));
            }
        }
        Ok(ItemSet { items, d_f })
    }

    /// Builds items from `(item_id, leaf_label_id, feature)` records.
    pub fn from_records(h: &Hierarchy, records: Vec<(String, String, Vec<f64>)>) -> Result<Self> {
        let items = records
            .into_iter()
            .map(|(id, leaf, feature)| {
                let leaf = h
                    .index_of(&leaf)
                    .ok_or_else(|| Error::arg(format!("item {id} references unknown label {leaf:?}")))?;
                Ok(Item { id, leaf, feature })
            })
            .collect::<Result<Vec<_>>>()?;
        ItemSet::new(h, items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn d_f(&self) -> usize {
        self.d_f
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, i: usize) -> &Item {
        &self.items[i]
    }

    /// Root-first label path of item `i`.
    pub fn path(&self, h: &Hierarchy, i: usize) -> Result<Vec<NodeIdx>> {
        h.path_to(self.items[i].leaf)
    }

    /// The items at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> ItemSet {
        ItemSet { items: idx.iter().map(|&i| self.items[i].clone()).collect(), d_f: self.d_f }
    }
}

/// Linear map from features to the embedding space: `W f`, or `exp_0(W f)`
/// for ball models.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemMap {
    d: usize,
    d_f: usize,
    /// Row-major `d × d_f`.
    w: Vec<f64>,
    ball: bool,
    eps_ball: f64,
}

impl ItemMap {
    pub fn new(d: usize, d_f: usize, w: Vec<f64>, model: &EnergyModel) -> Result<Self> {
        if w.len() != d * d_f {
            return Err(Error::arg(format!("W has {} entries, expected {d}x{d_f}", w.len())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("W has non-finite entries".into()));
        }
        Ok(ItemMap { d, d_f, w, ball: model.is_ball(), eps_ball: model.eps_ball })
    }

    pub fn zeros(d: usize, d_f: usize, model: &EnergyModel) -> Self {
        ItemMap::new(d, d_f, vec![0.0; d * d_f], model).expect("zero map is valid")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_f(&self) -> usize {
        self.d_f
    }

    pub fn is_ball(&self) -> bool {
        self.ball
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn set_weights(&mut self, w: Vec<f64>) {
        debug_assert_eq!(w.len(), self.w.len());
        self.w = w;
    }

    fn linear(&self, f: &[f64]) -> Vec<f64> {
        self.w.chunks(self.d_f).map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum()).collect()
    }

    pub(crate) fn embed_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let z = self.linear(f);
        if self.ball {
            exp0(&z, self.eps_ball)
        } else {
            z
        }
    }

    /// Embedding of one feature vector.
    pub fn embed(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.d_f {
            return Err(Error::arg(format!("feature has dimension {}, map expects {}", f.len(), self.d_f)));
        }
        Ok(self.embed_unchecked(f))
    }

    /// `∂L/∂W` given `∂L/∂embedding` for each item (rows of `item_grad`).
    pub(crate) fn weight_grad(&self, features: &[f64], item_grad: &[f64]) -> Result<Vec<f64>> {
        let n = features.len() / self.d_f;
        if item_grad.len() != n * self.d {
            return Err(Error::arg("item gradient does not match the item count"));
        }
        let mut gw = vec![0.0; self.w.len()];
        for k in 0..n {
            let g = &item_grad[k * self.d..(k + 1) * self.d];
            if g.iter().all(|&c| c == 0.0) {
                continue;
            }
            let f = &features[k * self.d_f..(k + 1) * self.d_f];
            let gz = if self.ball { exp0_vjp(&self.linear(f), g) } else { g.to_vec() };
            for (r, gr) in gz.iter().enumerate() {
                for (c, fc) in f.iter().enumerate() {
                    gw[r * self.d_f + c] += gr * fc;
                }
            }
        }
        Ok(gw)
    }
}

/// Embeds one item's feature vector.
pub fn embed_item(map: &ItemMap, feature: &[f64]) -> Result<Vec<f64>> {
    map.embed(feature)
}

/// Labels plus item nodes one level below the deepest label level.
#[derive(Debug, Clone)]
pub struct JointGraph {
    pub n_labels: usize,
    pub n_items: usize,
    pub ids: Vec<String>,
    pub levels: Vec<Vec<NodeIdx>>,
    /// Label-label closure edges.
    pub label_edges: Vec<Edge>,
    /// Ancestor → item edges.
    pub item_edges: Vec<Edge>,
}

impl JointGraph {
    pub fn closure(&self) -> impl Iterator<Item = Edge> + '_ {
        self.label_edges.iter().chain(&self.item_edges).copied()
    }

    pub fn is_item(&self, node: NodeIdx) -> bool {
        node >= self.n_labels
    }

    pub fn sampling_graph(&self) -> SamplingGraph {
        SamplingGraph::new(self.ids.clone(), self.levels.clone(), self.closure())
    }
}

/// Adds every item as a node with an edge from each label on its path.
pub fn build_joint_graph(h: &Hierarchy, items: &ItemSet) -> Result<JointGraph> {
    let n_labels = h.len();
    let mut ids: Vec<String> = h.nodes().iter().map(|n| n.id.clone()).collect();
    let mut levels = h.levels().to_vec();
    let mut item_level = Vec::with_capacity(items.len());
    let mut item_edges = Vec::new();
    for (k, it) in items.items().iter().enumerate() {
        if it.leaf >= n_labels || h.level(it.leaf) != h.n_levels() {
            return Err(Error::arg(format!("item {} does not reference a leaf", it.id)));
        }
        let node = n_labels + k;
        ids.push(it.id.clone());
        item_level.push(node);
        let mut anc = h.ancestors(it.leaf);
        anc.push(it.leaf);
        anc.sort_unstable();
        item_edges.extend(anc.into_iter().map(|a| (a, node)));
    }
    if !item_level.is_empty() {
        levels.push(item_level);
    }
    Ok(JointGraph {
        n_labels,
        n_items: items.len(),
        ids,
        levels,
        label_edges: h.transitive_closure().into_iter().collect(),
        item_edges,
    })
}

fn check_aligned(labels: &EmbeddingTable, h: &Hierarchy) -> Result<()> {
    if labels.len() != h.len() || labels.ids().iter().zip(h.nodes()).any(|(a, n)| *a != n.id) {
        return Err(Error::arg("label table is not aligned with the hierarchy"));
    }
    Ok(())
}

fn level_energies(m: &EnergyModel, labels: &EmbeddingTable, item: &[f64], nodes: &[NodeIdx]) -> Result<Vec<f64>> {
    nodes.iter().map(|&l| m.energy_projected(labels.row(l), item)).collect()
}

/// Per-level argmin of `E(label, item)`; ties go to the smaller node index.
pub fn classify(m: &EnergyModel, labels: &EmbeddingTable, item_emb: &[f64], h: &Hierarchy) -> Result<Vec<NodeIdx>> {
    check_aligned(labels, h)?;
    let mut out = Vec::with_capacity(h.n_levels());
    for (i, nodes) in h.levels().iter().enumerate() {
        if nodes.is_empty() {
            return Err(Error::Structural(format!("level {} is empty", i + 1)));
        }
        let e = level_energies(m, labels, item_emb, nodes)?;
        let mut best = 0;
        for j in 1..nodes.len() {
            if e[j] < e[best] || (e[j] == e[best] && nodes[j] < nodes[best]) {
                best = j;
            }
        }
        out.push(nodes[best]);
    }
    Ok(out)
}

/// Level-`level` labels (1-based) sorted by ascending energy, truncated to
/// `k`. The flag is set when `k` exceeds the level size.
pub fn rank_labels(
    m: &EnergyModel,
    labels: &EmbeddingTable,
    item_emb: &[f64],
    h: &Hierarchy,
    level: usize,
    k: usize,
) -> Result<(Vec<NodeIdx>, bool)> {
    check_aligned(labels, h)?;
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if level == 0 || level > h.n_levels() {
        return Err(Error::arg(format!("level {level} out of range")));
    }
    let nodes = h.level_nodes(level);
    let e = level_energies(m, labels, item_emb, nodes)?;
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| e[a].total_cmp(&e[b]).then(nodes[a].cmp(&nodes[b])));
    let flagged = k > nodes.len();
    Ok((order.into_iter().take(k).map(|j| nodes[j]).collect(), flagged))
}

/// Rule for which corrupted edges are never used as joint negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeRule {
    /// Both endpoints are items.
    #[default]
    NoItemItem,
    /// Either endpoint is an item.
    NoItemEndpoint,
}

impl std::str::FromStr for NegativeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_item_item" => Ok(NegativeRule::NoItemItem),
            "no_item_endpoint" => Ok(NegativeRule::NoItemEndpoint),
            other => Err(Error::arg(format!("unknown negative rule {other:?}"))),
        }
    }
}

impl NegativeRule {
    pub fn forbids(self, n_labels: usize, e: Edge) -> bool {
        match self {
            NegativeRule::NoItemItem => e.0 >= n_labels && e.1 >= n_labels,
            NegativeRule::NoItemEndpoint => e.0 >= n_labels || e.1 >= n_labels,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct JointConfig {
    /// Label group settings plus the shared loop settings.
    pub base: TrainConfig,
    pub item_optimizer: OptimizerKind,
    pub item_lr: f64,
    pub negative_rule: NegativeRule,
    /// Keep `W` at its initial value.
    pub freeze_map: bool,
    /// Starting `W`; random when absent.
    #[serde(skip)]
    pub init_map: Option<ItemMap>,
}

impl JointConfig {
    pub fn new(kind: ModelKind, dim: usize) -> Self {
        let mut base = TrainConfig::labels(kind, dim);
        base.nonbasic_train_fraction = 1.0;
        match kind {
            ModelKind::HyperbolicCone => {
                base.optimizer = OptimizerKind::Adam;
                base.param_space = ParamSpace::BallTangentAtZero;
                base.lr = 1e-4;
                base.alpha = 0.1;
            }
            ModelKind::EuclideanCone => {
                base.optimizer = OptimizerKind::Adam;
                base.param_space = ParamSpace::Flat;
                base.lr = 1e-2;
                base.alpha = 0.1;
            }
            ModelKind::OrderEmbedding => {
                base.optimizer = OptimizerKind::Adam;
                base.param_space = ParamSpace::Flat;
                base.lr = 1e-2;
                base.alpha = 1.0;
            }
        }
        JointConfig {
            base,
            item_optimizer: OptimizerKind::Adam,
            item_lr: 1e-3,
            negative_rule: NegativeRule::NoItemItem,
            freeze_map: false,
            init_map: None,
        }
    }
}

/// Item indices per split.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ItemSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-leaf stratified split: each leaf sends `floor(frac · n_leaf)` items
/// to val and to test.
pub fn split_items(items: &ItemSet, val_frac: f64, test_frac: f64, seed: u64) -> Result<ItemSplit> {
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !ok(val_frac) || !ok(test_frac) || val_frac + test_frac > 1.0 {
        return Err(Error::arg(format!("invalid item split fractions {val_frac}, {test_frac}")));
    }
    let mut by_leaf: BTreeMap<NodeIdx, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.items().iter().enumerate() {
        by_leaf.entry(it.leaf).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ItemSplit { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (_, mut idx) in by_leaf {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let nv = (val_frac * n as f64).floor() as usize;
        let nt = ((test_frac * n as f64).floor() as usize).min(n - nv);
        s.val.extend_from_slice(&idx[..nv]);
        s.test.extend_from_slice(&idx[nv..nv + nt]);
        s.train.extend_from_slice(&idx[nv + nt..]);
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    Ok(s)
}

/// Gaussian-cluster items: each label gets a random offset whose scale
/// shrinks with depth, a leaf's centre is the sum of offsets along its path,
/// and items add isotropic noise around the centre.
pub fn gen_items(h: &Hierarchy, per_leaf: usize, d_f: usize, noise: f64, seed: u64) -> Result<ItemSet> {
    if d_f == 0 {
        return Err(Error::arg("feature dimension must be positive"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::arg(format!("noise must be non-negative (got {noise})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let offsets: Vec<Vec<f64>> = (0..h.len())
        .map(|n| {
            let scale = 2.0 / h.level(n) as f64;
            (0..d_f).map(|_| scale * unit.sample(&mut rng)).collect()
        })
        .collect();
    let mut items = Vec::with_capacity(per_leaf * h.leaves().len());
    for leaf in h.level_nodes(h.n_levels()).to_vec() {
        let path = h.path_to(leaf)?;
        let centre: Vec<f64> = (0..d_f).map(|c| path.iter().map(|&n| offsets[n][c]).sum()).collect();
        for _ in 0..per_leaf {
            let feature = centre.iter().map(|m| m + noise * unit.sample(&mut rng)).collect();
            items.push(Item { id: format!("i{}", items.len()), leaf, feature });
        }
    }
    ItemSet::new(h, items)
}

/// Per-level predictions for every item in `items`.
pub fn classify_items(
    m: &EnergyModel,
    labels: &EmbeddingTable,
    map: &ItemMap,
    h: &Hierarchy,
    items: &ItemSet,
) -> Result<Vec<Vec<NodeIdx>>> {
    use rayon::prelude::*;
    items.items().par_iter().map(|it| classify(m, labels, &map.embed(&it.feature)?, h)).collect()
}

/// Micro-F1 of per-level predictions against the items' true paths.
pub fn classification_micro_f1(h: &Hierarchy, items: &ItemSet, preds: &[Vec<NodeIdx>]) -> Result<f64> {
    let mut cc = ConfusionCounts::new(h.len());
    for (i, p) in preds.iter().enumerate() {
        cc.add_sample(p, &items.path(h, i)?);
    }
    Ok(micro_macro(&cc).0.f1)
}

/// Trains label embeddings and the item map on the joint graph.
pub fn train_joint(
    h: &Hierarchy,
    items: &ItemSet,
    split: &ItemSplit,
    cfg: &JointConfig,
) -> Result<(EmbeddingTable, ItemMap, TrainReport)> {
    let base = &cfg.base;
    base.validate()?;
    h.require_tree()?;
    if !(cfg.item_lr > 0.0) {
        return Err(Error::Config("item_lr must be positive".into()));
    }
    if items.is_empty() || split.train.is_empty() {
        return Err(Error::Config("joint training needs train items".into()));
    }
    let ids: Vec<String> = h.nodes().iter().map(|n| n.id.clone()).collect();
    let train = items.subset(&split.train);
    let val = items.subset(&split.val);
    let test = items.subset(&split.test);
    let jg = build_joint_graph(h, &train)?;
    let graph = jg.sampling_graph();
    let positives: Vec<Edge> = jg.closure().collect();

    let mut init_rng = engine::stream(base.seed, engine::STREAM_INIT);
    let warm = base.init.as_ref().map(|t| t.reindexed(&ids)).transpose()?;
    let labels = engine::init_labels(&base.model, base.param_space, h.len(), base.dim, warm.as_ref(), &mut init_rng)?;
    let label_opt = engine::label_optimizer(&base.model, base.optimizer, base.param_space, base.lr, labels.len())?;
    let map = match &cfg.init_map {
        Some(m) => {
            if m.d() != base.dim || m.d_f() != items.d_f() || m.is_ball() != base.model.is_ball() {
                return Err(Error::Config("initial item map does not match the model".into()));
            }
            m.clone()
        }
        None => {
            use rand::Rng;
            let w = (0..base.dim * items.d_f()).map(|_| init_rng.gen_range(-0.001..0.001)).collect();
            ItemMap::new(base.dim, items.d_f(), w, &base.model)?
        }
    };
    let opt = if cfg.freeze_map {
        None
    } else {
        if cfg.item_optimizer == OptimizerKind::Rsgd {
            return Err(Error::Config("the item map is flat; RSGD cannot update it".into()));
        }
        Some(OptimizerState::new(cfg.item_optimizer, ParamSpace::Flat, cfg.item_lr, map.weights().len())?)
    };
    let features: Vec<f64> = train.items().iter().flat_map(|it| it.feature.iter().copied()).collect();
    let mut params = Params {
        model: base.model,
        dim: base.dim,
        n_labels: h.len(),
        labels,
        label_space: base.param_space,
        label_opt,
        items: Some(ItemParams { features, map, opt }),
    };

    let n_labels = h.len();
    let rule = cfg.negative_rule;
    let spec = EngineSpec {
        graph: &graph,
        positives: &positives,
        alpha: base.alpha,
        epochs: base.epochs,
        batch_size: base.batch_size,
        n_left: base.n_left,
        n_right: base.n_right,
        pick_per_level: base.pick_per_level,
        seed: base.seed,
        forbid: move |e: Edge| rule.forbids(n_labels, e),
    };
    let evaluate = |p: &Params, _epoch: usize| -> Result<EpochEval> {
        let table = p.label_table(&ids)?;
        let map = &p.items.as_ref().expect("joint params carry a map").map;
        let score = |set: &ItemSet| -> Result<Option<f64>> {
            if set.is_empty() {
                return Ok(None);
            }
            let preds = classify_items(&p.model, &table, map, h, set)?;
            Ok(Some(classification_micro_f1(h, set, &preds)?))
        };
        let reconstruction = if base.track_reconstruction {
            Some(crate::metrics::reconstruction_score(&p.model, &table, h)?.full_f1)
        } else {
            None
        };
        Ok(EpochEval { val: score(&val)?, test: score(&test)?, threshold: None, reconstruction })
    };
    let outcome = engine::run(spec, &mut params, evaluate)?;
    let table = params.label_table(&ids)?;
    let map = params.items.take().expect("joint params carry a map").map;
    let report = TrainReport {
        model: base.model.kind,
        dim: base.dim,
        seed: base.seed,
        metric: "micro_f1".into(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        test: outcome.test,
        threshold: None,
        n_train_edges: positives.len(),
        n_val_edges: split.val.len(),
        n_test_edges: split.test.len(),
        diagnostics: outcome.diagnostics,
        warm_start: base.init_source.clone(),
    };
    Ok((table, map, report))
}
