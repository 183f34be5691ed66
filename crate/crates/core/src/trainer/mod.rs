//! Max-margin training of label embeddings and energy-threshold tuning.

pub(crate) mod engine;
mod table;

pub use table::{EmbeddingTable, Space};

use crate::error::{Error, Result};
use crate::geometry::{EnergyModel, ModelKind};
use crate::hierarchy::{sample_negatives_lenient, Edge, EdgeSplit, Hierarchy, SamplingGraph};
use crate::optim::{OptimizerKind, ParamSpace};
use engine::{EngineSpec, EpochEval, Params};

/// Negatives per held-out positive in the frozen val/test fixtures.
pub const EVAL_NEGATIVES: (usize, usize) = (5, 5);

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainConfig {
    pub model: EnergyModel,
    pub dim: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub pick_per_level: bool,
    pub optimizer: OptimizerKind,
    pub param_space: ParamSpace,
    pub lr: f64,
    pub seed: u64,
    pub nonbasic_train_fraction: f64,
    /// Score full graph reconstruction after every epoch.
    pub track_reconstruction: bool,
    /// Warm-start embeddings; random initialization when absent.
    #[serde(skip)]
    pub init: Option<EmbeddingTable>,
    /// Where the warm start came from, copied into the report.
    pub init_source: Option<String>,
}

impl TrainConfig {
    /// Label-only defaults for `kind`.
    pub fn labels(kind: ModelKind, dim: usize) -> Self {
        let model = EnergyModel::new(kind, crate::geometry::DEFAULT_K).expect("default K is valid");
        let (optimizer, param_space, lr, alpha) = match kind {
            ModelKind::OrderEmbedding => (OptimizerKind::Adam, ParamSpace::Flat, 0.1, 1.0),
            ModelKind::EuclideanCone => (OptimizerKind::Adam, ParamSpace::Flat, 0.1, 0.01),
            ModelKind::HyperbolicCone => (OptimizerKind::Rsgd, ParamSpace::BallDirect, 1e-3, 0.1),
        };
        TrainConfig {
            model,
            dim,
            alpha,
            epochs: 100,
            batch_size: 100,
            n_left: 5,
            n_right: 5,
            pick_per_level: true,
            optimizer,
            param_space,
            lr,
            seed: 0,
            nonbasic_train_fraction: 0.5,
            track_reconstruction: false,
            init: None,
            init_source: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.model.kind.is_cone() && self.dim < 2 {
            return Err(Error::Config("cone models need dim >= 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive (got {})", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.n_left + self.n_right == 0 {
            return Err(Error::Config("n_left + n_right must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.nonbasic_train_fraction) {
            return Err(Error::Config(format!(
                "nonbasic_train_fraction must be in [0, 1] (got {})",
                self.nonbasic_train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    pub pairs: usize,
    pub kinks: usize,
    pub clamps: usize,
    pub projections: usize,
    pub infeasible_sides: usize,
}

impl Diagnostics {
    pub fn add(&mut self, o: &Diagnostics) {
        self.pairs += o.pairs;
        self.kinks += o.kinks;
        self.clamps += o.clamps;
        self.projections += o.projections;
        self.infeasible_sides += o.infeasible_sides;
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch loss divided by the number of training positives.
    pub loss: f64,
    pub val: Option<f64>,
    pub reconstruction: Option<f64>,
    pub kinks: usize,
    pub clamps: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub dim: usize,
    pub seed: u64,
    /// Name of the validation/test metric.
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    /// Test metric at the best validation epoch.
    pub test: Option<f64>,
    #[serde(with = "crate::io::opt_f64")]
    pub threshold: Option<f64>,
    pub n_train_edges: usize,
    pub n_val_edges: usize,
    pub n_test_edges: usize,
    pub diagnostics: Diagnostics,
    pub warm_start: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss {
    pub loss: f64,
    /// `(∂/∂x, ∂/∂y)` per positive pair.
    pub positive_grads: Vec<(Vec<f64>, Vec<f64>)>,
    pub negative_grads: Vec<(Vec<f64>, Vec<f64>)>,
}

/// `Σ_pos E(x, y) + Σ_neg max(0, α − E(x, y))` and its per-pair gradients.
pub fn max_margin_loss(
    m: &EnergyModel,
    positives: &[(&[f64], &[f64])],
    negatives: &[(&[f64], &[f64])],
    alpha: f64,
) -> Result<MarginLoss> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::arg("max-margin loss needs at least one pair"));
    }
    let mut out = MarginLoss {
        loss: 0.0,
        positive_grads: Vec::with_capacity(positives.len()),
        negative_grads: Vec::with_capacity(negatives.len()),
    };
    for (set, positive) in [(positives, true), (negatives, false)] {
        for &(x, y) in set {
            let t = engine::pair_term(m, x, y, positive, alpha)?;
            out.loss += t.loss;
            let g = t.grad.unwrap_or_else(|| (vec![0.0; x.len()], vec![0.0; y.len()]));
            if positive {
                out.positive_grads.push(g);
            } else {
                out.negative_grads.push(g);
            }
        }
    }
    Ok(out)
}

/// Edge-classification F1 when predicting positive iff `E <= threshold`.
pub fn edge_f1(pos: &[f64], neg: &[f64], threshold: f64) -> f64 {
    let tp = pos.iter().filter(|&&e| e <= threshold).count();
    let fp = neg.iter().filter(|&&e| e <= threshold).count();
    let fn_ = pos.len() - tp;
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Best F1 threshold over the midpoints of the sorted unique energies and
/// `±∞`; ties go to the smaller threshold.
pub fn tune_threshold(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::arg("threshold tuning needs positive and negative energies"));
    }
    if pos.iter().chain(neg).any(|e| e.is_nan()) {
        return Err(Error::Numeric("NaN energy".into()));
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&e| (e, true)).chain(neg.iter().map(|&e| (e, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = pos.len();
    let f1 = |tp: usize, fp: usize| {
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (tp + fp + n_pos) as f64
        }
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let theta = match all.get(i) {
            Some(&(next, _)) => {
                let mid = v + (next - v) / 2.0;
                if mid >= next {
                    v
                } else {
                    mid
                }
            }
            None => f64::INFINITY,
        };
        let f = f1(tp, fp);
        if f > best.1 {
            best = (theta, f);
        }
    }
    Ok(best)
}

/// Frozen negatives for held-out positives.
pub(crate) fn frozen_negatives(
    g: &SamplingGraph,
    positives: &[Edge],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<Edge>> {
    let mut out = Vec::new();
    for &p in positives {
        let b = sample_negatives_lenient(g, p, EVAL_NEGATIVES.0, EVAL_NEGATIVES.1, false, |_| false, rng)?;
        out.extend(b.edges);
    }
    Ok(out)
}

fn energies(params: &Params, edges: &[Edge]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    edges.par_iter().map(|&(u, v)| params.model.energy_projected(&params.embed(u), &params.embed(v))).collect()
}

/// Trains label embeddings on the basic edges plus the configured share of
/// non-basic train edges; validation and test use frozen negatives.
pub fn train_labels(h: &Hierarchy, split: &EdgeSplit, cfg: &TrainConfig) -> Result<(EmbeddingTable, TrainReport)> {
    cfg.validate()?;
    let ids: Vec<String> = h.nodes().iter().map(|n| n.id.clone()).collect();
    let graph = SamplingGraph::from_hierarchy(h);
    let positives = split.training_edges(cfg.nonbasic_train_fraction);
    let mut fix_rng = engine::stream(cfg.seed, engine::STREAM_FIXTURES);
    let val_neg = frozen_negatives(&graph, &split.val, &mut fix_rng)?;
    let test_neg = frozen_negatives(&graph, &split.test, &mut fix_rng)?;

    let n = h.len();
    let mut init_rng = engine::stream(cfg.seed, engine::STREAM_INIT);
    let warm = cfg.init.as_ref().map(|t| t.reindexed(&ids)).transpose()?;
    let labels = engine::init_labels(&cfg.model, cfg.param_space, n, cfg.dim, warm.as_ref(), &mut init_rng)?;
    let label_opt = engine::label_optimizer(&cfg.model, cfg.optimizer, cfg.param_space, cfg.lr, labels.len())?;
    let mut params = Params {
        model: cfg.model,
        dim: cfg.dim,
        n_labels: n,
        labels,
        label_space: cfg.param_space,
        label_opt,
        items: None,
    };

    let spec = EngineSpec {
        graph: &graph,
        positives: &positives,
        alpha: cfg.alpha,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        n_left: cfg.n_left,
        n_right: cfg.n_right,
        pick_per_level: cfg.pick_per_level,
        seed: cfg.seed,
        forbid: |_: Edge| false,
    };
    let evaluate = |p: &Params, _epoch: usize| -> Result<EpochEval> {
        let reconstruction = if cfg.track_reconstruction {
            let table = p.label_table(&ids)?;
            Some(crate::metrics::reconstruction_score(&p.model, &table, h)?.full_f1)
        } else {
            None
        };
        if split.val.is_empty() || val_neg.is_empty() {
            return Ok(EpochEval { val: None, test: None, threshold: None, reconstruction });
        }
        let vp = energies(p, &split.val)?;
        let vn = energies(p, &val_neg)?;
        let (theta, f1) = tune_threshold(&vp, &vn)?;
        let test = if split.test.is_empty() {
            None
        } else {
            Some(edge_f1(&energies(p, &split.test)?, &energies(p, &test_neg)?, theta))
        };
        Ok(EpochEval { val: Some(f1), test, threshold: Some(theta), reconstruction })
    };
    let outcome = engine::run(spec, &mut params, evaluate)?;
    let table = params.label_table(&ids)?;
    let report = TrainReport {
        model: cfg.model.kind,
        dim: cfg.dim,
        seed: cfg.seed,
        metric: "edge_f1".into(),
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        test: outcome.test,
        threshold: outcome.threshold,
        n_train_edges: positives.len(),
        n_val_edges: split.val.len(),
        n_test_edges: split.test.len(),
        diagnostics: outcome.diagnostics,
        warm_start: cfg.init_source.clone(),
    };
    Ok((table, report))
}

#[cfg(test)]
mod tests;
