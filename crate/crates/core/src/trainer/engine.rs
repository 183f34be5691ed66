//! Max-margin training loop shared by label-only and joint training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Diagnostics, EpochRecord};
use crate::error::{Error, Result};
use crate::geometry::{exp0, exp0_vjp, log0, norm, project_to_ball, EnergyModel};
use crate::hierarchy::{sample_negatives_lenient, Edge, SamplingGraph};
use crate::joint::ItemMap;
use crate::optim::{OptimizerKind, OptimizerState, ParamSpace};
use crate::trainer::{EmbeddingTable, Space};

/// RNG stream ids derived from the run seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;
pub(crate) const STREAM_FIXTURES: u64 = 3;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) struct ItemParams {
    pub features: Vec<f64>,
    pub map: ItemMap,
    /// `None` keeps the map frozen.
    pub opt: Option<OptimizerState>,
}

/// Trainable state: label rows plus an optional item map.
pub(crate) struct Params {
    pub model: EnergyModel,
    pub dim: usize,
    pub n_labels: usize,
    pub labels: Vec<f64>,
    pub label_space: ParamSpace,
    pub label_opt: OptimizerState,
    pub items: Option<ItemParams>,
}

/// Initial label parameters for `n` rows.
pub(crate) fn init_labels(
    model: &EnergyModel,
    space: ParamSpace,
    n: usize,
    dim: usize,
    warm: Option<&EmbeddingTable>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if let Some(t) = warm {
        if t.len() != n || t.dim() != dim {
            return Err(Error::Config(format!("warm-start table is {}x{}, expected {n}x{dim}", t.len(), t.dim())));
        }
        let ball = model.is_ball();
        if ball != (t.space() == Space::Ball) {
            return Err(Error::Config(format!(
                "warm-start table is {}, model needs {}",
                t.space().as_str(),
                if ball { "ball" } else { "flat" }
            )));
        }
        let mut out = Vec::with_capacity(n * dim);
        for i in 0..n {
            match space {
                ParamSpace::BallTangentAtZero => {
                    let mut p = t.row(i).to_vec();
                    project_to_ball(&mut p, model.max_norm());
                    out.extend(log0(&p)?);
                }
                _ => out.extend_from_slice(t.row(i)),
            }
        }
        return Ok(out);
    }
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        match space {
            ParamSpace::BallDirect => {
                let mut v: Vec<f64> = loop {
                    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                    if norm(&v) > 0.0 {
                        break v;
                    }
                };
                let radius = (0.1 * rng.gen::<f64>().powf(1.0 / dim as f64)).max(model.eps_norm);
                let s = radius / norm(&v);
                v.iter_mut().for_each(|c| *c *= s);
                out.extend(v);
            }
            _ => out.extend((0..dim).map(|_| rng.gen_range(-0.001..0.001))),
        }
    }
    Ok(out)
}

impl Params {
    pub fn label_embedding(&self, i: usize) -> Vec<f64> {
        let row = &self.labels[i * self.dim..(i + 1) * self.dim];
        match self.label_space {
            ParamSpace::BallTangentAtZero => exp0(row, self.model.eps_ball),
            _ => row.to_vec(),
        }
    }

    pub fn embed(&self, node: usize) -> Vec<f64> {
        if node < self.n_labels {
            return self.label_embedding(node);
        }
        let it = self.items.as_ref().expect("item node without an item map");
        let d_f = it.map.d_f();
        let k = node - self.n_labels;
        it.map.embed_unchecked(&it.features[k * d_f..(k + 1) * d_f])
    }

    pub fn label_table(&self, ids: &[String]) -> Result<EmbeddingTable> {
        let space = if self.model.is_ball() { Space::Ball } else { Space::Flat };
        let mut data = Vec::with_capacity(self.n_labels * self.dim);
        for i in 0..self.n_labels {
            let mut e = self.label_embedding(i);
            if self.model.is_ball() {
                project_to_ball(&mut e, self.model.max_norm());
            }
            data.extend(e);
        }
        EmbeddingTable::new(ids.to_vec(), self.dim, space, data)
    }

    fn snapshot(&self) -> (Vec<f64>, Option<Vec<f64>>) {
        (self.labels.clone(), self.items.as_ref().map(|it| it.map.weights().to_vec()))
    }

    fn restore(&mut self, snap: (Vec<f64>, Option<Vec<f64>>)) {
        self.labels = snap.0;
        if let (Some(it), Some(w)) = (self.items.as_mut(), snap.1) {
            it.map.set_weights(w);
        }
    }

    fn check_finite(&self) -> bool {
        self.labels.iter().all(|v| v.is_finite())
            && self.items.as_ref().is_none_or(|it| it.map.weights().iter().all(|v| v.is_finite()))
    }
}

/// One pair's contribution to the max-margin loss.
pub(crate) struct PairTerm {
    pub loss: f64,
    pub kink: bool,
    pub clamped: bool,
    pub moved: bool,
    /// Gradients w.r.t. the unprojected embeddings (projection is passed straight through).
    pub grad: Option<(Vec<f64>, Vec<f64>)>,
}

/// Evaluates `E` for a positive pair or `max(0, α − E)` for a negative one.
pub(crate) fn pair_term(model: &EnergyModel, x: &[f64], y: &[f64], positive: bool, alpha: f64) -> Result<PairTerm> {
    let mut xp = x.to_vec();
    let mut yp = y.to_vec();
    let moved = model.project_parent(&mut xp)? | model.project_child(&mut yp);
    let g = model.energy_grad(&xp, &yp)?;
    let e = g.eval.energy;
    let (loss, scale) = if positive {
        (e, 1.0)
    } else if e < alpha {
        (alpha - e, -1.0)
    } else {
        (0.0, 0.0)
    };
    let grad = if scale == 0.0 {
        None
    } else {
        let dx = g.dx.iter().map(|v| v * scale).collect();
        let dy = g.dy.iter().map(|v| v * scale).collect();
        Some((dx, dy))
    };
    Ok(PairTerm { loss, kink: g.eval.kink, clamped: g.eval.clamped, moved, grad })
}

pub(crate) struct EpochEval {
    pub val: Option<f64>,
    pub test: Option<f64>,
    pub threshold: Option<f64>,
    pub reconstruction: Option<f64>,
}

pub(crate) struct EngineSpec<'a, F: Fn(Edge) -> bool + Sync> {
    pub graph: &'a SamplingGraph,
    pub positives: &'a [Edge],
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub pick_per_level: bool,
    pub seed: u64,
    pub forbid: F,
}

pub(crate) struct EngineOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub test: Option<f64>,
    pub threshold: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Runs the training loop and leaves `params` at the best-validation snapshot.
pub(crate) fn run<F, E>(spec: EngineSpec<'_, F>, params: &mut Params, mut evaluate: E) -> Result<EngineOutcome>
where
    F: Fn(Edge) -> bool + Sync,
    E: FnMut(&Params, usize) -> Result<EpochEval>,
{
    if spec.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if spec.n_left + spec.n_right == 0 {
        return Err(Error::Config("at least one negative per positive is required".into()));
    }
    if !(spec.alpha > 0.0) {
        return Err(Error::Config(format!("margin alpha must be positive (got {})", spec.alpha)));
    }
    if spec.positives.is_empty() && spec.epochs > 0 {
        return Err(Error::Config("no training edges".into()));
    }
    let mut rng = stream(spec.seed, STREAM_TRAIN);
    let mut order: Vec<Edge> = spec.positives.to_vec();
    let mut out = EngineOutcome {
        epochs: Vec::with_capacity(spec.epochs),
        best_epoch: None,
        best_val: None,
        test: None,
        threshold: None,
        diagnostics: Diagnostics::default(),
    };
    let mut best: Option<(Vec<f64>, Option<Vec<f64>>)> = None;
    let d = params.dim;
    let n_items = params.items.as_ref().map_or(0, |it| it.features.len() / it.map.d_f());
    let mut label_grad = vec![0.0; params.n_labels * d];
    let mut item_grad = vec![0.0; n_items * d];

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut diag = Diagnostics::default();
        for batch in order.chunks(spec.batch_size) {
            let mut pairs: Vec<(Edge, bool)> = Vec::with_capacity(batch.len() * (1 + spec.n_left + spec.n_right));
            for &pos in batch {
                pairs.push((pos, true));
                let neg = sample_negatives_lenient(
                    spec.graph,
                    pos,
                    spec.n_left,
                    spec.n_right,
                    spec.pick_per_level,
                    &spec.forbid,
                    &mut rng,
                )?;
                diag.infeasible_sides += neg.infeasible.len();
                pairs.extend(neg.edges.into_iter().map(|e| (e, false)));
            }
            let p: &Params = params;
            let terms: Vec<Result<PairTerm>> = pairs
                .par_iter()
                .map(|&((u, v), positive)| pair_term(&p.model, &p.embed(u), &p.embed(v), positive, spec.alpha))
                .collect();

            label_grad.iter_mut().for_each(|g| *g = 0.0);
            item_grad.iter_mut().for_each(|g| *g = 0.0);
            for (&((u, v), _), t) in pairs.iter().zip(terms) {
                let t = t.map_err(|e| Error::Training { epoch, message: e.to_string() })?;
                epoch_loss += t.loss;
                diag.pairs += 1;
                diag.kinks += t.kink as usize;
                diag.clamps += t.clamped as usize;
                diag.projections += t.moved as usize;
                if let Some((gx, gy)) = t.grad {
                    for (node, g) in [(u, gx), (v, gy)] {
                        let buf = if node < params.n_labels {
                            &mut label_grad[node * d..(node + 1) * d]
                        } else {
                            let k = node - params.n_labels;
                            &mut item_grad[k * d..(k + 1) * d]
                        };
                        buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                }
            }
            apply_step(params, &mut label_grad, &item_grad)
                .map_err(|e| Error::Training { epoch, message: e.to_string() })?;
        }
        let loss = epoch_loss / order.len() as f64;
        if !loss.is_finite() || !params.check_finite() {
            return Err(Error::Training { epoch, message: format!("loss became {loss}") });
        }
        let ev = evaluate(params, epoch)?;
        out.diagnostics.add(&diag);
        out.epochs.push(EpochRecord {
            epoch,
            loss,
            val: ev.val,
            reconstruction: ev.reconstruction,
            kinks: diag.kinks,
            clamps: diag.clamps,
        });
        let improved = match (ev.val, out.best_val) {
            (Some(v), Some(b)) => v >= b,
            (Some(_), None) => true,
            (None, _) => out.best_val.is_none(),
        };
        if improved {
            out.best_epoch = Some(epoch);
            out.best_val = ev.val;
            out.test = ev.test;
            out.threshold = ev.threshold;
            best = Some(params.snapshot());
        }
    }
    if let Some(snap) = best {
        params.restore(snap);
    }
    Ok(out)
}

fn apply_step(params: &mut Params, label_grad: &mut [f64], item_grad: &[f64]) -> Result<()> {
    let d = params.dim;
    if params.label_space == ParamSpace::BallTangentAtZero {
        for i in 0..params.n_labels {
            let g = &label_grad[i * d..(i + 1) * d];
            if g.iter().all(|&c| c == 0.0) {
                continue;
            }
            let pg = exp0_vjp(&params.labels[i * d..(i + 1) * d], g);
            label_grad[i * d..(i + 1) * d].copy_from_slice(&pg);
        }
    }
    params.label_opt.step(&mut params.labels, label_grad, d)?;
    if let Some(it) = params.items.as_mut() {
        if let Some(opt) = it.opt.as_mut() {
            let wg = it.map.weight_grad(&it.features, item_grad)?;
            let mut w = it.map.weights().to_vec();
            let n = w.len();
            opt.step(&mut w, &wg, n)?;
            it.map.set_weights(w);
        }
    }
    Ok(())
}

/// Optimizer for the label group, checking the model/space pairing.
pub(crate) fn label_optimizer(
    model: &EnergyModel,
    kind: OptimizerKind,
    space: ParamSpace,
    lr: f64,
    n_params: usize,
) -> Result<OptimizerState> {
    match (model.is_ball(), space) {
        (false, ParamSpace::Flat) | (true, ParamSpace::BallDirect) | (true, ParamSpace::BallTangentAtZero) => {}
        (ball, s) => {
            return Err(Error::Config(format!(
                "{s:?} parameters do not fit a {} model",
                if ball { "ball" } else { "flat" }
            )))
        }
    }
    Ok(OptimizerState::new(kind, space, lr, n_params)?.with_eps_ball(model.eps_ball))
}
