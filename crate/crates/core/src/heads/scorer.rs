//! Linear scorer from item features to head logits, trained with Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{multi_hot, tune_ovr_thresholds, HeadConfig, HeadKind, LabelLayout, Thresholds};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeIdx};
use crate::joint::{ItemSet, ItemSplit};
use crate::metrics::MetricsReport;
use crate::optim::{OptimizerKind, OptimizerState, ParamSpace};
use crate::trainer::engine::{stream, STREAM_INIT, STREAM_TRAIN};

/// `logits = W f + b` with `W` stored row-major as `n_out × d_f`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearScorer {
    pub n_out: usize,
    pub d_f: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearScorer {
    pub fn zeros(n_out: usize, d_f: usize) -> Self {
        LinearScorer { n_out, d_f, w: vec![0.0; n_out * d_f], b: vec![0.0; n_out] }
    }

    pub fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.d_f {
            return Err(Error::arg(format!("feature has {} entries, scorer expects {}", f.len(), self.d_f)));
        }
        Ok((0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.d_f..(o + 1) * self.d_f];
                self.b[o] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn flatten(&self) -> Vec<f64> {
        self.w.iter().chain(&self.b).copied().collect()
    }

    fn unflatten(&mut self, p: &[f64]) {
        let nw = self.w.len();
        self.w.copy_from_slice(&p[..nw]);
        self.b.copy_from_slice(&p[nw..]);
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadTrainConfig {
    pub head: HeadConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl HeadTrainConfig {
    pub fn new(head: HeadConfig) -> Self {
        HeadTrainConfig { head, epochs: 100, batch_size: 32, lr: 0.01, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub loss: f64,
    #[serde(with = "crate::io::opt_f64")]
    pub val_micro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadReport {
    pub head: HeadKind,
    pub seed: u64,
    pub epochs: Vec<HeadEpoch>,
    pub best_epoch: usize,
    #[serde(with = "crate::io::opt_f64")]
    pub best_val: Option<f64>,
    pub val: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
    pub thresholds: Thresholds,
}

fn paths(h: &Hierarchy, items: &ItemSet) -> Result<Vec<Vec<NodeIdx>>> {
    (0..items.len()).map(|i| items.path(h, i)).collect()
}

/// Logits for every item of `set`.
pub fn score_items(scorer: &LinearScorer, set: &ItemSet) -> Result<Vec<Vec<f64>>> {
    set.items().par_iter().map(|it| scorer.logits(&it.feature)).collect()
}

/// Thresholds tuned on `set` for one-vs-rest heads; `Untuned` otherwise.
fn tune_for(cfg: &HeadConfig, layout: &LabelLayout, logits: &[Vec<f64>], truth: &[Vec<NodeIdx>]) -> Result<Thresholds> {
    if cfg.kind != HeadKind::OneVsRest || logits.is_empty() {
        return Ok(Thresholds::Untuned);
    }
    let targets: Vec<Vec<bool>> = truth.iter().map(|t| multi_hot(layout, t)).collect();
    Ok(tune_ovr_thresholds(logits, &targets, cfg.threshold_policy)?.thresholds)
}

/// Classification report for `set` under `th`.
pub fn evaluate_head(
    cfg: &HeadConfig,
    layout: &LabelLayout,
    h: &Hierarchy,
    scorer: &LinearScorer,
    set: &ItemSet,
    th: &Thresholds,
) -> Result<MetricsReport> {
    let logits = score_items(scorer, set)?;
    let preds: Vec<Vec<NodeIdx>> = logits.par_iter().map(|x| cfg.predict(layout, x, th)).collect::<Result<_>>()?;
    MetricsReport::classification(h, &preds, &paths(h, set)?)
}

/// Trains a linear scorer under `cfg.head`, keeping the epoch with the best
/// validation micro-F1 (ties go to the later epoch). One-vs-rest thresholds
/// are tuned on the validation items.
pub fn train_heads(
    h: &Hierarchy,
    items: &ItemSet,
    split: &ItemSplit,
    cfg: &HeadTrainConfig,
) -> Result<(LinearScorer, HeadReport)> {
    let layout = LabelLayout::new(h)?;
    cfg.head.validate(&layout)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Config("head training needs train items".into()));
    }
    let train = items.subset(&split.train);
    let val = items.subset(&split.val);
    let test = items.subset(&split.test);
    let train_leaf: Vec<NodeIdx> = train.items().iter().map(|it| it.leaf).collect();
    let val_truth = paths(h, &val)?;

    let n_out = cfg.head.logit_dim(&layout);
    let mut scorer = LinearScorer::zeros(n_out, items.d_f());
    let mut init = stream(cfg.seed, STREAM_INIT);
    scorer.w.iter_mut().for_each(|w| *w = init.gen_range(-0.001..0.001));
    let mut opt = OptimizerState::new(OptimizerKind::Adam, ParamSpace::Flat, cfg.lr, scorer.n_params())?;
    let mut rng = stream(cfg.seed, STREAM_TRAIN);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let evaluate = |s: &LinearScorer| -> Result<(Option<f64>, Thresholds)> {
        if val.is_empty() {
            return Ok((None, Thresholds::Untuned));
        }
        let logits = score_items(s, &val)?;
        let th = tune_for(&cfg.head, &layout, &logits, &val_truth)?;
        let preds: Vec<Vec<NodeIdx>> =
            logits.iter().map(|x| cfg.head.predict(&layout, x, &th)).collect::<Result<_>>()?;
        let r = MetricsReport::classification(h, &preds, &val_truth)?;
        Ok((Some(r.micro.f1), th))
    };

    let (v0, th0) = evaluate(&scorer)?;
    let mut best = (0usize, v0, scorer.clone(), th0);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let x = scorer.logits(&train.get(i).feature)?;
                    cfg.head.loss_grad(&layout, &x, train_leaf[i])
                })
                .collect::<Result<_>>()
                .map_err(|e| Error::Training { epoch, message: e.to_string() })?;
            let mut grad = vec![0.0; scorer.n_params()];
            let scale = 1.0 / batch.len() as f64;
            let nw = scorer.w.len();
            for (&i, (loss, g)) in batch.iter().zip(&per) {
                total += loss;
                let f = &train.get(i).feature;
                for (o, go) in g.iter().enumerate() {
                    if *go == 0.0 {
                        continue;
                    }
                    let row = &mut grad[o * scorer.d_f..(o + 1) * scorer.d_f];
                    row.iter_mut().zip(f).for_each(|(r, fv)| *r += scale * go * fv);
                    grad[nw + o] += scale * go;
                }
            }
            let mut p = scorer.flatten();
            opt.step(&mut p, &grad, 1).map_err(|e| Error::Training { epoch, message: e.to_string() })?;
            scorer.unflatten(&p);
        }
        let loss = total / train.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training { epoch, message: format!("loss became {loss}") });
        }
        let (v, th) = evaluate(&scorer)?;
        history.push(HeadEpoch { epoch, loss, val_micro_f1: v });
        let better = match (v, best.1) {
            (Some(a), Some(b)) => a >= b,
            (_, None) => true,
            (None, Some(_)) => false,
        };
        if better {
            best = (epoch, v, scorer.clone(), th);
        }
    }
    let (best_epoch, best_val, scorer, th) = best;
    let val_report =
        if val.is_empty() { None } else { Some(evaluate_head(&cfg.head, &layout, h, &scorer, &val, &th)?) };
    let test_report = if test.is_empty() || (cfg.head.kind == HeadKind::OneVsRest && th == Thresholds::Untuned) {
        None
    } else {
        Some(evaluate_head(&cfg.head, &layout, h, &scorer, &test, &th)?)
    };
    Ok((
        scorer,
        HeadReport {
            head: cfg.head.kind,
            seed: cfg.seed,
            epochs: history,
            best_epoch,
            best_val,
            val: val_report,
            test: test_report,
            thresholds: th,
        },
    ))
}
