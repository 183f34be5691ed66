//! Precision/recall/F1 (micro and macro), TPR/TNR, hit@k and graph
//! reconstruction scoring.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::EnergyModel;
use crate::hierarchy::{Hierarchy, NodeIdx};
use crate::trainer::{tune_threshold, EmbeddingTable};

/// Per-label confusion counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub tn: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(n_labels: usize) -> Self {
        ConfusionCounts { tp: vec![0; n_labels], fp: vec![0; n_labels], tn: vec![0; n_labels], fn_: vec![0; n_labels] }
    }

    pub fn n_labels(&self) -> usize {
        self.tp.len()
    }

    /// Adds one sample given its predicted and true label sets.
    pub fn add_sample(&mut self, predicted: &[usize], truth: &[usize]) {
        let n = self.n_labels();
        let mut p = vec![false; n];
        let mut t = vec![false; n];
        predicted.iter().for_each(|&j| p[j] = true);
        truth.iter().for_each(|&j| t[j] = true);
        for j in 0..n {
            match (p[j], t[j]) {
                (true, true) => self.tp[j] += 1,
                (true, false) => self.fp[j] += 1,
                (false, true) => self.fn_[j] += 1,
                (false, false) => self.tn[j] += 1,
            }
        }
    }

    /// Sums over labels: `(tp, fp, tn, fn)`.
    pub fn pooled(&self) -> (u64, u64, u64, u64) {
        (self.tp.iter().sum(), self.fp.iter().sum(), self.tn.iter().sum(), self.fn_.iter().sum())
    }

    /// Counts restricted to `labels`, in that order.
    pub fn restrict(&self, labels: &[usize]) -> ConfusionCounts {
        ConfusionCounts {
            tp: labels.iter().map(|&j| self.tp[j]).collect(),
            fp: labels.iter().map(|&j| self.fp[j]).collect(),
            tn: labels.iter().map(|&j| self.tn[j]).collect(),
            fn_: labels.iter().map(|&j| self.fn_[j]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
        Prf { precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fn_), f1: ratio(2 * tp, 2 * tp + fp + fn_) }
    }
}

/// Micro (pooled) and macro (mean of per-label values) precision, recall
/// and F1. Ratios with a zero denominator count as 0.
pub fn micro_macro(cc: &ConfusionCounts) -> (Prf, Prf) {
    let (tp, fp, _, fn_) = cc.pooled();
    let micro = Prf::from_counts(tp, fp, fn_);
    let n = cc.n_labels();
    if n == 0 {
        return (micro, Prf::default());
    }
    let mut sum = Prf::default();
    for j in 0..n {
        let p = Prf::from_counts(cc.tp[j], cc.fp[j], cc.fn_[j]);
        sum.precision += p.precision;
        sum.recall += p.recall;
        sum.f1 += p.f1;
    }
    let k = n as f64;
    let macro_ = Prf { precision: sum.precision / k, recall: sum.recall / k, f1: sum.f1 / k };
    (micro, macro_)
}

/// Pooled true-positive and true-negative rates; `None` without positives
/// (resp. negatives).
pub fn rates(cc: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    let (tp, fp, tn, fn_) = cc.pooled();
    let tpr = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let tnr = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    (tpr, tnr)
}

/// Fraction of samples whose truth is among the first `k` ranked labels.
pub fn hit_at_k(ranked: &[Vec<usize>], truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if ranked.len() != truth.len() {
        return Err(Error::arg("rankings and truths differ in length"));
    }
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let hits = ranked.iter().zip(truth).filter(|(r, t)| r.iter().take(k).any(|x| x == *t)).count();
    Ok(hits as f64 / ranked.len() as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Reconstruction {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub full_f1: f64,
    #[serde(with = "crate::io::f64_or_string")]
    pub threshold: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Scores all `n(n−1)` ordered label pairs: closure edges are positives,
/// everything else negative. The threshold maximizes full-F1.
pub fn reconstruction_score(m: &EnergyModel, labels: &EmbeddingTable, h: &Hierarchy) -> Result<Reconstruction> {
    let n = h.len();
    if labels.len() != n {
        return Err(Error::arg(format!("{} embeddings for {n} labels", labels.len())));
    }
    let closure = h.transitive_closure();
    let rows: Vec<usize> = h
        .nodes()
        .iter()
        .map(|node| labels.index_of(&node.id).ok_or_else(|| Error::arg(format!("no embedding for label {}", node.id))))
        .collect::<Result<_>>()?;
    let per_parent: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut xp = labels.row(rows[u]).to_vec();
            m.project_parent(&mut xp)?;
            let (mut pos, mut neg) = (Vec::new(), Vec::with_capacity(n));
            for v in 0..n {
                if u == v {
                    continue;
                }
                let mut yp = labels.row(rows[v]).to_vec();
                m.project_child(&mut yp);
                let e = m.energy(&xp, &yp)?;
                if closure.contains(&(u, v)) {
                    pos.push(e);
                } else {
                    neg.push(e);
                }
            }
            Ok((pos, neg))
        })
        .collect();
    let mut pos = Vec::with_capacity(closure.len());
    let mut neg = Vec::with_capacity(n * n);
    for r in per_parent {
        let (p, q) = r?;
        pos.extend(p);
        neg.extend(q);
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::arg("reconstruction needs both positive and negative pairs"));
    }
    let (threshold, full_f1) = tune_threshold(&pos, &neg)?;
    let tp = pos.iter().filter(|&&e| e <= threshold).count() as u64;
    let fp = neg.iter().filter(|&&e| e <= threshold).count() as u64;
    let fn_ = pos.len() as u64 - tp;
    let tn = neg.len() as u64 - fp;
    Ok(Reconstruction {
        tpr: Some(tp as f64 / pos.len() as f64),
        tnr: Some(tn as f64 / neg.len() as f64),
        full_f1,
        threshold,
        n_positive: pos.len(),
        n_negative: neg.len(),
        tp,
        fp,
        tn,
        fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CountStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub sd: f64,
}

impl CountStats {
    pub fn of(counts: &[usize]) -> Option<CountStats> {
        if counts.is_empty() {
            return None;
        }
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<usize>() as f64 / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
        Some(CountStats {
            min: *counts.iter().min().expect("non-empty"),
            max: *counts.iter().max().expect("non-empty"),
            mean,
            sd: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LevelMetrics {
    pub level: usize,
    pub micro: Prf,
    pub macro_: Prf,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub micro: Prf,
    pub macro_: Prf,
    pub per_level: Vec<LevelMetrics>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub reconstruction: Option<Reconstruction>,
    /// `k → hit@k` per level (index 0 is level 1).
    pub hit_at_k: BTreeMap<usize, Vec<f64>>,
    pub predicted_labels: Option<CountStats>,
}

impl MetricsReport {
    /// Report for per-sample predicted and true label sets over `h`'s labels.
    pub fn classification(h: &Hierarchy, predicted: &[Vec<NodeIdx>], truth: &[Vec<NodeIdx>]) -> Result<MetricsReport> {
        if predicted.len() != truth.len() {
            return Err(Error::arg("predictions and truths differ in length"));
        }
        let mut cc = ConfusionCounts::new(h.len());
        for (p, t) in predicted.iter().zip(truth) {
            if p.iter().chain(t).any(|&j| j >= h.len()) {
                return Err(Error::arg("label index out of range"));
            }
            cc.add_sample(p, t);
        }
        let (micro, macro_) = micro_macro(&cc);
        let (tpr, tnr) = rates(&cc);
        let per_level = h
            .levels()
            .iter()
            .enumerate()
            .map(|(i, nodes)| {
                let (mi, ma) = micro_macro(&cc.restrict(nodes));
                LevelMetrics { level: i + 1, micro: mi, macro_: ma }
            })
            .collect();
        let counts: Vec<usize> = predicted.iter().map(Vec::len).collect();
        Ok(MetricsReport {
            n_samples: predicted.len(),
            micro,
            macro_,
            per_level,
            tpr,
            tnr,
            reconstruction: None,
            hit_at_k: BTreeMap::new(),
            predicted_labels: CountStats::of(&counts),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Level-wise table: overall micro-F1 followed by one column per level.
    pub fn level_table_tsv(&self) -> String {
        let mut head = vec!["metric".to_string(), "overall".to_string()];
        head.extend(self.per_level.iter().map(|l| format!("L{}", l.level)));
        let row = |name: &str, overall: f64, f: &dyn Fn(&LevelMetrics) -> f64| {
            let mut r = vec![name.to_string(), format!("{overall:.4}")];
            r.extend(self.per_level.iter().map(|l| format!("{:.4}", f(l))));
            r.join("\t")
        };
        [
            head.join("\t"),
            row("m-F1", self.micro.f1, &|l| l.micro.f1),
            row("M-F1", self.macro_.f1, &|l| l.macro_.f1),
            row("m-P", self.micro.precision, &|l| l.micro.precision),
            row("m-R", self.micro.recall, &|l| l.micro.recall),
        ]
        .join("\n")
            + "\n"
    }
}
