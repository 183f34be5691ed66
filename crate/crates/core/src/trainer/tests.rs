use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::norm;
use crate::hierarchy::{gen_toy_tree, split_edges};

#[test]
fn margin_loss_examples() {
    let oe = EnergyModel::order_embedding();
    let (x, y) = ([0.0, 0.0], [1.0, 1.0]);
    let (a, b) = ([3.0, 0.0], [0.0, 0.0]);
    let l = max_margin_loss(&oe, &[(&x, &y)], &[(&a, &b)], 1.0).unwrap();
    assert_eq!(l.loss, 0.0);
    assert!(l.negative_grads[0].0.iter().all(|&g| g == 0.0));

    let (p, q) = ([0.3, 0.0], [0.0, 0.0]);
    let l = max_margin_loss(&oe, &[(&p, &q)], &[], 1.0).unwrap();
    assert!((l.loss - 0.3).abs() < 1e-15);

    let (n, m) = ([0.2, 0.0], [0.0, 0.0]);
    let l = max_margin_loss(&oe, &[], &[(&n, &m)], 1.0).unwrap();
    assert!((l.loss - 0.8).abs() < 1e-15);
    // The hinge pushes the negative's energy up: ∂x opposes ∂E/∂x.
    assert!(l.negative_grads[0].0[0] < 0.0);

    assert!(max_margin_loss(&oe, &[], &[], 1.0).is_err());
}

#[test]
fn threshold_examples() {
    let (t, f) = tune_threshold(&[0.1], &[0.9]).unwrap();
    assert_eq!((t, f), (0.5, 1.0));
    let (t, f) = tune_threshold(&[0.5], &[0.5]).unwrap();
    assert_eq!(t, f64::INFINITY);
    assert!((f - 2.0 / 3.0).abs() < 1e-15);
    assert!(tune_threshold(&[], &[0.5]).is_err());
    assert!(tune_threshold(&[0.5], &[]).is_err());
}

/// Scores every cut of the sorted energies by direct comparison.
fn oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut vals: Vec<f64> = pos.iter().chain(neg).copied().collect();
    vals.sort_by(f64::total_cmp);
    let mut cuts = vec![f64::NEG_INFINITY, f64::INFINITY];
    cuts.extend(vals.iter().copied());
    cuts.iter().map(|&t| edge_f1(pos, neg, t)).fold(0.0, f64::max)
}

#[test]
fn threshold_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let np = rng.gen_range(1..12);
        let nn = rng.gen_range(1..12);
        // Coarse values force ties.
        let draw = |rng: &mut ChaCha8Rng| (rng.gen_range(0..8) as f64) * 0.125;
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        let (t, f) = tune_threshold(&pos, &neg).unwrap();
        assert_eq!(f, oracle(&pos, &neg), "{pos:?} {neg:?}");
        assert_eq!(edge_f1(&pos, &neg, t), f);
        // No smaller candidate reaches the same F1.
        let mut vals: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut smaller: Vec<f64> = vals.windows(2).map(|w| (w[0] + w[1]) / 2.0).filter(|&m| m < t).collect();
        smaller.push(f64::NEG_INFINITY);
        for s in smaller {
            assert!(edge_f1(&pos, &neg, s) < f, "{pos:?} {neg:?} t={t} s={s}");
        }
    }
}

fn toy_setup() -> (Hierarchy, EdgeSplit) {
    let h = gen_toy_tree(3, 7).unwrap();
    let s = split_edges(&h, 0.1, 0.2, 0).unwrap();
    (h, s)
}

#[test]
fn zero_epochs_returns_initialization() {
    let (h, s) = toy_setup();
    let mut cfg = TrainConfig::labels(ModelKind::EuclideanCone, 2);
    cfg.epochs = 0;
    let (t1, r) = train_labels(&h, &s, &cfg).unwrap();
    assert_eq!(r.best_epoch, None);
    assert!(r.epochs.is_empty());
    cfg.init = Some(t1.clone());
    let (t2, _) = train_labels(&h, &s, &cfg).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn identical_config_gives_identical_losses() {
    let (h, s) = toy_setup();
    for kind in [ModelKind::OrderEmbedding, ModelKind::EuclideanCone, ModelKind::HyperbolicCone] {
        let mut cfg = TrainConfig::labels(kind, 3);
        cfg.epochs = 15;
        cfg.seed = 4;
        let (a, ra) = train_labels(&h, &s, &cfg).unwrap();
        let (b, rb) = train_labels(&h, &s, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        let la: Vec<u64> = ra.epochs.iter().map(|e| e.loss.to_bits()).collect();
        let lb: Vec<u64> = rb.epochs.iter().map(|e| e.loss.to_bits()).collect();
        assert_eq!(la, lb);
    }
}

#[test]
fn loss_decreases_on_toy_tree() {
    let (h, s) = toy_setup();
    for kind in [ModelKind::OrderEmbedding, ModelKind::EuclideanCone, ModelKind::HyperbolicCone] {
        let (mut first, mut last) = (0.0, 0.0);
        for seed in 0..5 {
            let mut cfg = TrainConfig::labels(kind, 10);
            cfg.epochs = 100;
            cfg.seed = seed;
            let (_, r) = train_labels(&h, &s, &cfg).unwrap();
            first += r.epochs[0].loss;
            last += r.epochs[99].loss;
        }
        assert!(last < first, "{kind:?}: {first} -> {last}");
    }
}

#[test]
fn best_epoch_maximizes_validation() {
    let (h, s) = toy_setup();
    let mut cfg = TrainConfig::labels(ModelKind::EuclideanCone, 2);
    cfg.epochs = 30;
    let (_, r) = train_labels(&h, &s, &cfg).unwrap();
    let best = r.best_epoch.unwrap();
    let max = r.epochs.iter().filter_map(|e| e.val).fold(0.0, f64::max);
    assert_eq!(r.epochs[best - 1].val, Some(max));
    assert_eq!(r.best_val, Some(max));
    assert!(r.test.is_some() && r.threshold.is_some());
}

#[test]
fn hyperbolic_runs_stay_in_ball() {
    let (h, s) = toy_setup();
    for space in [ParamSpace::BallDirect, ParamSpace::BallTangentAtZero] {
        let mut cfg = TrainConfig::labels(ModelKind::HyperbolicCone, 2);
        cfg.param_space = space;
        if space == ParamSpace::BallTangentAtZero {
            cfg.optimizer = OptimizerKind::Adam;
            cfg.lr = 0.05;
        } else {
            cfg.lr = 0.5;
        }
        cfg.track_reconstruction = true;
        cfg.epochs = 40;
        let (t, r) = train_labels(&h, &s, &cfg).unwrap();
        assert_eq!(t.space(), Space::Ball);
        for i in 0..t.len() {
            assert!(norm(t.row(i)) <= 1.0 - 1e-5 + 1e-15);
        }
        assert!(r.epochs.iter().all(|e| e.reconstruction.is_some()));
    }
}

#[test]
fn rejects_bad_configs() {
    let (h, s) = toy_setup();
    let mut cfg = TrainConfig::labels(ModelKind::EuclideanCone, 2);
    cfg.alpha = 0.0;
    assert!(matches!(train_labels(&h, &s, &cfg), Err(Error::Config(_))));
    let mut cfg = TrainConfig::labels(ModelKind::EuclideanCone, 2);
    cfg.optimizer = OptimizerKind::Rsgd;
    assert!(train_labels(&h, &s, &cfg).is_err());
    let mut cfg = TrainConfig::labels(ModelKind::HyperbolicCone, 2);
    cfg.param_space = ParamSpace::Flat;
    cfg.optimizer = OptimizerKind::Adam;
    assert!(train_labels(&h, &s, &cfg).is_err());
    let mut cfg = TrainConfig::labels(ModelKind::EuclideanCone, 1);
    cfg.epochs = 1;
    assert!(train_labels(&h, &s, &cfg).is_err());
}
