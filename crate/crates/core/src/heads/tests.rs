use std::f64::consts::LN_2;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::hierarchy::{fixture, gen_leveled_forest, gen_toy_tree, Fixture, HierarchyMode, Node};
use crate::joint::{gen_items, split_items};

fn tree(level_counts: &[usize], edges: &[(usize, usize)]) -> Hierarchy {
    let mut nodes = Vec::new();
    for (i, &c) in level_counts.iter().enumerate() {
        for _ in 0..c {
            let id = format!("n{}", nodes.len());
            nodes.push(Node::new(id.clone(), id, i + 1));
        }
    }
    Hierarchy::new(nodes, edges.to_vec(), HierarchyMode::Tree).unwrap()
}

/// Roots 0, 1; leaves 2, 3 under 0 and 4, 5 under 1.
fn two_by_two() -> Hierarchy {
    tree(&[2, 4], &[(0, 2), (0, 3), (1, 4), (1, 5)])
}

fn random_forest(rng: &mut ChaCha8Rng) -> Hierarchy {
    loop {
        let levels = rng.gen_range(1..=4);
        let mut counts = Vec::new();
        let mut c = rng.gen_range(1..=4);
        for _ in 0..levels {
            counts.push(c);
            c += rng.gen_range(0..=6);
        }
        if counts.iter().sum::<usize>() <= 50 {
            return gen_leveled_forest(&counts, rng.gen()).unwrap();
        }
    }
}

fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_leaf(rng: &mut ChaCha8Rng, layout: &LabelLayout) -> NodeIdx {
    let leaves = layout.level(layout.n_levels() - 1);
    leaves[rng.gen_range(0..leaves.len())]
}

fn leaf_ce(x: &[f64], k: usize) -> f64 {
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    z.ln() - x[k]
}

fn assert_distribution(p: &[f64]) {
    let s: f64 = p.iter().sum();
    assert!((s - 1.0).abs() < 1e-9, "sums to {s}");
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn layout_blocks() {
    let h = two_by_two();
    let l = LabelLayout::new(&h).unwrap();
    assert_eq!((l.n_labels(), l.n_levels(), l.n_leaves()), (6, 2, 4));
    assert_eq!(l.level_range(1), 2..6);
    assert_eq!(l.groups().len(), 3);
    assert_eq!(l.path(5), vec![1, 5]);
    let dag = Hierarchy::new(
        vec![Node::new("a", "a", 1), Node::new("b", "b", 1), Node::new("c", "c", 2)],
        vec![(0, 2), (1, 2)],
        HierarchyMode::Dag,
    )
    .unwrap();
    assert!(LabelLayout::new(&dag).is_err());
}

#[test]
fn ovr_loss_examples() {
    let h = two_by_two();
    let l = LabelLayout::new(&h).unwrap();
    let y = multi_hot(&l, &[0, 3]);
    assert!((ovr_loss(&l, &[0.0; 6], &y, None).unwrap() - LN_2).abs() < 1e-15);
    let sat: Vec<f64> = y.iter().map(|&b| if b { 30.0 } else { -30.0 }).collect();
    assert!(ovr_loss(&l, &sat, &y, None).unwrap() < 1e-9);
    let mut bad = y.clone();
    bad[5] = true;
    assert!(matches!(ovr_loss(&l, &sat, &bad, None), Err(Error::Argument(_))));
    assert!(ovr_loss(&l, &[0.0; 5], &y, None).is_err());

    let x = [0.3, -1.2, 2.0, 0.1, -0.4, 0.9];
    let perm = [4, 2, 0, 5, 1, 3];
    let xp: Vec<f64> = perm.iter().map(|&j| x[j]).collect();
    let yp: Vec<bool> = perm.iter().map(|&j| y[j]).collect();
    let a = ovr_loss(&l, &x, &y, None).unwrap();
    let b = ovr_loss(&l, &xp, &yp, None).unwrap();
    assert!((a - b).abs() < 1e-15);
}

#[test]
fn ovr_predict_examples() {
    let s = [0.1, 0.4, -2.0];
    assert!(ovr_predict(&s, &Thresholds::Ofadb(1.0)).unwrap().is_empty());
    assert_eq!(ovr_predict(&s, &Thresholds::Pcdb(vec![f64::NEG_INFINITY; 3])).unwrap(), vec![0, 1, 2]);
    assert_eq!(
        ovr_predict(&s, &Thresholds::Ofadb(0.2)).unwrap(),
        ovr_predict(&s, &Thresholds::Pcdb(vec![0.2; 3])).unwrap()
    );
    assert!(matches!(ovr_predict(&s, &Thresholds::Untuned), Err(Error::State(_))));
    assert!(ovr_predict(&s, &Thresholds::Pcdb(vec![0.0; 2])).is_err());
}

#[test]
fn tune_separable_and_empty_class() {
    let scores = vec![vec![2.0, 0.0], vec![1.5, 0.1], vec![-1.0, 0.2], vec![-3.0, -0.5]];
    let targets = vec![vec![true, false], vec![true, false], vec![false, false], vec![false, false]];
    let t = tune_ovr_thresholds(&scores, &targets, ThresholdPolicy::Pcdb).unwrap();
    assert_eq!(t.f1[0], 1.0);
    assert_eq!(t.thresholds, Thresholds::Pcdb(vec![0.25, f64::INFINITY]));
    assert_eq!(t.no_positives, vec![1]);
    assert!(tune_ovr_thresholds(&[], &[], ThresholdPolicy::Pcdb).is_err());
}

fn f1_at(scored: &[(f64, bool)], theta: f64) -> f64 {
    let tp = scored.iter().filter(|s| s.1 && s.0 > theta).count();
    let fp = scored.iter().filter(|s| !s.1 && s.0 > theta).count();
    let pos = scored.iter().filter(|s| s.1).count();
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (tp + fp + pos) as f64
    }
}

/// Every distinct prediction set for "score > θ" is reached by θ at one of
/// the scores or at −∞.
fn brute_best(scored: &[(f64, bool)]) -> f64 {
    scored.iter().map(|s| s.0).chain([f64::NEG_INFINITY]).map(|t| f1_at(scored, t)).fold(0.0, f64::max)
}

fn micro_f1(scores: &[Vec<f64>], targets: &[Vec<bool>], th: &Thresholds) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (s, t) in scores.iter().zip(targets) {
        let pred = ovr_predict(s, th).unwrap();
        for (j, &truth) in t.iter().enumerate() {
            match (pred.contains(&j), truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

#[test]
fn tuner_matches_scan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.gen_range(2..25);
        let scores: Vec<Vec<f64>> =
            (0..n).map(|_| (0..5).map(|_| (rng.gen_range(-3.0f64..3.0) * 4.0).round() / 4.0).collect()).collect();
        let targets: Vec<Vec<bool>> = (0..n).map(|_| (0..5).map(|_| rng.gen_bool(0.4)).collect()).collect();
        let pc = tune_ovr_thresholds(&scores, &targets, ThresholdPolicy::Pcdb).unwrap();
        for j in 0..5 {
            let col: Vec<(f64, bool)> = scores.iter().zip(&targets).map(|(s, t)| (s[j], t[j])).collect();
            let best = brute_best(&col);
            let th = pc.thresholds.get(j).unwrap();
            assert!((pc.f1[j] - best).abs() < 1e-12);
            assert!((f1_at(&col, th) - best).abs() < 1e-12);
        }
        let of = tune_ovr_thresholds(&scores, &targets, ThresholdPolicy::Ofadb).unwrap();
        let pooled: Vec<(f64, bool)> =
            scores.iter().zip(&targets).flat_map(|(s, t)| s.iter().copied().zip(t.iter().copied())).collect();
        let best = brute_best(&pooled);
        assert!((of.f1[0] - best).abs() < 1e-12);
        assert!((micro_f1(&scores, &targets, &of.thresholds) - best).abs() < 1e-12);
    }
}

/// Per-class tuning maximizes each class's F1, which is not the pooled
/// objective, so the shared threshold can win on micro-F1. Count how often.
#[test]
fn ofadb_versus_pcdb_micro_f1() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 1000;
    let mut ofadb_wins = 0;
    for _ in 0..trials {
        let n = rng.gen_range(5..40);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let targets: Vec<Vec<bool>> =
            scores.iter().map(|s| s.iter().map(|&v| rng.gen_bool(if v > 0.0 { 0.7 } else { 0.3 })).collect()).collect();
        let pc = tune_ovr_thresholds(&scores, &targets, ThresholdPolicy::Pcdb).unwrap();
        let of = tune_ovr_thresholds(&scores, &targets, ThresholdPolicy::Ofadb).unwrap();
        if micro_f1(&scores, &targets, &of.thresholds) > micro_f1(&scores, &targets, &pc.thresholds) + 1e-12 {
            ofadb_wins += 1;
        }
    }
    // Rare, but not impossible.
    assert!(ofadb_wins * 10 < trials, "OFADB beat PCDB on {ofadb_wins}/{trials}");
}

#[test]
fn per_level_examples() {
    let h = gen_toy_tree(3, 2).unwrap();
    let l = LabelLayout::new(&h).unwrap();
    let tau = l.path(l.level(2)[1]);
    let w = [1.0, 2.0, 0.5];
    let u = per_level_loss(&l, &[0.0; 7], &tau, &w).unwrap();
    let expect = 1.0 * 1f64.ln() + 2.0 * 2f64.ln() + 0.5 * 4f64.ln();
    assert!((u - expect).abs() < 1e-12);
    let sat: Vec<f64> = (0..7).map(|j| if tau.contains(&l.flat_node(j)) { 30.0 } else { -30.0 }).collect();
    assert!(per_level_loss(&l, &sat, &tau, &[1.0; 3]).unwrap() < 1e-9);

    let x = [0.2, 1.0, -0.5, 0.3, 0.0, 2.0, -1.0];
    let only1 = per_level_loss(&l, &x, &tau, &[1.0, 0.0, 0.0]).unwrap();
    assert!((only1 - (lse(&x[0..1]) - x[0])).abs() < 1e-15);
    let bad = [tau[0], tau[1], 0];
    assert!(matches!(per_level_loss(&l, &x, &bad, &w), Err(Error::Argument(_))));
    assert!(per_level_loss(&l, &x, &[0, 99, 3], &w).is_err());
}

#[test]
fn marginalize_up_examples() {
    let h = two_by_two();
    let l = LabelLayout::new(&h).unwrap();
    let p = marginalize_up(&l, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert!((p[0][0] - 0.3).abs() < 1e-15 && (p[0][1] - 0.7).abs() < 1e-15);
    assert_eq!(marginalize_up(&l, &[0.0, 0.0, 1.0, 0.0]).unwrap()[0], vec![0.0, 1.0]);
    assert!(matches!(marginalize_up(&l, &[0.1, 0.2, 0.3, 0.3]), Err(Error::Argument(_))));

    let t = gen_toy_tree(4, 3).unwrap();
    let lt = LabelLayout::new(&t).unwrap();
    let n = lt.n_leaves();
    for (i, lv) in marginalize_up(&lt, &vec![1.0 / n as f64; n]).unwrap().iter().enumerate() {
        let u = 1.0 / lt.level(i).len() as f64;
        assert!(lv.iter().all(|v| (v - u).abs() < 1e-12));
    }
}

#[test]
fn marginalization_examples() {
    let h = two_by_two();
    let l = LabelLayout::new(&h).unwrap();
    let x = [0.5, -1.0, 2.0, 0.3];
    let leaf = 4;
    let k = l.level_pos(leaf);
    let m = marginalization_loss(&l, &x, leaf, &[1.0, 1.0], &[2]).unwrap();
    assert!((m - leaf_ce(&x, k)).abs() < 1e-12);
    let sat: Vec<f64> = (0..4).map(|j| if j == k { 30.0 } else { -30.0 }).collect();
    assert!(marginalization_loss(&l, &sat, leaf, &[1.0, 1.0], &[1, 2]).unwrap() < 1e-9);
    assert!(matches!(marginalization_loss(&l, &x, leaf, &[1.0, 1.0], &[]), Err(Error::Argument(_))));
    assert!(marginalization_loss(&l, &x, 0, &[1.0, 1.0], &[1]).is_err());
    // Level-1 term is the log of the summed sibling probabilities.
    let p = softmax(&x);
    let full = marginalization_loss(&l, &x, leaf, &[1.0, 1.0], &[1, 2]).unwrap();
    assert!((full - (-(p[2] + p[3]).ln() - p[2].ln())).abs() < 1e-12);
}

#[test]
fn masked_examples() {
    let h = gen_toy_tree(4, 2).unwrap();
    let l = LabelLayout::new(&h).unwrap();
    let tau = l.path(l.level(3)[5]);
    let u = masked_loss(&l, &vec![0.0; l.n_labels()], &tau, &[1.0; 4]).unwrap();
    assert!((u - 3.0 * LN_2).abs() < 1e-12);
    assert!(matches!(masked_loss(&l, &vec![0.0; 15], &[0, 1, 3, 9], &[1.0; 4]), Err(Error::Argument(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for counts in [[1usize, 3].as_slice(), &[1, 1, 4]] {
        let h = gen_leveled_forest(counts, 0).unwrap();
        let l = LabelLayout::new(&h).unwrap();
        for _ in 0..20 {
            let x = random_logits(&mut rng, l.n_labels(), 3.0);
            let tau = l.path(random_leaf(&mut rng, &l));
            let w = vec![1.0; l.n_levels()];
            let a = masked_loss(&l, &x, &tau, &w).unwrap();
            let b = per_level_loss(&l, &x, &tau, &w).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn is_path(l: &LabelLayout, p: &[NodeIdx]) -> bool {
    p.len() == l.n_levels() && l.path(p[p.len() - 1]) == p
}

#[test]
fn masked_predict_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = fixture(Fixture::Cifar10);
    let l = LabelLayout::new(&h).unwrap();
    for _ in 0..10_000 {
        let x = random_logits(&mut rng, l.n_labels(), 5.0);
        let p = masked_predict(&l, &x).unwrap();
        assert!(is_path(&l, &p));
        let q = per_level_predict(&l, &x).unwrap();
        if is_path(&l, &q) {
            assert_eq!(p, q);
        }
    }
}

#[test]
fn masked_predict_counterexample() {
    let h = two_by_two();
    let l = LabelLayout::new(&h).unwrap();
    // Root 0 wins, but the strongest leaf sits under root 1.
    let x = [1.0, 0.0, 0.2, 0.1, 3.0, 0.0];
    assert_eq!(masked_predict(&l, &x).unwrap(), vec![0, 2]);
    assert_eq!(per_level_predict(&l, &x).unwrap(), vec![0, 4]);
}

/// Probability of each leaf as the plain product of per-group softmaxes.
fn path_product(h: &Hierarchy, l: &LabelLayout, x: &[f64], leaf: NodeIdx) -> f64 {
    let mut p = 1.0;
    let mut v = leaf;
    loop {
        let sibs: Vec<NodeIdx> = match h.parents(v).first() {
            Some(&u) => h.children(u).to_vec(),
            None => h.roots().to_vec(),
        };
        let z: f64 = sibs.iter().map(|&s| x[l.group_slot(s)].exp()).sum();
        p *= x[l.group_slot(v)].exp() / z;
        match h.parents(v).first() {
            Some(&u) => v = u,
            None => return p,
        }
    }
}

#[test]
fn hsoftmax_examples() {
    let h = gen_toy_tree(3, 2).unwrap();
    let l = LabelLayout::new(&h).unwrap();
    let o = hsoftmax(&l, &[0.0; 7]).unwrap();
    assert!(o.leaf_joint.iter().all(|p| (p - 0.25).abs() < 1e-15));
    assert!(matches!(hsoftmax(&l, &[0.0; 6]), Err(Error::Structural(_))));
    let leaf = l.level(2)[0];
    assert!((hsoftmax_loss(&l, &[0.0; 7], leaf).unwrap() - 4f64.ln()).abs() < 1e-12);
    assert!(hsoftmax_loss(&l, &[0.0; 7], 0).is_err());
}

#[test]
fn hsoftmax_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let h = random_forest(&mut rng);
        let l = LabelLayout::new(&h).unwrap();
        let x = random_logits(&mut rng, l.n_labels(), 4.0);
        let o = hsoftmax(&l, &x).unwrap();
        for (k, &leaf) in l.level(l.n_levels() - 1).iter().enumerate() {
            assert!((o.leaf_joint[k] - path_product(&h, &l, &x, leaf)).abs() < 1e-12);
            let tau_loss = hsoftmax_loss(&l, &x, leaf).unwrap();
            assert!((tau_loss + o.leaf_joint[k].ln()).abs() < 1e-9);
        }
        assert_distribution(&o.leaf_joint);
        let up = marginalize_up(&l, &o.leaf_joint).unwrap();
        for (a, b) in up.iter().zip(&o.per_level) {
            assert_distribution(b);
            assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-12));
        }
    }
}

fn check_grad(f: &dyn Fn(&[f64]) -> (f64, Vec<f64>), x: &[f64]) {
    let (_, g) = f(x);
    let h = 1e-6;
    for j in 0..x.len() {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[j] += h;
        b[j] -= h;
        let fd = (f(&a).0 - f(&b).0) / (2.0 * h);
        assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "coordinate {j}: fd {fd} vs {}", g[j]);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let h = random_forest(&mut rng);
        let l = LabelLayout::new(&h).unwrap();
        let leaf = random_leaf(&mut rng, &l);
        let tau = l.path(leaf);
        let w: Vec<f64> = (0..l.n_levels()).map(|_| rng.gen_range(0.1..2.0)).collect();
        let cw: Vec<f64> = (0..l.n_labels()).map(|_| rng.gen_range(0.5..1.5)).collect();
        let y = multi_hot(&l, &tau);
        let x = random_logits(&mut rng, l.n_labels(), 2.0);
        let xl = random_logits(&mut rng, l.n_leaves(), 2.0);
        check_grad(&|v| ovr_loss_grad(&l, v, &y, Some(&cw)).unwrap(), &x);
        check_grad(&|v| per_level_loss_grad(&l, v, &tau, &w).unwrap(), &x);
        check_grad(&|v| masked_loss_grad(&l, v, &tau, &w).unwrap(), &x);
        check_grad(&|v| hsoftmax_loss_grad(&l, v, leaf).unwrap(), &x);
        let mask: Vec<usize> = (1..=l.n_levels()).filter(|_| rng.gen_bool(0.6)).collect();
        let mask = if mask.is_empty() { vec![l.n_levels()] } else { mask };
        check_grad(&|v| marginalization_loss_grad(&l, v, leaf, &w, &mask).unwrap(), &xl);
    }
}

#[test]
fn head_config_dispatch() {
    let h = fixture(Fixture::Cifar10);
    let l = LabelLayout::new(&h).unwrap();
    let last = l.n_levels() - 1;
    let leaf = l.level(last)[3];
    let tau = l.path(leaf);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kinds =
        [HeadKind::OneVsRest, HeadKind::PerLevel, HeadKind::Marginalization, HeadKind::Masked, HeadKind::Hsoftmax];
    for kind in kinds {
        let cfg = HeadConfig::new(kind, l.n_levels());
        cfg.validate(&l).unwrap();
        let n = cfg.logit_dim(&l);
        let x = random_logits(&mut rng, n, 1.0);
        let (loss, g) = cfg.loss_grad(&l, &x, leaf).unwrap();
        assert!(loss >= 0.0 && g.len() == n);
        check_grad(&|v| cfg.loss_grad(&l, v, leaf).unwrap(), &x);

        let sat: Vec<f64> = match kind {
            HeadKind::Marginalization => (0..n).map(|k| if l.level(last)[k] == leaf { 30.0 } else { -30.0 }).collect(),
            HeadKind::Hsoftmax => {
                let mut s = vec![-30.0; n];
                tau.iter().for_each(|&v| s[l.group_slot(v)] = 30.0);
                s
            }
            _ => (0..n).map(|j| if tau.contains(&l.flat_node(j)) { 30.0 } else { -30.0 }).collect(),
        };
        assert!(cfg.loss_grad(&l, &sat, leaf).unwrap().0 < 1e-9, "{kind:?}");
        let mut pred = cfg.predict(&l, &sat, &Thresholds::Ofadb(0.0)).unwrap();
        pred.sort_unstable();
        let mut want = tau.clone();
        want.sort_unstable();
        assert_eq!(pred, want, "{kind:?}");
        if let Some(ps) = cfg.level_probabilities(&l, &x).unwrap() {
            ps.iter().for_each(|p| assert_distribution(p));
        }
    }
    let mut bad = HeadConfig::new(HeadKind::PerLevel, l.n_levels());
    bad.loss_levels.clear();
    assert!(bad.validate(&l).is_err());
    assert!(HeadConfig::new(HeadKind::PerLevel, 2).validate(&l).is_err());
}

#[test]
fn class_weights_scale_terms() {
    let h = two_by_two();
    let l = LabelLayout::new(&h).unwrap();
    let counts = [30, 10, 10, 20, 5, 5];
    let cfg = HeadConfig::new(HeadKind::PerLevel, 2)
        .with_class_weights(&h, &counts, crate::hierarchy::WeightScheme::Inverse)
        .unwrap();
    let w = cfg.class_weights.clone().unwrap();
    assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
    assert!(w[1] > w[0]);
    let x = [0.1, 0.2, 0.3, -0.1, 0.5, 0.0];
    let plain = HeadConfig::new(HeadKind::PerLevel, 2);
    let a = cfg.loss_grad(&l, &x, 4).unwrap().0;
    let t0 = per_level_loss(&l, &x, &[1, 4], &[1.0, 0.0]).unwrap();
    let t1 = per_level_loss(&l, &x, &[1, 4], &[0.0, 1.0]).unwrap();
    assert!((a - (w[1] * t0 + w[4] * t1)).abs() < 1e-12);
    assert!((plain.loss_grad(&l, &x, 4).unwrap().0 - (t0 + t1)).abs() < 1e-12);
}

#[test]
fn linear_heads_learn_cifar_clusters() {
    let h = fixture(Fixture::Cifar10);
    let items = gen_items(&h, 20, 8, 0.3, 3).unwrap();
    let split = split_items(&items, 0.1, 0.1, 3).unwrap();
    for kind in [HeadKind::PerLevel, HeadKind::Hsoftmax, HeadKind::OneVsRest] {
        let mut cfg = HeadTrainConfig::new(HeadConfig::new(kind, h.n_levels()));
        cfg.epochs = 60;
        cfg.lr = 0.05;
        let (_, report) = train_heads(&h, &items, &split, &cfg).unwrap();
        let f1 = report.test.as_ref().unwrap().micro.f1;
        assert!(f1 > 0.8, "{kind:?}: test micro-F1 {f1}");
        assert!(report.epochs.first().unwrap().loss > report.epochs.last().unwrap().loss);
    }
}

#[test]
fn head_training_is_deterministic() {
    let h = fixture(Fixture::Fmnist);
    let items = gen_items(&h, 6, 4, 0.5, 1).unwrap();
    let split = split_items(&items, 0.2, 0.2, 1).unwrap();
    let mut cfg = HeadTrainConfig::new(HeadConfig::new(HeadKind::Masked, h.n_levels()));
    cfg.epochs = 5;
    let a = train_heads(&h, &items, &split, &cfg).unwrap();
    let b = train_heads(&h, &items, &split, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn losses_are_non_negative(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_forest(&mut rng);
        let l = LabelLayout::new(&h).unwrap();
        let leaf = random_leaf(&mut rng, &l);
        let tau = l.path(leaf);
        let w = vec![1.0; l.n_levels()];
        let mask: Vec<usize> = (1..=l.n_levels()).collect();
        let x = random_logits(&mut rng, l.n_labels(), scale);
        let xl = random_logits(&mut rng, l.n_leaves(), scale);
        prop_assert!(ovr_loss(&l, &x, &multi_hot(&l, &tau), None).unwrap() >= 0.0);
        prop_assert!(per_level_loss(&l, &x, &tau, &w).unwrap() >= 0.0);
        prop_assert!(masked_loss(&l, &x, &tau, &w).unwrap() >= 0.0);
        prop_assert!(hsoftmax_loss(&l, &x, leaf).unwrap() >= 0.0);
        prop_assert!(marginalization_loss(&l, &xl, leaf, &w, &mask).unwrap() >= 0.0);
        let o = hsoftmax(&l, &x).unwrap();
        for p in o.per_level.iter().chain([&softmax(&xl)]) {
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn leaf_only_mask_is_cross_entropy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_forest(&mut rng);
        let l = LabelLayout::new(&h).unwrap();
        let leaf = random_leaf(&mut rng, &l);
        let xl = random_logits(&mut rng, l.n_leaves(), 5.0);
        let w = vec![1.0; l.n_levels()];
        let m = marginalization_loss(&l, &xl, leaf, &w, &[l.n_levels()]).unwrap();
        prop_assert!((m - leaf_ce(&xl, l.level_pos(leaf))).abs() < 1e-12);
    }
}
