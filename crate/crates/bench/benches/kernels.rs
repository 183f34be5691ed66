use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use conetax::heads::hsoftmax;
use conetax::hierarchy::{
    ethec_level_counts, gen_leveled_forest, sample_negatives_lenient, split_edges, SamplingGraph,
};
use conetax::trainer::train_labels;
use conetax::{EnergyModel, LabelLayout, ModelKind, TrainConfig};

fn point(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.into_iter().map(|c| c * r / n).collect()
}

fn energy(c: &mut Criterion) {
    let mut g = c.benchmark_group("energy_grad");
    let models = [
        ("oe", EnergyModel::order_embedding()),
        ("ec", EnergyModel::euclidean_cone(0.1).unwrap()),
        ("hc", EnergyModel::hyperbolic_cone(0.1).unwrap()),
    ];
    for d in [10, 100] {
        for (name, m) in &models {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let x = point(&mut rng, d, 0.5);
            let y = point(&mut rng, d, 0.7);
            g.bench_with_input(BenchmarkId::new(*name, d), &d, |b, _| {
                b.iter(|| m.energy_grad(black_box(&x), black_box(&y)).unwrap())
            });
        }
    }
    g.finish();
}

fn closure(c: &mut Criterion) {
    let h = gen_leveled_forest(&ethec_level_counts(), 0).unwrap();
    c.bench_function("closure/ethec_forest", |b| b.iter(|| black_box(&h).transitive_closure()));
}

fn sampler(c: &mut Criterion) {
    let h = gen_leveled_forest(&ethec_level_counts(), 0).unwrap();
    let g = SamplingGraph::from_hierarchy(&h);
    let edges: Vec<_> = h.transitive_closure().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut i = 0;
    c.bench_function("sampler/5+5_per_level", |b| {
        b.iter(|| {
            i = (i + 1) % edges.len();
            sample_negatives_lenient(&g, edges[i], 5, 5, true, |_| false, &mut rng).unwrap()
        })
    });
}

fn heads(c: &mut Criterion) {
    let h = gen_leveled_forest(&ethec_level_counts(), 0).unwrap();
    let layout = LabelLayout::new(&h).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..layout.n_labels()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    c.bench_function("hsoftmax/ethec_forest", |b| b.iter(|| hsoftmax(&layout, black_box(&x)).unwrap()));
}

fn epoch(c: &mut Criterion) {
    let h = gen_leveled_forest(&ethec_level_counts(), 0).unwrap();
    let split = split_edges(&h, 0.1, 0.2, 0).unwrap();
    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for kind in [ModelKind::OrderEmbedding, ModelKind::EuclideanCone, ModelKind::HyperbolicCone] {
        let mut cfg = TrainConfig::labels(kind, 10);
        cfg.epochs = 1;
        g.bench_function(kind.short_name(), |b| b.iter(|| train_labels(&h, &split, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, energy, closure, sampler, heads, epoch);
criterion_main!(benches);
