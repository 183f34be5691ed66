use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use conetax::geometry::{exact_embedding, exp0, log0};
use conetax::hierarchy::{gen_leveled_forest, sample_negatives_lenient, split_edges, SamplingGraph};
use conetax::io::{embeddings_tsv, parse_embeddings};
use conetax::metrics::reconstruction_score;
use conetax::{Edge, EnergyModel, Hierarchy};

fn forest() -> impl Strategy<Value = Hierarchy> {
    (prop::collection::vec(1usize..6, 2..5), any::<u64>()).prop_map(|(steps, seed)| {
        let mut counts = Vec::new();
        let mut c = 0;
        for s in steps {
            c += s;
            counts.push(c);
        }
        gen_leveled_forest(&counts, seed).unwrap()
    })
}

fn models() -> [EnergyModel; 3] {
    [
        EnergyModel::order_embedding(),
        EnergyModel::euclidean_cone(0.1).unwrap(),
        EnergyModel::hyperbolic_cone(0.1).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_the_closure(h in forest(), seed in any::<u64>()) {
        let s = split_edges(&h, 0.1, 0.2, seed).unwrap();
        let closure = h.transitive_closure();
        let parts = [&s.basic, &s.nonbasic_train, &s.val, &s.test];
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let union: BTreeSet<Edge> = parts.iter().flat_map(|p| p.iter().copied()).collect();
        prop_assert_eq!(n, union.len());
        prop_assert_eq!(&union, &closure);
        prop_assert_eq!(s.closure_size, closure.len());
        let basic: BTreeSet<Edge> = s.basic.iter().copied().collect();
        prop_assert_eq!(basic, h.transitive_reduction());
    }

    #[test]
    fn negatives_avoid_the_closure(h in forest(), seed in any::<u64>()) {
        let g = SamplingGraph::from_hierarchy(&h);
        let closure = h.transitive_closure();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &e in &closure {
            let b = sample_negatives_lenient(&g, e, 5, 5, true, |_| false, &mut rng).unwrap();
            for n in &b.edges {
                prop_assert!(!closure.contains(n));
                prop_assert!(n.0 != n.1);
            }
        }
    }

    #[test]
    fn exact_embeddings_reconstruct_perfectly(h in forest()) {
        for m in models() {
            let t = exact_embedding(&h, &m).unwrap();
            let r = reconstruction_score(&m, &t, &h).unwrap();
            prop_assert_eq!(r.full_f1, 1.0);
        }
    }

    #[test]
    fn embedding_tsv_is_bit_exact(h in forest()) {
        let t = exact_embedding(&h, &EnergyModel::hyperbolic_cone(0.1).unwrap()).unwrap();
        let back = parse_embeddings(std::path::Path::new("mem.tsv"), &embeddings_tsv(&t)).unwrap();
        prop_assert_eq!(back.ids(), t.ids());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn log0_inverts_exp0(v in prop::collection::vec(-1.0f64..1.0, 1..20)) {
        let x = exp0(&v, 1e-5);
        let back = log0(&x).unwrap();
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
