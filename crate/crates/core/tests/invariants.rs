use proptest::prelude::*;
use treemc::engine::{simulate_full_tree, simulate_leaves_joint, simulate_walk, FullTreeLimits};
use treemc::kernels::{IncrementLaw, KernelFamily, MixtureRow};
use treemc::limits::generator_estimate;
use treemc::measures::{ks_distance, tv_distance_discrete, EmpiricalMeasure, TestFunction};
use treemc::rng::VertexRngPolicy;
use treemc::tree::{mrca, Vertex};
use treemc::LimitLaw;

fn families() -> Vec<KernelFamily> {
    vec![
        KernelFamily::donsker(IncrementLaw::Rademacher, 4).unwrap(),
        KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 1.0 }, 9).unwrap(),
        KernelFamily::poisson(1.0, 8).unwrap(),
        KernelFamily::symmetric_product(IncrementLaw::Gaussian { sigma: 0.5 }, 3).unwrap(),
        KernelFamily::custom(
            vec![
                MixtureRow { shift0: 1.0, shift1: -1.0, prob: 0.5 },
                MixtureRow { shift0: 0.0, shift1: 2.0, prob: 0.5 },
            ],
            2,
        )
        .unwrap(),
    ]
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn table(values: Vec<f64>) -> TestFunction {
    let knots = (0..values.len()).map(|i| i as f64 - 2.0).collect();
    TestFunction::Table { knots, values }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn joint_leaves_equal_full_tree_restriction(
        seed in any::<u64>(),
        k in 1u32..=12,
        fam in 0usize..5,
        picks in proptest::collection::vec(any::<u64>(), 1..40),
    ) {
        let kernel = &families()[fam];
        let policy = VertexRngPolicy::new(seed);
        let full = simulate_full_tree(kernel, 0.0, k, &policy, &FullTreeLimits::default(), |_| {}).unwrap();
        let leaves: Vec<Vertex> = picks
            .iter()
            .map(|p| Vertex::from_index(k, p % (1u64 << k)).unwrap())
            .collect();
        let joint = simulate_leaves_joint(kernel, 0.0, &leaves, &policy).unwrap();
        for (v, x) in &joint {
            prop_assert_eq!(full.state_at(v).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn simulation_is_independent_of_thread_count(seed in any::<u64>(), fam in 0usize..5) {
        let kernel = &families()[fam];
        let policy = VertexRngPolicy::new(seed);
        let run = || {
            let full = simulate_full_tree(kernel, 0.0, 14, &policy, &FullTreeLimits::default(), |_| {})
                .unwrap()
                .into_states();
            let walk = simulate_walk(kernel, 0.0, 200, &policy).unwrap().states;
            let leaves: Vec<Vertex> = (0..64u64).map(|i| Vertex::from_index(20, i * 16_411).unwrap()).collect();
            let joint: Vec<f64> = simulate_leaves_joint(kernel, 0.0, &leaves, &policy).unwrap().into_values().collect();
            (full, walk, joint)
        };
        let a = in_pool(1, run);
        let b = in_pool(4, run);
        prop_assert!(a == b);
    }

    #[test]
    fn mrca_depth_is_shared_prefix_at_any_depth(
        bits_a in proptest::collection::vec(any::<bool>(), 0..300),
        flip in any::<prop::sample::Index>(),
        tail in proptest::collection::vec(any::<bool>(), 0..300),
    ) {
        let depth = bits_a.len();
        let mut bits_b = bits_a.clone();
        let mut shared = depth;
        if depth > 0 {
            let i = flip.index(depth);
            bits_b[i] = !bits_b[i];
            for (j, t) in tail.iter().enumerate().take(depth - i - 1) {
                bits_b[i + 1 + j] = *t;
            }
            shared = i;
        }
        let (a, b) = (Vertex::from_bits(&bits_a), Vertex::from_bits(&bits_b));
        let m = mrca(&a, &b);
        prop_assert_eq!(m.depth() as usize, shared);
        prop_assert!(m.is_ancestor_of(&a) && m.is_ancestor_of(&b));
    }

    #[test]
    fn generator_is_linear_and_kills_constants(
        v1 in proptest::collection::vec(-3.0f64..3.0, 5),
        v2 in proptest::collection::vec(-3.0f64..3.0, 5),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        c in -5.0f64..5.0,
        x in -3.0f64..3.0,
        fam in 0usize..4,
    ) {
        let kernel = &families()[fam];
        let x = if fam == 2 { x.abs().round() } else { x };
        let combo: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| a * p + b * q).collect();
        let g = |phi: &TestFunction| generator_estimate(kernel, phi, x).unwrap();
        let lhs = g(&table(combo));
        let rhs = a * g(&table(v1.clone())) + b * g(&table(v2.clone()));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
        prop_assert_eq!(g(&TestFunction::constant(c)), 0.0);
    }

    #[test]
    fn sampled_generator_is_linear_for_custom(
        v1 in proptest::collection::vec(-3.0f64..3.0, 5),
        v2 in proptest::collection::vec(-3.0f64..3.0, 5),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let kernel = &families()[4];
        let est = |phi: &TestFunction| {
            let mut rng = treemc::rng::StreamRng::new(seed);
            treemc::limits::generator_estimate_sampled(kernel, phi, 0.5, 200, &mut rng).unwrap().0
        };
        let combo: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| a * p + b * q).collect();
        let lhs = est(&table(combo));
        let rhs = a * est(&table(v1.clone())) + b * est(&table(v2.clone()));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        prop_assert_eq!(est(&TestFunction::constant(1.5)), 0.0);
    }

    #[test]
    fn distances_are_probabilities(atoms in proptest::collection::vec(0u32..12, 1..200), mean in 0.1f64..6.0) {
        let z = EmpiricalMeasure::new(atoms.iter().map(|&a| f64::from(a)).collect()).unwrap();
        let poi = LimitLaw::Poisson { mean };
        let tv = tv_distance_discrete(&z, |j| treemc::limits::limit_pmf(&poi, j).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&tv));
        let normal = LimitLaw::Normal { mean, variance: 1.0 };
        let ks = ks_distance(&z, &normal);
        prop_assert!((0.0..=1.0).contains(&ks));
    }
}
