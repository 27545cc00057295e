use loco_core::adapter::{forward, merge, pretrained_forward, LocoAdapter};
use loco_core::baselines::{householder_apply, oft_apply, BlockDiagonalRotation, HouseholderChain};
use loco_core::checkpoint;
use loco_core::matrix::{matmul_nt, orthogonality_residual, rand_gaussian};
use loco_core::{
    apply_rotation, build_skew, cayley_naive, cayley_woodbury, chain_exact, chain_first_order,
    deviation_report, materialize, ChainMode, LowRankSkewFactors, Matrix, Rng, RotationChain,
    TemperatureParam,
};
use proptest::prelude::*;

fn chain(seed: u64, d: usize, r: usize, n: usize, std: f64, mode: ChainMode) -> RotationChain {
    let mut rng = Rng::new(seed);
    let comps = (0..n)
        .map(|_| LowRankSkewFactors::random(&mut rng, d, r, std).unwrap())
        .collect();
    RotationChain::new(comps, mode).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=24).prop_flat_map(|d| (Just(d), 1..=d.min(4)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skew_is_exactly_antisymmetric(seed in any::<u64>(), (d, r) in dims(), std in 0.01f64..3.0) {
        let f = LowRankSkewFactors::random(&mut Rng::new(seed), d, r, std).unwrap();
        let a = build_skew(&f).unwrap();
        for i in 0..d {
            prop_assert_eq!(a[(i, i)], 0.0);
            for j in 0..d {
                prop_assert_eq!(a[(i, j)], -a[(j, i)]);
            }
        }
    }

    #[test]
    fn woodbury_matches_dense_cayley(
        seed in any::<u64>(), (d, r) in dims(), std in 0.01f64..1.5, t in 0.0f64..2.5,
    ) {
        let f = LowRankSkewFactors::random(&mut Rng::new(seed), d, r, std).unwrap();
        let core = cayley_woodbury(&f, TemperatureParam::new(t).unwrap()).unwrap();
        let dense = cayley_naive(&build_skew(&f).unwrap().scale(t)).unwrap();
        prop_assert!(materialize(&core).distance(&dense) <= 1e-10 * d as f64);
        prop_assert!(orthogonality_residual(&dense).unwrap() <= 1e-10 * d as f64);
    }

    #[test]
    fn rotation_preserves_row_norms(seed in any::<u64>(), (d, r) in dims(), std in 0.01f64..2.0) {
        let mut rng = Rng::new(seed);
        let f = LowRankSkewFactors::random(&mut rng, d, r, std).unwrap();
        let xs = rand_gaussian(&mut rng, 5, d, 1.0);
        let ys = apply_rotation(&cayley_woodbury(&f, TemperatureParam::default()).unwrap(), &xs).unwrap();
        for i in 0..5 {
            let nx: f64 = xs.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = ys.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((nx - ny).abs() <= 1e-12 * nx.max(1.0));
        }
    }

    #[test]
    fn deviation_never_exceeds_bound(
        seed in any::<u64>(),
        n in prop::sample::select(vec![1usize, 2, 4, 8]),
        d in prop::sample::select(vec![16usize, 64]),
        r in prop::sample::select(vec![1usize, 2, 4]),
        log_std in -4.0f64..0.0,
    ) {
        let c = chain(seed, d, r, n, 10f64.powf(log_std), ChainMode::FirstOrder);
        let rep = deviation_report(&c).unwrap();
        prop_assert!(rep.deviation <= rep.bound + 1e-12, "{rep:?}");
        prop_assert!(rep.satisfied);
    }

    #[test]
    fn single_component_first_order_is_exact(seed in any::<u64>(), (d, r) in dims(), std in 0.01f64..1.0) {
        let c = chain(seed, d, r, 1, std, ChainMode::FirstOrder);
        let xs = rand_gaussian(&mut Rng::new(seed ^ 1), 4, d, 1.0);
        let fo = chain_first_order(&c, &xs).unwrap();
        let ex = chain_exact(&c, &xs).unwrap();
        prop_assert!(fo.distance(&ex) <= 1e-13 * ex.frobenius_norm());
    }

    #[test]
    fn merged_weight_keeps_gram(
        seed in any::<u64>(), (d, r) in dims(), n in 1usize..4, k in 1usize..10, std in 0.01f64..1.0,
    ) {
        let c = chain(seed, d, r, n, std, ChainMode::Exact);
        let w0 = rand_gaussian(&mut Rng::new(seed ^ 2), k, d, 1.0);
        let a = LocoAdapter::new(w0.clone(), c).unwrap();
        let m = merge(&a).unwrap();
        let g0 = matmul_nt(&w0, &w0).unwrap();
        let g1 = matmul_nt(&m, &m).unwrap();
        prop_assert!(g1.distance(&g0) <= 1e-9 * g0.frobenius_norm());
        let xs = rand_gaussian(&mut Rng::new(seed ^ 3), 3, d, 1.0);
        let merged = pretrained_forward(&m, &xs).unwrap();
        let direct = forward(&a, &xs).unwrap();
        prop_assert!(merged.distance(&direct) <= 1e-10 * direct.frobenius_norm().max(1e-300));
    }

    #[test]
    fn zero_temperature_is_pretrained(seed in any::<u64>(), (d, r) in dims(), n in 1usize..4) {
        for mode in [ChainMode::Exact, ChainMode::FirstOrder] {
            let c = chain(seed, d, r, n, 0.5, mode).with_temperature(TemperatureParam::new(0.0).unwrap());
            let w0 = rand_gaussian(&mut Rng::new(seed ^ 4), 3, d, 1.0);
            let xs = rand_gaussian(&mut Rng::new(seed ^ 5), 4, d, 1.0);
            let a = LocoAdapter::new(w0.clone(), c).unwrap();
            prop_assert_eq!(forward(&a, &xs).unwrap(), pretrained_forward(&w0, &xs).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), (d, r) in dims(), n in 1usize..4, k in 1usize..6, t in -2.0f64..2.0) {
        let c = chain(seed, d, r, n, 0.4, ChainMode::FirstOrder).with_temperature(TemperatureParam::new(t).unwrap());
        let a = LocoAdapter::new(rand_gaussian(&mut Rng::new(seed ^ 6), k, d, 1.0), c).unwrap();
        let bytes = checkpoint::to_bytes(&a).unwrap();
        let back = checkpoint::load(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &a);
        prop_assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn baselines_are_orthogonal(seed in any::<u64>(), blocks in 1usize..5, b in 1usize..6, r in 1usize..6) {
        let d = blocks * b;
        let mut rng = Rng::new(seed);
        let oft = BlockDiagonalRotation::random(&mut rng, d, b, 0.8).unwrap();
        prop_assert!(orthogonality_residual(&oft.materialize().unwrap()).unwrap() <= 1e-10 * d as f64);
        let hh = HouseholderChain::random(&mut rng, d, r).unwrap();
        prop_assert!(orthogonality_residual(&hh.materialize()).unwrap() <= 1e-10 * d as f64);
        let xs = rand_gaussian(&mut rng, 3, d, 1.0);
        let id = Matrix::identity(d);
        prop_assert!(oft_apply(&oft, &xs).unwrap().distance(&matmul_nt(&xs, &oft.materialize().unwrap()).unwrap()) <= 1e-12 * d as f64);
        prop_assert!(householder_apply(&hh, &id).unwrap().distance(&hh.materialize().transpose()) == 0.0);
    }
}

#[test]
fn first_order_bits_do_not_depend_on_thread_count() {
    let c = chain(77, 96, 4, 8, 0.1, ChainMode::FirstOrder);
    let xs = rand_gaussian(&mut Rng::new(78), 200, 96, 1.0);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| chain_first_order(&c, &xs).unwrap())
    };
    let one = run(1);
    for threads in [2, 3, 8] {
        assert_eq!(run(threads), one);
    }
}
