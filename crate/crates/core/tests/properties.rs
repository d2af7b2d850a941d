use approx::assert_abs_diff_eq;
use cglab_core::factor_model::{recover_by_averaging, recover_by_least_squares};
use cglab_core::metrics::{effective_rank, orthogonality, projected_whitened_r2, R2Options};
use cglab_core::oracles::packing::region_count_affine;
use cglab_core::probe_trainer::{log_sum_exp, softmax};
use cglab_core::synthetic_lab::generators::generate_factorized;
use cglab_core::{read_dump, write_dump, ConceptSpace, EmbeddingSet, SpanProjector, ValidityRule};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn space_strategy() -> impl Strategy<Value = ConceptSpace> {
    prop::collection::vec(2usize..5, 1..4).prop_map(|c| ConceptSpace::new(c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tuple_index_is_a_bijection(space in space_strategy()) {
        let tuples = space.enumerate_tuples();
        prop_assert_eq!(tuples.len(), space.grid_size());
        for (i, t) in tuples.iter().enumerate() {
            prop_assert_eq!(space.tuple_index(t).unwrap(), i);
            prop_assert_eq!(&space.tuple_at(i).unwrap(), t);
        }
    }

    #[test]
    fn cross_dataset_size_and_marginals(space in space_strategy(), pick in any::<u64>()) {
        let center = space.tuple_at((pick % space.grid_size() as u64) as usize).unwrap();
        let cross = space.cross_dataset(&center).unwrap();
        prop_assert_eq!(cross.len(), space.cross_size());
        for i in 0..space.k() {
            let counts = cross.marginal_counts(&space, i).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), cross.len());
            prop_assert!(counts.iter().all(|&c| c >= 1));
        }
    }

    #[test]
    fn fraction_supports_are_deterministic(space in space_strategy(), seed in any::<u64>()) {
        let s = space.sample_support(&ValidityRule::Fraction(0.5), seed).unwrap();
        prop_assert_eq!(s.len(), space.grid_size() / 2);
        prop_assert!(s.tuples().iter().all(|t| space.contains(t)));
        let again = space.sample_support(&ValidityRule::Fraction(0.5), seed).unwrap();
        prop_assert_eq!(s, again);
    }

    #[test]
    fn dump_round_trip_is_bit_exact(space in space_strategy(), d in 1usize..6, seed in any::<u64>()) {
        let (set, _) = generate_factorized(&space, d, false, 1.0, seed).unwrap();
        // Dumps store f32, so start from f32-representable values.
        let data = set.data().map(|v| v as f32 as f64);
        let set = set.with_data(data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dump(&set, dir.path()).unwrap();
        let back = read_dump(dir.path()).unwrap();
        prop_assert_eq!(back.labels(), set.labels());
        for (a, b) in back.data().iter().zip(set.data().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn projector_is_idempotent(rows in 1usize..5, d in 1usize..7, seed in any::<u64>()) {
        let w = random_matrix(rows, d, seed);
        let p = SpanProjector::fit(&w).unwrap();
        let x = random_matrix(6, d, seed ^ 1);
        let once = p.project(&x).unwrap();
        let twice = p.project(&once).unwrap();
        prop_assert!((&once - &twice).amax() < 1e-10);
    }

    #[test]
    fn averaging_matches_least_squares_on_full_grids(space in space_strategy(), d in 1usize..5, seed in any::<u64>()) {
        let (set, _) = generate_factorized(&space, d, false, 1.0, seed).unwrap();
        let a = recover_by_averaging(&set).unwrap();
        let l = recover_by_least_squares(&set).unwrap();
        prop_assert!(a.max_abs_diff(&l) < 1e-8);
    }

    #[test]
    fn r2_is_invariant_to_global_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let space = ConceptSpace::new(vec![3, 2]).unwrap();
        let (set, _) = generate_factorized(&space, 4, false, 1.0, seed).unwrap();
        let noise = random_matrix(set.rows(), 4, seed ^ 7) * 0.3;
        let noisy = set.with_data(set.data() + noise).unwrap();
        let shifted = noisy.with_data(noisy.data().add_scalar(shift)).unwrap();
        let opts = R2Options { whiten: false, ..R2Options::default() };
        let r = r2(&noisy, &opts);
        let s = r2(&shifted, &opts);
        assert_abs_diff_eq!(r, s, epsilon = 1e-8);
    }

    #[test]
    fn softmax_ignores_constant_shift(x in prop::collection::vec(-30.0f64..30.0, 1..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let (p, q) = (softmax(&x), softmax(&shifted));
        for (a, b) in p.iter().zip(&q) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(log_sum_exp(&shifted) - log_sum_exp(&x), c, epsilon = 1e-9);
    }

    #[test]
    fn orthogonality_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let space = ConceptSpace::new(vec![3, 3, 2]).unwrap();
        let (_, f) = generate_factorized(&space, 6, false, 1.0, seed).unwrap();
        let (_, g) = generate_factorized(&space, 6, false, scale, seed).unwrap();
        let (a, b) = (orthogonality(&f).unwrap(), orthogonality(&g).unwrap());
        assert_abs_diff_eq!(a.mean_across(), b.mean_across(), epsilon = 1e-9);
        assert_abs_diff_eq!(a.mean_within(), b.mean_within(), epsilon = 1e-9);
    }

    #[test]
    fn effective_rank_grows_with_threshold(seed in any::<u64>(), lo in 0.1f64..0.9, gap in 0.0f64..0.1) {
        let space = ConceptSpace::new(vec![8]).unwrap();
        let (_, f) = generate_factorized(&space, 10, false, 1.0, seed).unwrap();
        let a = effective_rank(&f, 0, lo).unwrap().rank;
        let b = effective_rank(&f, 0, lo + gap).unwrap().rank;
        prop_assert!(a <= b);
    }

    #[test]
    fn region_count_is_monotone(m in 0u64..30, d in 0u64..10) {
        let r = region_count_affine(m, d).unwrap();
        prop_assert!(r <= region_count_affine(m + 1, d).unwrap());
        prop_assert!(r <= region_count_affine(m, d + 1).unwrap());
        prop_assert!(r <= 1u64 << m);
    }
}

fn r2(set: &EmbeddingSet, opts: &R2Options) -> f64 {
    let f = recover_by_averaging(set).unwrap();
    projected_whitened_r2(set, &f, None, opts).unwrap().r2
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}
