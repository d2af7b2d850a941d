use std::hint::black_box;

use cglab_core::embedding_store::{WhitenTransform, DEFAULT_WHITEN_TOL};
use cglab_core::factor_model::{recover_by_averaging, recover_by_least_squares};
use cglab_core::metrics::{projected_whitened_r2, R2Options};
use cglab_core::oracles::packing::{brute_force_region_count, random_arrangement};
use cglab_core::oracles::svm::hard_margin_svm;
use cglab_core::synthetic_lab::generators::generate_factorized;
use cglab_core::{ConceptSpace, Geometry, Loss, ProbeBank};
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, rows: usize, d: usize, shift: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, d, |_, c| rng.random_range(-1.0..1.0) + if c == 0 { shift } else { 0.0 })
}

fn svm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pos = cloud(&mut rng, 200, 20, 1.5);
    let neg = cloud(&mut rng, 200, 20, -1.5);
    c.bench_function("svm 200+200 points d=20", |b| {
        b.iter(|| hard_margin_svm(black_box(&pos), black_box(&neg)).unwrap())
    });
}

fn whitening(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = cloud(&mut rng, 2000, 64, 0.0);
    c.bench_function("whiten fit 2000x64", |b| {
        b.iter(|| WhitenTransform::fit(black_box(&x), DEFAULT_WHITEN_TOL).unwrap())
    });
}

fn training_epoch(c: &mut Criterion) {
    let space = ConceptSpace::uniform(4, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = cloud(&mut rng, space.grid_size(), 8, 0.0);
    let labels = space.enumerate_tuples();
    for geometry in [Geometry::Euclidean, Geometry::Spherical] {
        let bank = ProbeBank::random(space.clone(), 8, geometry, &mut rng);
        c.bench_function(&format!("loss and gradient 1296 tuples d=8 {geometry}"), |b| {
            b.iter(|| bank.loss_and_grad(black_box(&z), &labels, Loss::Ce, true).unwrap())
        });
    }
}

fn factor_recovery(c: &mut Criterion) {
    let space = ConceptSpace::new(vec![6, 5, 4, 3]).unwrap();
    let (set, _) = generate_factorized(&space, 32, false, 1.0, 3).unwrap();
    c.bench_function("averaging 360 tuples d=32", |b| b.iter(|| recover_by_averaging(black_box(&set)).unwrap()));
    c.bench_function("least squares 360 tuples d=32", |b| {
        b.iter(|| recover_by_least_squares(black_box(&set)).unwrap())
    });
    let f = recover_by_averaging(&set).unwrap();
    c.bench_function("whitened r2 360 tuples d=32", |b| {
        b.iter(|| projected_whitened_r2(black_box(&set), &f, None, &R2Options::default()).unwrap())
    });
}

fn region_count(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = random_arrangement(6, 3, 1e-2, &mut rng);
    c.bench_function("region count m=6 d=3 20k samples", |b| {
        b.iter(|| brute_force_region_count(black_box(&h), 20_000, 0))
    });
}

criterion_group!(benches, svm, whitening, training_epoch, factor_recovery, region_count);
criterion_main!(benches);
