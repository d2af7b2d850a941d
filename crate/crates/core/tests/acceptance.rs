//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::time::{Duration, Instant};

use cglab_core::metrics::{projected_whitened_r2, R2Options};
use cglab_core::oracles::necessity::{verify_necessity, NECESSITY_TOL};
use cglab_core::oracles::onoff::{
    onoff_additive_reconstruction, onoff_construction, onoff_matrix, onoff_rank, OnOffSpec,
};
use cglab_core::oracles::packing::{
    brute_force_region_count, min_dim_construction, random_arrangement, region_count_affine,
    DEFAULT_REGION_SAMPLES,
};
use cglab_core::oracles::sufficiency::verify_sufficiency;
use cglab_core::probe_trainer::{gradient_check, relative_error, FD_STEP};
use cglab_core::synthetic_lab::free::{min_dim_scan, MinDimTable, ScanConfig};
use cglab_core::synthetic_lab::generators::{
    generate_dominant_noise, generate_factorized, generate_separable_nonfactorized,
    generate_unstable_binary, SeparableLayout,
};
use cglab_core::{
    recover_by_averaging, recover_by_least_squares, ConceptSpace, EmbeddingSet, Geometry, Loss,
    ProbeBank, ValidityRule,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn zaslavsky() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cells = vec![(3usize, 2usize)];
    while cells.len() < 20 {
        cells.push((rng.random_range(1..=6), rng.random_range(1..=3)));
    }
    let trials = 3;
    for (a, &(m, d)) in cells.iter().enumerate() {
        let h = random_arrangement(m, d, 1e-2, &mut rng);
        let want = region_count_affine(m as u64, d as u64).map_err(|e| e.to_string())?;
        for t in 0..trials {
            let r = brute_force_region_count(&h, DEFAULT_REGION_SAMPLES, (a * trials + t) as u64);
            ensure(r.general_position, || format!("arrangement {a} not in general position"))?;
            if r.count as u64 != want {
                return Err(format!("m={m} d={d}: counted {} regions, formula {want}", r.count));
            }
        }
    }
    let r32 = region_count_affine(3, 2).map_err(|e| e.to_string())?;
    ensure(r32 == 7, || format!("R_aff(3,2) = {r32}"))?;
    Ok(format!("20 arrangements x {trials} trials all match the formula, R_aff(3,2)=7"))
}

fn onoff_ranks() -> Check {
    for k in 2..=5 {
        for n in 2..=5 {
            for (alpha, beta) in [(1.0, 0.2), (2.0, -0.3)] {
                let spec = OnOffSpec::new(k, n, alpha, beta).map_err(|e| e.to_string())?;
                let r = onoff_rank(&spec).map_err(|e| e.to_string())?;
                ensure(r == 1 + k * (n - 1), || format!("k={k} n={n}: rank {r}"))?;
            }
        }
    }
    let spec = OnOffSpec::new(2, 3, 1.0, 0.2).unwrap();
    let y = onoff_matrix(&spec).unwrap();
    // Row (i, j), column c = 3 c_0 + c_1.
    for row in 0..6 {
        for col in 0..9 {
            let c = [col / 3, col % 3];
            let want = if c[row / 3] == row % 3 { 1.0 } else { 0.2 };
            ensure(y[(row, col)] == want, || format!("entry ({row},{col}) = {}", y[(row, col)]))?;
        }
    }
    ensure(onoff_rank(&spec).unwrap() == 5, || "k=2 n=3 rank is not 5".into())?;
    Ok("25 cells x 2 (alpha, beta) at rank 1+k(n-1); 6x9 example has rank 5".into())
}

fn packing() -> Check {
    for (k, n) in [(2, 20), (3, 12), (4, 6)] {
        let (set, bank) = min_dim_construction(k, n).map_err(|e| e.to_string())?;
        ensure(set.dim() == k, || format!("dimension {} for k={k}", set.dim()))?;
        let acc = bank.accuracy(set.data(), set.labels()).map_err(|e| e.to_string())?;
        ensure(acc.iter().all(|&a| a == 1.0), || format!("k={k} n={n}: accuracy {acc:?}"))?;
    }
    Ok("(2,20), (3,12), (4,6) all exact in d=k".into())
}

fn necessity() -> Check {
    let mut worst: f64 = 0.0;
    for k in 2..=5 {
        let space = ConceptSpace::binary(k).unwrap();
        let (set, _) = generate_factorized(&space, k + 2, true, 1.0, 100 + k as u64).map_err(|e| e.to_string())?;
        let r = verify_necessity(&set, NECESSITY_TOL).map_err(|e| e.to_string())?;
        ensure(r.pass(), || format!("k={k}: {r:?}"))?;
        worst = worst
            .max(r.support_vectors.worst_residual)
            .max(r.linearity.worst_residual)
            .max(r.orthogonality.worst_residual);
    }
    let (set, _) = generate_unstable_binary(3, 5, 0.5, 1).map_err(|e| e.to_string())?;
    let r = verify_necessity(&set, NECESSITY_TOL).map_err(|e| e.to_string())?;
    ensure(!r.linearity.pass, || format!("unstable witness passed linearity: {r:?}"))?;
    Ok(format!(
        "k=2..5 pass (worst residual {worst:.1e}); witness linearity residual {:.3}",
        r.linearity.worst_residual
    ))
}

fn sufficiency() -> Check {
    let space = ConceptSpace::binary(4).unwrap();
    let (_, factors) = generate_factorized(&space, 6, true, 1.0, 21).map_err(|e| e.to_string())?;
    let majority = verify_sufficiency(&factors, &ValidityRule::BinaryMajority, 10, 3).map_err(|e| e.to_string())?;
    let cross = verify_sufficiency(&factors, &ValidityRule::CrossAt(vec![0; 4]), 0, 0).map_err(|e| e.to_string())?;
    ensure(majority.supports == 10 && cross.supports == 16, || "wrong support counts".into())?;
    for r in [&majority, &cross] {
        ensure(r.pass, || format!("{r:?}"))?;
        ensure(r.min_direction_cosine > 1.0 - 1e-6, || format!("cosine {}", r.min_direction_cosine))?;
        ensure(r.max_pairwise_tv <= 1e-9, || format!("tv {:e}", r.max_pairwise_tv))?;
    }
    Ok(format!(
        "10 majority + 16 cross supports; min cos {:.12}, max tv {:.1e}",
        majority.min_direction_cosine.min(cross.min_direction_cosine),
        majority.max_pairwise_tv.max(cross.max_pairwise_tv)
    ))
}

fn table_line(t: &MinDimTable) -> String {
    t.cells
        .iter()
        .map(|c| format!("({},{})->{}", c.k, c.n, c.min_d.map_or("none".into(), |d| d.to_string())))
        .collect::<Vec<_>>()
        .join(" ")
}

fn min_dim() -> Check {
    let config = ScanConfig::default();
    let (ks, ns) = ([2, 3, 4], [2, 6]);
    let ce = min_dim_scan(&ks, &ns, Loss::Ce, Geometry::Euclidean, &config).map_err(|e| e.to_string())?;
    let bce = min_dim_scan(&ks, &ns, Loss::Bce, Geometry::Euclidean, &config).map_err(|e| e.to_string())?;
    let summary = format!("ce {} | bce {}", table_line(&ce), table_line(&bce));
    for c in &ce.cells {
        ensure(c.min_d == Some(c.k), || format!("CE cell ({},{}) min d {:?}; {summary}", c.k, c.n, c.min_d))?;
        let b = bce.cell(c.k, c.n).expect("same grid");
        let b_d = b.min_d.unwrap_or(usize::MAX);
        ensure(b_d >= c.k, || format!("BCE below CE at ({},{}); {summary}", c.k, c.n))?;
    }
    for c in ce.cells.iter().chain(&bce.cells) {
        ensure(c.min_d.is_none_or(|d| d >= c.k), || format!("min d below k at ({},{}); {summary}", c.k, c.n))?;
    }
    Ok(summary)
}

fn factor_recovery() -> Check {
    let mut worst_full: f64 = 0.0;
    let mut worst_cross: f64 = 0.0;
    for (i, cards) in [vec![2, 3], vec![3, 3, 2], vec![4, 2, 5], vec![2, 2, 2, 2]].into_iter().enumerate() {
        let space = ConceptSpace::new(cards).unwrap();
        let (set, truth) = generate_factorized(&space, 6, false, 1.0, i as u64).map_err(|e| e.to_string())?;
        let a = recover_by_averaging(&set).map_err(|e| e.to_string())?;
        let l = recover_by_least_squares(&set).map_err(|e| e.to_string())?;
        worst_full = worst_full.max(a.max_abs_diff(&l));
        let center = space.tuple_at(space.grid_size() / 2).unwrap();
        let cross = space.cross_dataset(&center).unwrap();
        ensure(cross.len() == space.cross_size(), || "cross size".into())?;
        let rows = set.select_rows(cross.tuples()).map_err(|e| e.to_string())?;
        let sub = set.subset(&rows);
        let ls = recover_by_least_squares(&sub).map_err(|e| e.to_string())?;
        worst_cross = worst_cross.max(ls.max_abs_diff(&truth.canonical()));
    }
    ensure(worst_full <= 1e-8, || format!("averaging vs least squares {worst_full:e}"))?;
    ensure(worst_cross <= 1e-8, || format!("cross-dataset recovery {worst_cross:e}"))?;
    Ok(format!("full-grid agreement {worst_full:.1e}, cross-dataset recovery {worst_cross:.1e}"))
}

fn metric_sanity() -> Check {
    let space = ConceptSpace::new(vec![3, 4, 2]).unwrap();
    let (set, _) = generate_factorized(&space, 8, false, 1.0, 5).map_err(|e| e.to_string())?;
    let f = recover_by_averaging(&set).map_err(|e| e.to_string())?;
    let r = projected_whitened_r2(&set, &f, None, &R2Options::default()).map_err(|e| e.to_string())?.r2;
    ensure((r - 1.0).abs() <= 1e-9, || format!("factorized R^2 = {r}"))?;

    let (fan, witness) = generate_separable_nonfactorized(8, SeparableLayout::Fans, 0).map_err(|e| e.to_string())?;
    let acc = witness.accuracy(fan.data(), fan.labels()).map_err(|e| e.to_string())?;
    ensure(acc == vec![1.0, 1.0], || format!("witness accuracy {acc:?}"))?;
    let ff = recover_by_averaging(&fan).map_err(|e| e.to_string())?;
    let fan_r2 = projected_whitened_r2(&fan, &ff, Some(&witness), &R2Options::default())
        .map_err(|e| e.to_string())?
        .r2;
    ensure(fan_r2 < 0.9, || format!("counterexample R^2 = {fan_r2}"))?;

    let noisy = generate_dominant_noise(0).map_err(|e| e.to_string())?;
    let nf = recover_by_averaging(&noisy).map_err(|e| e.to_string())?;
    let raw = R2Options {
        whiten: false,
        ..R2Options::default()
    };
    let unwhitened = projected_whitened_r2(&noisy, &nf, None, &raw).map_err(|e| e.to_string())?.r2;
    let whitened = projected_whitened_r2(&noisy, &nf, None, &R2Options::default())
        .map_err(|e| e.to_string())?
        .r2;
    ensure(whitened < unwhitened, || format!("whitened {whitened} >= unwhitened {unwhitened}"))?;
    Ok(format!(
        "factorized {r:.12}; counterexample {fan_r2:.3}; dominant noise {unwhitened:.3} -> {whitened:.3}"
    ))
}

fn embedding_gradient_error(bank: &ProbeBank, set: &EmbeddingSet, loss: Loss) -> f64 {
    let z = set.data().clone();
    let (_, _, dz) = bank.loss_and_grad(&z, set.labels(), loss, true).unwrap();
    let dz = dz.unwrap();
    let mut worst: f64 = 0.0;
    for r in 0..z.nrows() {
        for c in 0..z.ncols() {
            let mut zp = z.clone();
            zp[(r, c)] += FD_STEP;
            let up = bank.loss_value(&zp, set.labels(), loss).unwrap();
            zp[(r, c)] -= 2.0 * FD_STEP;
            let down = bank.loss_value(&zp, set.labels(), loss).unwrap();
            worst = worst.max(relative_error(dz[(r, c)], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let combos = [
        (Loss::Ce, Geometry::Euclidean),
        (Loss::Bce, Geometry::Euclidean),
        (Loss::Ce, Geometry::Spherical),
        (Loss::Bce, Geometry::Spherical),
    ];
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let (loss, geometry) = combos[inst % combos.len()];
        let k = rng.random_range(1..=3);
        let cards: Vec<usize> = (0..k).map(|_| rng.random_range(2..=4)).collect();
        let space = ConceptSpace::new(cards).unwrap();
        let d = rng.random_range(2..=5);
        let data = DMatrix::from_fn(space.grid_size(), d, |_, _| rng.random_range(-1.5..1.5));
        let set = EmbeddingSet::new(space.clone(), data, space.enumerate_tuples()).unwrap();
        let mut bank = ProbeBank::random(space.clone(), d, geometry, &mut rng);
        if geometry == Geometry::Spherical {
            bank.log_temperature = rng.random_range(-0.5..1.5);
        }
        let params = gradient_check(&bank, &set, &space.full_grid(), loss).map_err(|e| e.to_string())?;
        let embed = embedding_gradient_error(&bank, &set, loss);
        worst = worst.max(params).max(embed);
        ensure(params <= 1e-4 && embed <= 1e-4, || {
            format!("instance {inst} ({loss}, {geometry:?}): params {params:e}, embeddings {embed:e}")
        })?;
    }
    Ok(format!("20 instances, worst relative error {worst:.1e}"))
}

fn onoff_reconstruction() -> Check {
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for k in 1..=4 {
        for n in 2..=4 {
            for (alpha, beta) in [(1.0, 0.2), (3.0, -1.0), (0.5, -2.0)] {
                let Ok(spec) = OnOffSpec::new(k, n, alpha, beta) else {
                    continue;
                };
                let (set, bank) = onoff_construction(&spec).map_err(|e| e.to_string())?;
                let r = onoff_additive_reconstruction(&bank, &set, &spec, 1e-10).map_err(|e| e.to_string())?;
                let delta = (alpha + (n as f64 - 1.0) * beta) / n as f64;
                ensure((r.delta - delta).abs() <= 1e-12, || format!("delta {} vs {delta}", r.delta))?;
                ensure(r.reconstruction_residual <= 1e-9 && r.delta_residual <= 1e-9, || {
                    format!("k={k} n={n}: residuals {:e} {:e}", r.reconstruction_residual, r.delta_residual)
                })?;
                worst = worst.max(r.reconstruction_residual).max(r.delta_residual);
                cells += 1;
            }
        }
    }
    Ok(format!("{cells} constructions, worst residual {worst:.1e}"))
}

type Criterion = (u32, &'static str, u64, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "zaslavsky agreement", 30, zaslavsky),
        (2, "on-off rank", 10, onoff_ranks),
        (3, "packing construction", 10, packing),
        (4, "necessity check", 60, necessity),
        (5, "sufficiency and stability", 120, sufficiency),
        (6, "min-dim scan", 1800, min_dim),
        (7, "factor recovery", 10, factor_recovery),
        (8, "metric sanity", 30, metric_sanity),
        (9, "gradient checks", 30, gradient_checks),
        (10, "on-off reconstruction", 10, onoff_reconstruction),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let over = took > Duration::from_secs(budget);
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("over time budget; {d}")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "{status} {id:>2} {name} ({:.2} s of {budget} s): {detail}",
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
