use std::path::PathBuf;

use cglab_core::factor_model::{recover_by_averaging, recover_by_least_squares};
use cglab_core::metrics::{projected_whitened_r2, R2Options};
use cglab_core::oracles::necessity::{verify_necessity, DIAGNOSTIC_TOL, NECESSITY_TOL};
use cglab_core::oracles::onoff::{onoff_additive_reconstruction, onoff_construction, onoff_rank, OnOffSpec};
use cglab_core::oracles::packing::{
    brute_force_region_count, min_dim_construction, random_arrangement, region_count_affine, DEFAULT_REGION_SAMPLES,
};
use cglab_core::oracles::sufficiency::verify_sufficiency;
use cglab_core::probe_trainer::gradient_check;
use cglab_core::synthetic_lab::generators::{
    generate_dominant_noise, generate_factorized, generate_separable_nonfactorized, generate_unstable_binary,
    SeparableLayout,
};
use cglab_core::{ConceptSpace, EmbeddingSet, Geometry, Loss, ProbeBank, ValidityRule};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::load_dump;
use crate::options::{resolve, Common};
use crate::report::{emit, CliError, ExperimentReport, Stopwatch, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    All,
    Regions,
    OnoffRank,
    Packing,
    Necessity,
    Sufficiency,
    Reconstruction,
    Recovery,
    Metrics,
    Gradients,
}

const SUITES: [Suite; 9] = [
    Suite::Regions,
    Suite::OnoffRank,
    Suite::Packing,
    Suite::Necessity,
    Suite::Sufficiency,
    Suite::Reconstruction,
    Suite::Recovery,
    Suite::Metrics,
    Suite::Gradients,
];

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    /// Check necessity on a binary-grid dump instead of synthetic data
    /// (rows of each tuple are averaged first).
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Tolerance for the dump check.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub suite: Suite,
    pub tol: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            tol: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct Outcome {
    suite: Suite,
    pass: bool,
    details: Value,
}

type Checked = Result<(bool, Value), CliError>;

fn regions(seed: u64) -> Checked {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![(3usize, 2usize)];
    while cells.len() < 20 {
        cells.push((rng.random_range(1..=6), rng.random_range(1..=3)));
    }
    let mut rows = Vec::new();
    let mut pass = true;
    for (a, (m, d)) in cells.into_iter().enumerate() {
        let h = random_arrangement(m, d, 1e-2, &mut rng);
        let want = region_count_affine(m as u64, d as u64)?;
        let got = brute_force_region_count(&h, DEFAULT_REGION_SAMPLES, seed.wrapping_add(a as u64));
        pass &= got.general_position && got.count as u64 == want;
        rows.push(json!({ "m": m, "d": d, "formula": want, "counted": got.count }));
    }
    Ok((pass, json!({ "arrangements": rows })))
}

fn onoff_ranks() -> Checked {
    let mut pass = true;
    let mut worst = Vec::new();
    for k in 2..=5 {
        for n in 2..=5 {
            let spec = OnOffSpec::new(k, n, 1.0, 0.2)?;
            let r = onoff_rank(&spec)?;
            if r != spec.expected_rank() {
                pass = false;
                worst.push(json!({ "k": k, "n": n, "rank": r }));
            }
        }
    }
    Ok((pass, json!({ "cells": 16, "mismatches": worst })))
}

fn packing() -> Checked {
    let mut out = Vec::new();
    let mut pass = true;
    for (k, n) in [(2, 20), (3, 12), (4, 6)] {
        let (set, bank) = min_dim_construction(k, n)?;
        let acc = bank.accuracy(set.data(), set.labels())?;
        let ok = acc.iter().all(|&a| a == 1.0);
        pass &= ok;
        out.push(json!({ "k": k, "n": n, "d": set.dim(), "exact": ok }));
    }
    Ok((pass, json!({ "cells": out })))
}

fn necessity(seed: u64) -> Checked {
    let mut out = Vec::new();
    let mut pass = true;
    for k in 2..=5 {
        let space = ConceptSpace::binary(k)?;
        let (set, _) = generate_factorized(&space, k + 2, true, 1.0, seed.wrapping_add(k as u64))?;
        let r = verify_necessity(&set, NECESSITY_TOL)?;
        pass &= r.pass();
        out.push(serde_json::to_value(&r).expect("serializes"));
    }
    let (set, _) = generate_unstable_binary(3, 5, 0.5, seed)?;
    let witness = verify_necessity(&set, NECESSITY_TOL)?;
    pass &= !witness.linearity.pass;
    Ok((pass, json!({ "factorized": out, "unstable_witness": witness })))
}

fn sufficiency(seed: u64) -> Checked {
    let space = ConceptSpace::binary(4)?;
    let (_, factors) = generate_factorized(&space, 6, true, 1.0, seed)?;
    let majority = verify_sufficiency(&factors, &ValidityRule::BinaryMajority, 10, seed)?;
    let cross = verify_sufficiency(&factors, &ValidityRule::CrossAt(vec![0; 4]), 0, seed)?;
    Ok((majority.pass && cross.pass, json!({ "majority": majority, "cross": cross })))
}

fn reconstruction() -> Checked {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for k in 1..=4 {
        for n in 2..=4 {
            let spec = OnOffSpec::new(k, n, 1.0, 0.2)?;
            let (set, bank) = onoff_construction(&spec)?;
            let r = onoff_additive_reconstruction(&bank, &set, &spec, 1e-10)?;
            let res = r.reconstruction_residual.max(r.delta_residual);
            pass &= res <= 1e-9;
            worst = worst.max(res);
        }
    }
    Ok((pass, json!({ "worst_residual": worst })))
}

fn recovery(seed: u64) -> Checked {
    let space = ConceptSpace::new(vec![3, 4, 2])?;
    let (set, truth) = generate_factorized(&space, 6, false, 1.0, seed)?;
    let full = recover_by_averaging(&set)?.max_abs_diff(&recover_by_least_squares(&set)?);
    let cross = space.cross_dataset(&[1, 2, 0])?;
    let sub = set.subset(&set.select_rows(cross.tuples())?);
    let from_cross = recover_by_least_squares(&sub)?.max_abs_diff(&truth.canonical());
    Ok((
        full <= 1e-8 && from_cross <= 1e-8,
        json!({ "averaging_vs_least_squares": full, "cross_dataset_error": from_cross }),
    ))
}

fn metric_sanity(seed: u64) -> Checked {
    let space = ConceptSpace::new(vec![3, 4, 2])?;
    let (set, _) = generate_factorized(&space, 8, false, 1.0, seed)?;
    let f = recover_by_averaging(&set)?;
    let factorized = projected_whitened_r2(&set, &f, None, &R2Options::default())?.r2;
    let (fan, witness) = generate_separable_nonfactorized(8, SeparableLayout::Fans, seed)?;
    let witness_acc = witness.accuracy(fan.data(), fan.labels())?;
    let fan_r2 = projected_whitened_r2(&fan, &recover_by_averaging(&fan)?, Some(&witness), &R2Options::default())?.r2;
    let noisy = generate_dominant_noise(seed)?;
    let nf = recover_by_averaging(&noisy)?;
    let raw = R2Options {
        whiten: false,
        ..R2Options::default()
    };
    let unwhitened = projected_whitened_r2(&noisy, &nf, None, &raw)?.r2;
    let whitened = projected_whitened_r2(&noisy, &nf, None, &R2Options::default())?.r2;
    let pass = (factorized - 1.0).abs() <= 1e-9
        && witness_acc.iter().all(|&a| a == 1.0)
        && fan_r2 < 0.9
        && whitened < unwhitened;
    Ok((
        pass,
        json!({
            "factorized_r2": factorized,
            "counterexample_r2": fan_r2,
            "dominant_noise_unwhitened": unwhitened,
            "dominant_noise_whitened": whitened,
        }),
    ))
}

fn gradients(seed: u64) -> Checked {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let combos = [
        (Loss::Ce, Geometry::Euclidean),
        (Loss::Bce, Geometry::Euclidean),
        (Loss::Ce, Geometry::Spherical),
        (Loss::Bce, Geometry::Spherical),
    ];
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let (loss, geometry) = combos[inst % combos.len()];
        let space = ConceptSpace::new((0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=4)).collect())?;
        let d = rng.random_range(2..=5);
        let data = DMatrix::from_fn(space.grid_size(), d, |_, _| rng.random_range(-1.5..1.5));
        let set = EmbeddingSet::new(space.clone(), data, space.enumerate_tuples())?;
        let mut bank = ProbeBank::random(space.clone(), d, geometry, &mut rng);
        if geometry == Geometry::Spherical {
            bank.log_temperature = rng.random_range(-0.5..1.5);
        }
        worst = worst.max(gradient_check(&bank, &set, &space.full_grid(), loss)?);
    }
    Ok((worst <= 1e-4, json!({ "instances": 20, "worst_relative_error": worst })))
}

fn run_suite(suite: Suite, seed: u64) -> Result<Outcome, CliError> {
    let (pass, details) = match suite {
        Suite::All => unreachable!("expanded before dispatch"),
        Suite::Regions => regions(seed)?,
        Suite::OnoffRank => onoff_ranks()?,
        Suite::Packing => packing()?,
        Suite::Necessity => necessity(seed)?,
        Suite::Sufficiency => sufficiency(seed)?,
        Suite::Reconstruction => reconstruction()?,
        Suite::Recovery => recovery(seed)?,
        Suite::Metrics => metric_sanity(seed)?,
        Suite::Gradients => gradients(seed)?,
    };
    Ok(Outcome { suite, pass, details })
}

/// Per-tuple mean embeddings in canonical order; every tuple must appear.
fn tuple_means(set: &EmbeddingSet) -> Result<EmbeddingSet, CliError> {
    let space = set.space().clone();
    let groups = set.rows_by_tuple();
    let mut data = DMatrix::zeros(space.grid_size(), set.dim());
    for (idx, t) in space.enumerate_tuples().iter().enumerate() {
        let rows = groups
            .get(&idx)
            .ok_or_else(|| CliError::Usage(format!("tuple {t:?} has no rows; necessity needs the full grid")))?;
        for &r in rows {
            let mut out = data.row_mut(idx);
            out += set.data().row(r) / rows.len() as f64;
        }
    }
    Ok(EmbeddingSet::new(space.clone(), data, space.enumerate_tuples())?)
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (mut cfg, seed) = resolve::<Config>(common)?;
    if let Some(s) = args.suite {
        cfg.suite = s;
    }
    if let Some(t) = args.tol {
        cfg.tol = Some(t);
    }
    let mut report = ExperimentReport::new("verify", &cfg, seed);
    let outcomes: Vec<Outcome> = if let Some(path) = &args.dump {
        let set = load_dump(path, &mut report)?;
        let means = tuple_means(&set)?;
        let tol = cfg.tol.unwrap_or(DIAGNOSTIC_TOL);
        let r = verify_necessity(&means, tol)?;
        vec![Outcome {
            suite: Suite::Necessity,
            pass: r.pass(),
            details: serde_json::to_value(&r).expect("serializes"),
        }]
    } else {
        let suites: Vec<Suite> = match cfg.suite {
            Suite::All => SUITES.to_vec(),
            s => vec![s],
        };
        let results: Vec<Result<Outcome, CliError>> = suites.par_iter().map(|&s| run_suite(s, seed)).collect();
        results.into_iter().collect::<Result<_, _>>()?
    };
    watch.lap("checks");

    let mut table = Table::new("verify", &["suite", "pass"]);
    for o in &outcomes {
        let name = serde_json::to_value(o.suite).expect("serializes");
        let name = name.as_str().unwrap_or("?").to_string();
        println!("{} {}", if o.pass { "PASS" } else { "FAIL" }, name);
        table.push(vec![name, o.pass.to_string()]);
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.pass).collect();
    report.set("pass", failed.is_empty());
    report.set("suites", &outcomes);
    emit(common, &report, &[table], watch)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("{} of {} checks failed", failed.len(), outcomes.len())))
    }
}
