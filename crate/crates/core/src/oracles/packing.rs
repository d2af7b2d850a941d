//! Packing `n^k` tuples into `d = k` dimensions, and counting the regions
//! cut out by hyperplane arrangements.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::concept_space::ConceptSpace;
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::probe_trainer::{Geometry, ProbeBank};

pub const PACKING_GRID_CAP: usize = 100_000;
pub const DEFAULT_REGION_SAMPLES: usize = 200_000;
/// Relative singular-value threshold used for the general-position test.
pub const GENERAL_POSITION_TOL: f64 = 1e-9;

/// `z_c = sum_i c_i e_i` with probes `w_{i,j} = 2j e_i`, `b_{i,j} = -j^2`,
/// so that `h_{i,j}(z_c) = c_i^2 - (j - c_i)^2` peaks at `j = c_i`.
pub fn min_dim_construction(k: usize, n: usize) -> Result<(EmbeddingSet, ProbeBank)> {
    let space = ConceptSpace::uniform(k, n)?;
    if space.grid_size() > PACKING_GRID_CAP {
        return Err(Error::InvalidArgument(format!(
            "grid of {} tuples exceeds the cap of {PACKING_GRID_CAP}",
            space.grid_size()
        )));
    }
    let set = EmbeddingSet::from_grid(space.clone(), k, |t| t.iter().map(|&c| c as f64).collect())?;
    let mut w = DMatrix::zeros(k * n, k);
    let mut b = DVector::zeros(k * n);
    for i in 0..k {
        for j in 0..n {
            w[(i * n + j, i)] = 2.0 * j as f64;
            b[i * n + j] = -((j * j) as f64);
        }
    }
    let bank = ProbeBank::new(space, w, b, Geometry::Euclidean)?;
    Ok((set, bank))
}

fn binomial(m: u64, r: u64) -> Option<u64> {
    if r > m {
        return Some(0);
    }
    let r = r.min(m - r);
    let mut c: u128 = 1;
    for i in 0..r {
        c = c * (m - i) as u128 / (i + 1) as u128;
        if c > u64::MAX as u128 {
            return None;
        }
    }
    Some(c as u64)
}

fn binomial_sum(m: u64, upto: u64) -> Option<u64> {
    (0..=upto.min(m)).try_fold(0u64, |acc, r| acc.checked_add(binomial(m, r)?))
}

/// Regions of `m` affine hyperplanes in general position in `R^d`.
pub fn region_count_affine(m: u64, d: u64) -> Result<u64> {
    binomial_sum(m, d).ok_or_else(|| Error::Overflow(format!("R_aff({m}, {d})")))
}

/// Regions of `m` hyperplanes through the origin in general position in `R^d`.
pub fn region_count_central(m: u64, d: u64) -> Result<u64> {
    if m == 0 {
        return Ok(1);
    }
    if d == 0 {
        return Ok(1);
    }
    binomial_sum(m - 1, d - 1)
        .and_then(|s| s.checked_mul(2))
        .ok_or_else(|| Error::Overflow(format!("R_lin({m}, {d})")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCount {
    pub count: usize,
    pub general_position: bool,
    pub samples: usize,
    pub probe_points: usize,
}

fn combinations(m: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn go(start: usize, m: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            go(i + 1, m, size, cur, out);
            cur.pop();
        }
    }
    go(0, m, size, &mut cur, &mut out);
    out
}

fn well_conditioned(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let s = linalg::singular_values(m);
    let full = m.nrows().min(m.ncols());
    s.len() >= full && full > 0 && s[full - 1] > rel_tol * s[0]
}

/// Every set of at most `d` normals is independent and no `d + 1`
/// hyperplanes share a point.
pub fn is_general_position(hyperplanes: &DMatrix<f64>, rel_tol: f64) -> bool {
    let (m, cols) = hyperplanes.shape();
    let d = cols.saturating_sub(1);
    for size in 1..=m.min(d + 1) {
        for subset in combinations(m, size) {
            let rows = hyperplanes.select_rows(&subset);
            let ok = if size <= d {
                well_conditioned(&rows.columns(0, d).into_owned(), rel_tol)
            } else {
                well_conditioned(&rows, rel_tol)
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

fn sign_key(h: &DMatrix<f64>, x: &[f64]) -> Option<Vec<bool>> {
    let d = x.len();
    let mut key = Vec::with_capacity(h.nrows());
    for r in 0..h.nrows() {
        let mut v = h[(r, d)];
        let mut scale = h[(r, d)].abs();
        for c in 0..d {
            v += h[(r, c)] * x[c];
            scale += (h[(r, c)] * x[c]).abs();
        }
        if v.abs() <= 1e-12 * scale.max(1.0) {
            return None;
        }
        key.push(v > 0.0);
    }
    Some(key)
}

/// Counts distinct sign vectors over uniform samples from a box and over
/// probe points placed around every intersection flat. Rows of
/// `hyperplanes` are `(a, b)` for `a . x + b = 0`.
pub fn brute_force_region_count(hyperplanes: &DMatrix<f64>, samples: usize, seed: u64) -> RegionCount {
    let (m, cols) = hyperplanes.shape();
    let d = cols.saturating_sub(1);
    let general_position = is_general_position(hyperplanes, GENERAL_POSITION_TOL);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    if d == 0 {
        if let Some(k) = sign_key(hyperplanes, &[]) {
            seen.insert(k);
        }
        return RegionCount {
            count: seen.len(),
            general_position,
            samples: 0,
            probe_points: 1,
        };
    }
    let a = hyperplanes.columns(0, d).into_owned();
    let b = hyperplanes.column(d).into_owned();

    // Points on every intersection flat of up to d hyperplanes, nudged
    // along the dual directions into each incident region.
    let mut extent: f64 = 0.0;
    let mut probes = 0usize;
    for size in 1..=m.min(d) {
        for subset in combinations(m, size) {
            let sa = a.select_rows(&subset);
            let sb = -b.select_rows(&subset);
            let (pinv, rank) = linalg::pseudo_inverse(&sa, 1e-12);
            if rank < size {
                continue;
            }
            let x0 = &pinv * &sb;
            extent = extent.max(x0.amax());
            let mut gap = f64::INFINITY;
            for r in (0..m).filter(|r| !subset.contains(r)) {
                let nr = a.row(r).norm();
                if nr > 0.0 {
                    gap = gap.min((a.row(r).dot(&x0.transpose()) + b[r]).abs() / nr);
                }
            }
            let spread: f64 = (0..size).map(|c| pinv.column(c).norm()).sum();
            let step = if gap.is_finite() && gap > 0.0 { 0.25 * gap / spread } else { 1e-6 / spread };
            for mask in 0..(1usize << size) {
                let mut x = x0.clone();
                for c in 0..size {
                    let s = if mask >> c & 1 == 1 { step } else { -step };
                    x += pinv.column(c) * s;
                }
                probes += 1;
                if let Some(k) = sign_key(hyperplanes, x.as_slice()) {
                    seen.insert(k);
                }
            }
        }
    }

    let max_offset = (0..m)
        .filter_map(|r| {
            let nr = a.row(r).norm();
            (nr > 0.0).then(|| b[r].abs() / nr)
        })
        .fold(0.0, f64::max);
    let half = 10.0 * max_offset.max(extent).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = rng.random_range(-half..half);
        }
        if let Some(k) = sign_key(hyperplanes, &x) {
            seen.insert(k);
        }
    }
    RegionCount {
        count: seen.len(),
        general_position,
        samples,
        probe_points: probes,
    }
}

/// Gaussian normals and offsets, redrawn until every subset passes the
/// general-position test at `margin` (a relative singular-value floor).
pub fn random_arrangement(m: usize, d: usize, margin: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    loop {
        let h = DMatrix::from_fn(m, d + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        if is_general_position(&h, margin) {
            return h;
        }
    }
}
