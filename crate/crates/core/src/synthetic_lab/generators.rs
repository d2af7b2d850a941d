//! Synthetic embedding sets with known structure.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::concept_space::ConceptSpace;
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::factor_model::FactorSet;
use crate::linalg;
use crate::probe_trainer::{Geometry, ProbeBank};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Exactly additive embeddings `z_c = sum_i u_{i,c_i}`, one row per tuple.
///
/// With `orthogonal`, the differences within each concept live in their own
/// block of a random orthonormal basis, so differences of distinct concepts
/// are orthogonal. Each concept also gets a random constant offset, which
/// leaves all differences unchanged.
pub fn generate_factorized(
    space: &ConceptSpace,
    d: usize,
    orthogonal: bool,
    scale: f64,
    seed: u64,
) -> Result<(EmbeddingSet, FactorSet)> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<DMatrix<f64>> = if orthogonal {
        let need = space.cross_size() - 1;
        if d < need {
            return Err(Error::InvalidArgument(format!(
                "orthogonal factors need d >= {need}, got {d}"
            )));
        }
        let q = linalg::random_orthonormal(&mut rng, d, need);
        let mut col = 0;
        space
            .cardinalities()
            .iter()
            .map(|&n| {
                let basis = q.columns(col, n - 1).into_owned();
                col += n - 1;
                let coords = gaussian(&mut rng, n, n - 1) * scale;
                let offset = gaussian(&mut rng, 1, d) * scale;
                let mut block = coords * basis.transpose();
                for mut row in block.row_iter_mut() {
                    row += &offset;
                }
                block
            })
            .collect()
    } else {
        space
            .cardinalities()
            .iter()
            .map(|&n| gaussian(&mut rng, n, d) * scale)
            .collect()
    };
    let factors = FactorSet::new(space.clone(), blocks, DVector::zeros(d))?;
    let mut set = factors.to_embedding_set()?;
    set.meta.insert("generator".into(), "factorized".into());
    set.meta.insert("orthogonal".into(), orthogonal.to_string());
    set.meta.insert("seed".into(), seed.to_string());
    Ok((set, factors))
}

/// Grid embeddings `z_c = sum_i alpha_{i,c_i} d_i` along random orthonormal
/// directions, with the nearest-prototype probes `w = 2 alpha d`, `b = -|alpha d|^2`.
pub fn generate_lrh_grid(
    k: usize,
    n: usize,
    d: usize,
    coefficients: &[Vec<f64>],
    seed: u64,
) -> Result<(EmbeddingSet, ProbeBank)> {
    if d < k {
        return Err(Error::InvalidArgument(format!(
            "need d >= k for orthogonal directions, got d={d}, k={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = linalg::random_orthonormal(&mut rng, d, k);
    generate_lrh_grid_with_directions(n, &dirs, coefficients)
}

/// As [`generate_lrh_grid`] with caller-chosen directions (columns of `dirs`).
pub fn generate_lrh_grid_with_directions(
    n: usize,
    dirs: &DMatrix<f64>,
    coefficients: &[Vec<f64>],
) -> Result<(EmbeddingSet, ProbeBank)> {
    let (d, k) = dirs.shape();
    let space = ConceptSpace::uniform(k, n)?;
    if coefficients.len() != k || coefficients.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "expected {k} coefficient lists of length {n}"
        )));
    }
    for (i, c) in coefficients.iter().enumerate() {
        let mut sorted = c.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "concept {i} has duplicate coefficients"
            )));
        }
    }
    let set = EmbeddingSet::from_grid(space.clone(), d, |t| {
        let mut z = DVector::zeros(d);
        for (i, &v) in t.iter().enumerate() {
            z += dirs.column(i) * coefficients[i][v];
        }
        z.iter().copied().collect()
    })?;
    let mut w = DMatrix::zeros(k * n, d);
    let mut b = DVector::zeros(k * n);
    for i in 0..k {
        for j in 0..n {
            let proto = dirs.column(i) * coefficients[i][j];
            w.set_row(i * n + j, &(&proto * 2.0).transpose());
            b[i * n + j] = -proto.norm_squared();
        }
    }
    let bank = ProbeBank::new(space, w, b, Geometry::Euclidean)?;
    Ok((set, bank))
}

/// Layout of the two-concept separable counterexample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparableLayout {
    /// Two pencils of lines through distinct apexes; each point sits at the
    /// crossing of one jittered line from each pencil.
    Fans,
    /// Two families of parallel lines with points at the cell centers.
    /// Exactly additive; serves as the control.
    ParallelGrid,
}

const APEX_A: [f64; 2] = [0.0, -1.0];
const APEX_B: [f64; 2] = [-1.0, 0.0];

fn fan_angles(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
        .collect()
}

/// Intersection of the rays `A + s u(theta)` and `B + t u(phi)` if both parameters are positive.
fn ray_crossing(theta: f64, phi: f64) -> Option<[f64; 2]> {
    let (u, v) = ([theta.cos(), theta.sin()], [phi.cos(), phi.sin()]);
    // s u - t v = B - A
    let rhs = [APEX_B[0] - APEX_A[0], APEX_B[1] - APEX_A[1]];
    let det = u[0] * (-v[1]) - (-v[0]) * u[1];
    if det.abs() < 1e-12 {
        return None;
    }
    let s = (rhs[0] * (-v[1]) - (-v[0]) * rhs[1]) / det;
    let t = (u[0] * rhs[1] - u[1] * rhs[0]) / det;
    (s > 0.0 && t > 0.0).then(|| [APEX_A[0] + s * u[0], APEX_A[1] + s * u[1]])
}

/// Two concepts with `n` values each in 2D whose concept values are linearly
/// separable (the returned probe bank classifies every point correctly) but
/// whose embeddings are far from additive.
pub fn generate_separable_nonfactorized(
    n: usize,
    layout: SeparableLayout,
    seed: u64,
) -> Result<(EmbeddingSet, ProbeBank)> {
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 values per concept".into()));
    }
    let space = ConceptSpace::uniform(2, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match layout {
        SeparableLayout::Fans => {
            let theta = fan_angles(n, FRAC_PI_2 - 0.75, FRAC_PI_2 + 0.15);
            let phi = fan_angles(n, -0.15, 0.75);
            let h_theta = (theta[1] - theta[0]) / 2.0;
            let h_phi = (phi[1] - phi[0]) / 2.0;
            let set = EmbeddingSet::from_grid(space.clone(), 2, |t| loop {
                let a = theta[t[0]] + rng.random_range(-0.8..0.8) * h_theta;
                let b = phi[t[1]] + rng.random_range(-0.8..0.8) * h_phi;
                if let Some(p) = ray_crossing(a, b) {
                    break p.to_vec();
                }
            })?;
            // h_j(z) = u(angle_j) . (z - apex) = r cos(angle(z - apex) - angle_j):
            // the largest score goes to the nearest ray angle.
            let mut w = DMatrix::zeros(2 * n, 2);
            let mut b = DVector::zeros(2 * n);
            for (j, &a) in theta.iter().enumerate() {
                w[(j, 0)] = a.cos();
                w[(j, 1)] = a.sin();
                b[j] = -(a.cos() * APEX_A[0] + a.sin() * APEX_A[1]);
            }
            for (j, &a) in phi.iter().enumerate() {
                w[(n + j, 0)] = a.cos();
                w[(n + j, 1)] = a.sin();
                b[n + j] = -(a.cos() * APEX_B[0] + a.sin() * APEX_B[1]);
            }
            let mut set = set;
            set.meta.insert("generator".into(), "separable_fans".into());
            Ok((set, ProbeBank::new(space, w, b, Geometry::Euclidean)?))
        }
        SeparableLayout::ParallelGrid => {
            // Concept 0 steps along (1, 0.3), concept 1 along (-0.2, 1).
            let e0 = [1.0, 0.3];
            let e1 = [-0.2, 1.0];
            let set = EmbeddingSet::from_grid(space.clone(), 2, |t| {
                let (a, c) = (t[0] as f64, t[1] as f64);
                vec![a * e0[0] + c * e1[0], a * e0[1] + c * e1[1]]
            })?;
            // Dual basis: f_i . e_j = delta_ij, so f_i . z recovers the index.
            let det = e0[0] * e1[1] - e0[1] * e1[0];
            let f0 = [e1[1] / det, -e1[0] / det];
            let f1 = [-e0[1] / det, e0[0] / det];
            let mut w = DMatrix::zeros(2 * n, 2);
            let mut b = DVector::zeros(2 * n);
            for j in 0..n {
                let jf = j as f64;
                // 2 j x - j^2 peaks at j = x.
                for (i, f) in [f0, f1].iter().enumerate() {
                    w[(i * n + j, 0)] = 2.0 * jf * f[0];
                    w[(i * n + j, 1)] = 2.0 * jf * f[1];
                    b[i * n + j] = -jf * jf;
                }
            }
            let mut set = set;
            set.meta.insert("generator".into(), "separable_grid".into());
            Ok((set, ProbeBank::new(space, w, b, Geometry::Euclidean)?))
        }
    }
}

/// Two 3-valued concepts in 2D: concept 0 moves coordinate 0 on a large
/// scale, concept 1 moves coordinate 1 on a small scale, and coordinate 1
/// also carries concept-independent noise. Four rows per tuple.
///
/// Unwhitened R^2 is dominated by the clean, large coordinate; whitening
/// puts both coordinates on equal footing and exposes the noise.
pub fn generate_dominant_noise(seed: u64) -> Result<EmbeddingSet> {
    let space = ConceptSpace::uniform(2, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reps = 4;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for t in space.enumerate_tuples() {
        for _ in 0..reps {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(10.0 * t[0] as f64);
            data.push(0.5 * t[1] as f64 + 0.5 * noise);
            labels.push(t.clone());
        }
    }
    let rows = labels.len();
    let mut set = EmbeddingSet::new(space, DMatrix::from_row_slice(rows, 2, &data), labels)?;
    set.meta.insert("generator".into(), "dominant_noise".into());
    Ok(set)
}

/// Binary grid that is orthogonal-additive except for a bump added to the
/// all-ones tuple, so per-concept differences are not constant across the
/// grid while every concept stays linearly separable.
pub fn generate_unstable_binary(k: usize, d: usize, bump: f64, seed: u64) -> Result<(EmbeddingSet, FactorSet)> {
    let space = ConceptSpace::binary(k)?;
    if d < k + 1 {
        return Err(Error::InvalidArgument(format!("need d >= k + 1, got d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = linalg::random_orthonormal(&mut rng, d, k + 1);
    let blocks: Vec<DMatrix<f64>> = (0..k)
        .map(|i| {
            let mut m = DMatrix::zeros(2, d);
            m.set_row(1, &q.column(i).transpose());
            m
        })
        .collect();
    let factors = FactorSet::new(space.clone(), blocks, DVector::zeros(d))?;
    let mut set = factors.to_embedding_set()?;
    let last = space.grid_size() - 1;
    let bump_dir = q.column(k).into_owned() * bump;
    let mut data = set.data().clone();
    {
        let mut row = data.row_mut(last);
        row += bump_dir.transpose();
    }
    set = set.with_data(data)?;
    set.meta.insert("generator".into(), "unstable_binary".into());
    Ok((set, factors))
}
