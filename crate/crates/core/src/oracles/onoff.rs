//! Probes whose scores follow an on/off pattern (alpha on the matching value,
//! beta elsewhere): the rank of the score matrix, an exact construction in
//! the minimal dimension, and the additive reconstruction that preserves
//! all scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concept_space::ConceptSpace;
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::factor_model::{recover_by_averaging, FactorSet};
use crate::linalg;
use crate::probe_trainer::{Geometry, ProbeBank};

pub const ONOFF_RANK_TOL: f64 = 1e-9;
pub const ONOFF_GRID_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffSpec {
    pub k: usize,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl OnOffSpec {
    pub fn new(k: usize, n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if k == 0 || n < 2 {
            return Err(Error::InvalidArgument("need k >= 1 and n >= 2".into()));
        }
        if alpha.is_nan() || beta.is_nan() || alpha <= beta {
            return Err(Error::InvalidArgument(format!("need alpha > beta, got {alpha} <= {beta}")));
        }
        if alpha == -beta * (n - 1) as f64 {
            return Err(Error::InvalidArgument(
                "alpha = -beta (n - 1) makes the concept blocks sum to zero".into(),
            ));
        }
        Ok(Self { k, n, alpha, beta })
    }

    /// Score of any probe on the average embedding, `(alpha + (n-1) beta) / n`.
    pub fn delta(&self) -> f64 {
        (self.alpha + (self.n - 1) as f64 * self.beta) / self.n as f64
    }

    pub fn expected_rank(&self) -> usize {
        1 + self.k * (self.n - 1)
    }
}

/// `kn x n^k` matrix with `Y[(i,j), c] = alpha` if `c_i = j`, else `beta`.
/// Rows are ordered concept-major, columns in canonical tuple order.
pub fn onoff_matrix_raw(k: usize, n: usize, alpha: f64, beta: f64) -> Result<DMatrix<f64>> {
    let space = ConceptSpace::uniform(k, n)?;
    if space.grid_size() > ONOFF_GRID_CAP {
        return Err(Error::InvalidArgument(format!(
            "grid of {} tuples exceeds the cap of {ONOFF_GRID_CAP}",
            space.grid_size()
        )));
    }
    let tuples = space.enumerate_tuples();
    Ok(DMatrix::from_fn(k * n, tuples.len(), |r, c| {
        if tuples[c][r / n] == r % n {
            alpha
        } else {
            beta
        }
    }))
}

pub fn onoff_matrix(spec: &OnOffSpec) -> Result<DMatrix<f64>> {
    onoff_matrix_raw(spec.k, spec.n, spec.alpha, spec.beta)
}

pub fn onoff_rank(spec: &OnOffSpec) -> Result<usize> {
    Ok(linalg::numerical_rank(&onoff_matrix(spec)?, ONOFF_RANK_TOL))
}

/// Vertices of a regular simplex centered at the origin in `R^(n-1)`:
/// unit vectors with pairwise inner product `-1/(n-1)`.
pub fn simplex_vertices(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let scale = ((nf - 1.0) / nf).sqrt();
    // Helmert basis of the sum-zero subspace of R^n.
    DMatrix::from_fn(n, n - 1, |j, m| {
        let m1 = (m + 1) as f64;
        let h = if j <= m {
            1.0
        } else if j == m + 1 {
            -m1
        } else {
            0.0
        };
        h / (m1 * (m1 + 1.0)).sqrt() / scale
    })
}

/// Embeddings and probes in `d = 1 + k(n-1)` realizing the on/off pattern
/// exactly: `z_c = e_0 + sum_i E_i phi(c_i)`, `w_{i,j} = a e_0 + b E_i phi(j)`.
pub fn onoff_construction(spec: &OnOffSpec) -> Result<(EmbeddingSet, ProbeBank)> {
    let (k, n) = (spec.k, spec.n);
    let space = ConceptSpace::uniform(k, n)?;
    if space.grid_size() > ONOFF_GRID_CAP {
        return Err(Error::InvalidArgument("grid too large".into()));
    }
    let d = spec.expected_rank();
    let phi = simplex_vertices(n);
    let block = |i: usize| 1 + i * (n - 1);
    let set = EmbeddingSet::from_grid(space.clone(), d, |t| {
        let mut z = vec![0.0; d];
        z[0] = 1.0;
        for (i, &v) in t.iter().enumerate() {
            for m in 0..n - 1 {
                z[block(i) + m] = phi[(v, m)];
            }
        }
        z
    })?;
    let b = (spec.alpha - spec.beta) * (n - 1) as f64 / n as f64;
    let a = spec.alpha - b;
    let mut w = DMatrix::zeros(k * n, d);
    for i in 0..k {
        for j in 0..n {
            w[(i * n + j, 0)] = a;
            for m in 0..n - 1 {
                w[(i * n + j, block(i) + m)] = b * phi[(j, m)];
            }
        }
    }
    let bank = ProbeBank::new(space, w, DVector::zeros(k * n), Geometry::Euclidean)?;
    Ok((set, bank))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnOffReconstruction {
    pub factors: FactorSet,
    /// Worst deviation of the input scores from the pattern.
    pub input_residual: f64,
    /// Worst deviation of the reconstructed scores from the pattern.
    pub reconstruction_residual: f64,
    pub delta: f64,
    /// Worst deviation of the scores on the mean embedding from `delta`.
    pub delta_residual: f64,
}

fn pattern_residual(bank: &ProbeBank, z: &DMatrix<f64>, labels: &[Vec<usize>], spec: &OnOffSpec) -> Result<f64> {
    let h = bank.logits(z)?;
    let n = spec.n;
    let mut worst: f64 = 0.0;
    for (r, t) in labels.iter().enumerate() {
        for i in 0..spec.k {
            for j in 0..n {
                let target = if t[i] == j { spec.alpha } else { spec.beta };
                worst = worst.max((h[(r, bank.offset(i) + j)] - target).abs());
            }
        }
    }
    Ok(worst)
}

/// Averages the embeddings into additive factors and checks that the probes
/// cannot tell the reconstruction from the original.
pub fn onoff_additive_reconstruction(
    probes: &ProbeBank,
    set: &EmbeddingSet,
    spec: &OnOffSpec,
    tol: f64,
) -> Result<OnOffReconstruction> {
    if probes.space() != set.space() || set.space() != &ConceptSpace::uniform(spec.k, spec.n)? {
        return Err(Error::InvalidArgument("probes, embeddings and spec disagree on the grid".into()));
    }
    let input_residual = pattern_residual(probes, set.data(), set.labels(), spec)?;
    if input_residual > tol {
        return Err(Error::PatternViolated {
            residual: input_residual,
            tol,
        });
    }
    let factors = recover_by_averaging(set)?;
    let recon = factors.reconstruct_rows(set.labels())?;
    let reconstruction_residual = pattern_residual(probes, &recon, set.labels(), spec)?;
    let mean_row = DMatrix::from_row_slice(1, set.dim(), factors.mean().as_slice());
    let h = probes.logits(&mean_row)?;
    let delta = spec.delta();
    let delta_residual = h.iter().map(|v| (v - delta).abs()).fold(0.0, f64::max);
    if reconstruction_residual > 10.0 * tol {
        return Err(Error::PatternViolated {
            residual: reconstruction_residual,
            tol: 10.0 * tol,
        });
    }
    Ok(OnOffReconstruction {
        factors,
        input_residual,
        reconstruction_residual,
        delta,
        delta_residual,
    })
}
