//! Additive per-concept factors `z_c ~ mean + sum_i u_{i,c_i}`: recovery by
//! averaging or least squares, canonical centering, and reconstruction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::concept_space::{ConceptSpace, ConceptTuple};
use crate::embedding_store::{
    self, column_mean, join_list, malformed, read_f32le, write_f32le, EmbeddingSet, Manifest,
    MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::linalg;

pub const FACTORS_FILE: &str = "factors.f32";

/// Singular values below this fraction of the largest are treated as zero
/// when solving for factors.
pub const LSTSQ_RANK_TOL: f64 = 1e-10;

/// Per-concept factor vectors plus a global offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    space: ConceptSpace,
    /// One `n_i x d` matrix per concept, row `j` is `u_{i,j}`.
    factors: Vec<DMatrix<f64>>,
    mean: DVector<f64>,
}

impl FactorSet {
    pub fn new(space: ConceptSpace, factors: Vec<DMatrix<f64>>, mean: DVector<f64>) -> Result<Self> {
        if factors.len() != space.k() {
            return Err(Error::DimensionMismatch {
                expected: space.k(),
                got: factors.len(),
            });
        }
        let d = mean.len();
        for (i, f) in factors.iter().enumerate() {
            if f.nrows() != space.cardinality(i) {
                return Err(Error::DimensionMismatch {
                    expected: space.cardinality(i),
                    got: f.nrows(),
                });
            }
            if f.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: f.ncols(),
                });
            }
        }
        Ok(Self {
            space,
            factors,
            mean,
        })
    }

    pub fn zeros(space: ConceptSpace, d: usize) -> Self {
        let factors = space
            .cardinalities()
            .iter()
            .map(|&n| DMatrix::zeros(n, d))
            .collect();
        Self {
            space,
            factors,
            mean: DVector::zeros(d),
        }
    }

    pub fn space(&self) -> &ConceptSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn concept(&self, i: usize) -> &DMatrix<f64> {
        &self.factors[i]
    }

    pub fn factor(&self, i: usize, j: usize) -> DVector<f64> {
        self.factors[i].row(j).transpose()
    }

    /// Returns the per-concept zero-sum form with identical reconstructions.
    pub fn canonical(&self) -> FactorSet {
        let mut out = self.clone();
        for f in &mut out.factors {
            let shift = column_mean(f);
            for mut row in f.row_iter_mut() {
                row -= shift.transpose();
            }
            out.mean += shift;
        }
        out
    }

    /// Largest `|sum_j u_{i,j}|` entry over concepts, relative to the largest factor entry.
    pub fn centering_residual(&self) -> f64 {
        let scale = self.factors.iter().map(|f| f.amax()).fold(0.0, f64::max);
        let worst = self
            .factors
            .iter()
            .map(|f| f.row_sum().amax())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }

    pub fn reconstruct(&self, t: &[usize]) -> Result<DVector<f64>> {
        self.space.check_tuple(t)?;
        Ok(self.reconstruct_unchecked(t))
    }

    fn reconstruct_unchecked(&self, t: &[usize]) -> DVector<f64> {
        let mut z = self.mean.clone();
        for (f, &v) in self.factors.iter().zip(t) {
            z += f.row(v).transpose();
        }
        z
    }

    /// Reconstructions for each label, stacked as rows.
    pub fn reconstruct_rows(&self, labels: &[ConceptTuple]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(labels.len(), self.dim());
        for (r, t) in labels.iter().enumerate() {
            self.space.check_tuple(t)?;
            out.set_row(r, &self.reconstruct_unchecked(t).transpose());
        }
        Ok(out)
    }

    /// One row per grid tuple built from the factors.
    pub fn to_embedding_set(&self) -> Result<EmbeddingSet> {
        let labels = self.space.enumerate_tuples();
        let data = self.reconstruct_rows(&labels)?;
        EmbeddingSet::new(self.space.clone(), data, labels)
    }

    /// Largest entrywise difference to another factor set.
    pub fn max_abs_diff(&self, other: &FactorSet) -> f64 {
        let mut worst = (&self.mean - &other.mean).amax();
        for (a, b) in self.factors.iter().zip(&other.factors) {
            worst = worst.max((a - b).amax());
        }
        worst
    }
}

/// Whether every concept value occurs equally often among the rows.
pub fn is_balanced(set: &EmbeddingSet) -> bool {
    let space = set.space();
    (0..space.k()).all(|i| {
        let mut counts = vec![0usize; space.cardinality(i)];
        for t in set.labels() {
            counts[t[i]] += 1;
        }
        counts.iter().all(|&c| c == counts[0])
    })
}

/// Conditional means minus the global mean, then per-concept centering.
///
/// Rows are weighted equally. On unbalanced data the conditional-mean
/// deviations are not zero-sum; centering them moves the shift into the
/// global offset so reconstructions are unchanged.
pub fn recover_by_averaging(set: &EmbeddingSet) -> Result<FactorSet> {
    let space = set.space().clone();
    let d = set.dim();
    let global = column_mean(set.data());
    let mut factors = Vec::with_capacity(space.k());
    for i in 0..space.k() {
        let n = space.cardinality(i);
        let mut sums = DMatrix::zeros(n, d);
        let mut counts = vec![0usize; n];
        for (r, t) in set.labels().iter().enumerate() {
            let mut row = sums.row_mut(t[i]);
            row += set.data().row(r);
            counts[t[i]] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::MissingConceptValue { concept: i, value: j });
            }
            let mut row = sums.row_mut(j);
            row /= c as f64;
            row -= global.transpose();
        }
        factors.push(sums);
    }
    Ok(FactorSet::new(space, factors, global)?.canonical())
}

/// One-hot encoding of labels, one block of `n_i` columns per concept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    /// Column offset of each concept block.
    pub offsets: Vec<usize>,
}

impl DesignMatrix {
    pub fn rank(&self) -> usize {
        linalg::numerical_rank(&self.matrix, LSTSQ_RANK_TOL)
    }
}

pub fn build_design_matrix(space: &ConceptSpace, labels: &[ConceptTuple]) -> Result<DesignMatrix> {
    let mut offsets = Vec::with_capacity(space.k());
    let mut acc = 0;
    for &n in space.cardinalities() {
        offsets.push(acc);
        acc += n;
    }
    let mut matrix = DMatrix::zeros(labels.len(), acc);
    for (r, t) in labels.iter().enumerate() {
        space.check_tuple(t)?;
        for (i, &v) in t.iter().enumerate() {
            matrix[(r, offsets[i] + v)] = 1.0;
        }
    }
    Ok(DesignMatrix { matrix, offsets })
}

/// Minimum-norm least-squares factors for the centered data, canonicalized.
/// Requires the design matrix to reach its maximal rank.
pub fn recover_by_least_squares(set: &EmbeddingSet) -> Result<FactorSet> {
    let space = set.space().clone();
    let design = build_design_matrix(&space, set.labels())?;
    let (pinv, rank) = linalg::pseudo_inverse(&design.matrix, LSTSQ_RANK_TOL);
    let required = space.cross_size();
    if rank < required {
        return Err(Error::RankDeficient { rank, required });
    }
    let global = column_mean(set.data());
    let centered = embedding_store::center_rows(set.data(), &global);
    let solution = pinv * centered;
    let factors = design
        .offsets
        .iter()
        .zip(space.cardinalities())
        .map(|(&o, &n)| solution.rows(o, n).into_owned())
        .collect();
    Ok(FactorSet::new(space, factors, global)?.canonical())
}

/// Stores factors in an existing dump directory under a `factors.` manifest section.
pub fn write_factors(factors: &FactorSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut m = Manifest::read(dir)?;
    m.remove_prefix("factors.");
    m.set("factors.blocks", join_list(factors.space.cardinalities()));
    m.set("factors.d", factors.dim().to_string());
    m.set("factors.dtype", "f32le");
    let rows = factors
        .factors
        .iter()
        .flat_map(|f| f.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
        .chain(std::iter::once(factors.mean.iter().copied().collect()));
    write_f32le(&dir.join(FACTORS_FILE), rows.flatten())?;
    m.write(dir)
}

pub fn read_factors(dir: impl AsRef<Path>) -> Result<FactorSet> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let m = Manifest::read(dir)?;
    let blocks = m.require_list("factors.blocks", &mpath)?;
    let d = m.require_usize("factors.d", &mpath)?;
    let space = ConceptSpace::new(blocks.clone()).map_err(|e| malformed(&mpath, &e.to_string()))?;
    let total_rows: usize = blocks.iter().sum::<usize>() + 1;
    let values = read_f32le(&dir.join(FACTORS_FILE), total_rows * d)?;
    let all = DMatrix::from_row_slice(total_rows, d, &values);
    let mut factors = Vec::new();
    let mut off = 0;
    for &n in &blocks {
        factors.push(all.rows(off, n).into_owned());
        off += n;
    }
    let mean = all.row(off).transpose();
    FactorSet::new(space, factors, mean)
}
