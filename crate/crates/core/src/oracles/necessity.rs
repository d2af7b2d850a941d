//! Checks the conclusions that compositional generalization forces on a
//! binary grid: per-concept differences are constant, differences of
//! distinct concepts are orthogonal, and the SVMs trained on paired
//! cross-datasets are supported only by the counterfactual points.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_space::ConceptTuple;
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::oracles::svm::{hard_margin_svm, SvmSolution};

pub const NECESSITY_TOL: f64 = 1e-6;
pub const DIAGNOSTIC_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub pass: bool,
    pub worst_residual: f64,
    /// Checks that could not run (non-separable cross-datasets).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub k: usize,
    pub tol: f64,
    /// Paired SVMs keep weight only on the counterfactual points and agree
    /// with the counterfactual difference.
    pub support_vectors: ClauseResult,
    /// Per-concept differences are the same at every tuple.
    pub linearity: ClauseResult,
    /// Mean differences of distinct concepts are orthogonal.
    pub orthogonality: ClauseResult,
    pub svm_solves: usize,
    /// Largest majority-side coefficient seen, for diagnostics.
    pub max_majority_coefficient: f64,
}

impl NecessityReport {
    pub fn pass(&self) -> bool {
        self.support_vectors.pass && self.linearity.pass && self.orthogonality.pass
    }
}

/// One cross-dataset SVM: the minority point is the center with concept `i`
/// flipped; the majority is the center and its other single-concept flips.
struct CrossSvm {
    sol: SvmSolution,
    /// Majority coefficients excluding the center itself.
    off_center_weight: f64,
    /// `v = p - q` oriented from value 0 to value 1 of concept `i`.
    v: DVector<f64>,
}

fn row_of(set: &EmbeddingSet, t: &[usize]) -> DVector<f64> {
    let r = set.space().index_unchecked(t);
    set.data().row(r).transpose()
}

fn flip(t: &[usize], i: usize) -> ConceptTuple {
    let mut o = t.to_vec();
    o[i] = 1 - o[i];
    o
}

fn cross_svm(set: &EmbeddingSet, center: &[usize], i: usize) -> Result<CrossSvm> {
    let k = set.space().k();
    let d = set.dim();
    let minority = flip(center, i);
    let majority: Vec<ConceptTuple> = std::iter::once(center.to_vec())
        .chain((0..k).filter(|&j| j != i).map(|j| flip(center, j)))
        .collect();
    let mk = |ts: &[ConceptTuple]| {
        nalgebra::DMatrix::from_fn(ts.len(), d, |r, c| row_of(set, &ts[r])[c])
    };
    let single = mk(std::slice::from_ref(&minority));
    let many = mk(&majority);
    // Positive class is value 1 of concept i.
    let (sol, majority_coeffs) = if minority[i] == 1 {
        let s = hard_margin_svm(&single, &many)?;
        let g = s.gamma.clone();
        (s, g)
    } else {
        let s = hard_margin_svm(&many, &single)?;
        let l = s.lambda.clone();
        (s, l)
    };
    let off_center_weight = majority_coeffs[1..].iter().cloned().fold(0.0, f64::max);
    // w = 2 v / |v|^2, so v = 2 w / |w|^2.
    let w = DVector::from_column_slice(&sol.w);
    let v = &w * (2.0 / w.norm_squared());
    Ok(CrossSvm {
        sol,
        off_center_weight,
        v,
    })
}

/// Verifies the three necessity clauses on a binary grid with one row per tuple.
pub fn verify_necessity(set: &EmbeddingSet, tol: f64) -> Result<NecessityReport> {
    let space = set.space();
    if !space.is_binary() {
        return Err(Error::InvalidArgument("necessity check needs a binary concept space".into()));
    }
    if !set.is_one_row_per_tuple() || set.labels() != space.enumerate_tuples().as_slice() {
        return Err(Error::InvalidArgument(
            "necessity check needs exactly one row per tuple in canonical order".into(),
        ));
    }
    let k = space.k();
    let tuples = space.enumerate_tuples();

    // Counterfactual pairs (c with c_i = 0, c with c_i = 1).
    let pairs: Vec<(usize, ConceptTuple)> = (0..k)
        .flat_map(|i| tuples.iter().filter(move |t| t[i] == 0).map(move |t| (i, t.clone())))
        .collect();

    struct PairOutcome {
        i: usize,
        diff: DVector<f64>,
        residual_a: Option<f64>,
        max_coeff: f64,
        solves: usize,
    }

    let outcomes: Vec<PairOutcome> = pairs
        .par_iter()
        .map(|(i, c0)| {
            let i = *i;
            let c1 = flip(c0, i);
            let diff = row_of(set, &c1) - row_of(set, c0);
            let dn = diff.norm().max(f64::MIN_POSITIVE);
            let a = cross_svm(set, c0, i);
            let b = cross_svm(set, &c1, i);
            let (residual_a, max_coeff) = match (a, b) {
                (Ok(a), Ok(b)) => {
                    let coeff = a.off_center_weight.max(b.off_center_weight);
                    let va = (&a.v - &diff).norm() / dn;
                    let vb = (&b.v - &diff).norm() / dn;
                    let wa = DVector::from_column_slice(&a.sol.w);
                    let wb = DVector::from_column_slice(&b.sol.w);
                    let agree = (&wa - &wb).norm() / wa.norm().max(f64::MIN_POSITIVE)
                        + (a.sol.b - b.sol.b).abs() / (1.0 + a.sol.b.abs());
                    (Some(coeff.max(va).max(vb).max(agree)), coeff)
                }
                _ => (None, 0.0),
            };
            PairOutcome {
                i,
                diff,
                residual_a,
                max_coeff,
                solves: 2,
            }
        })
        .collect();

    let mut worst_a: f64 = 0.0;
    let mut skipped_a = 0;
    let mut max_majority_coefficient: f64 = 0.0;
    let mut solves = 0;
    let mut diffs: Vec<Vec<DVector<f64>>> = vec![Vec::new(); k];
    for o in outcomes {
        solves += o.solves;
        match o.residual_a {
            Some(r) => worst_a = worst_a.max(r),
            None => skipped_a += 1,
        }
        max_majority_coefficient = max_majority_coefficient.max(o.max_coeff);
        diffs[o.i].push(o.diff);
    }

    let means: Vec<DVector<f64>> = diffs
        .iter()
        .map(|ds| ds.iter().fold(DVector::zeros(set.dim()), |a, d| a + d) / ds.len() as f64)
        .collect();
    let mut worst_b: f64 = 0.0;
    for (ds, m) in diffs.iter().zip(&means) {
        let mn = m.norm().max(f64::MIN_POSITIVE);
        for d in ds {
            worst_b = worst_b.max((d - m).norm() / mn);
        }
    }
    let mut worst_c: f64 = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let denom = means[i].norm() * means[j].norm();
            if denom > 0.0 {
                worst_c = worst_c.max(means[i].dot(&means[j]).abs() / denom);
            }
        }
    }
    Ok(NecessityReport {
        k,
        tol,
        support_vectors: ClauseResult {
            pass: skipped_a < pairs.len() && worst_a <= tol,
            worst_residual: worst_a,
            skipped: skipped_a,
        },
        linearity: ClauseResult {
            pass: worst_b <= tol,
            worst_residual: worst_b,
            skipped: 0,
        },
        orthogonality: ClauseResult {
            pass: worst_c <= tol,
            worst_residual: worst_c,
            skipped: 0,
        },
        svm_solves: solves,
        max_majority_coefficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_space::ConceptSpace;
    use crate::synthetic_lab::generators::{generate_factorized, generate_unstable_binary};

    #[test]
    fn orthogonal_additive_passes() {
        for k in 1..=4 {
            let space = ConceptSpace::binary(k).unwrap();
            let (set, _) = generate_factorized(&space, k + 2, true, 1.0, k as u64).unwrap();
            let r = verify_necessity(&set, NECESSITY_TOL).unwrap();
            assert!(r.pass(), "k={k}: {r:?}");
        }
    }

    #[test]
    fn unstable_witness_fails_linearity() {
        let (set, _) = generate_unstable_binary(3, 5, 0.5, 1).unwrap();
        let r = verify_necessity(&set, NECESSITY_TOL).unwrap();
        assert!(!r.linearity.pass);
        assert!(r.linearity.worst_residual > 0.1);
    }

    #[test]
    fn non_orthogonal_additive_fails_orthogonality() {
        let space = ConceptSpace::binary(3).unwrap();
        let (set, _) = generate_factorized(&space, 3, false, 1.0, 5).unwrap();
        let r = verify_necessity(&set, NECESSITY_TOL).unwrap();
        assert!(r.linearity.pass);
        assert!(!r.orthogonality.pass);
    }

    #[test]
    fn single_concept_is_vacuous() {
        let space = ConceptSpace::binary(1).unwrap();
        let (set, _) = generate_factorized(&space, 2, true, 1.0, 0).unwrap();
        let r = verify_necessity(&set, NECESSITY_TOL).unwrap();
        assert!(r.pass());
        assert_eq!(r.orthogonality.worst_residual, 0.0);
    }
}
