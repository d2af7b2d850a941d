//! Checks that orthogonal additive binary factors let per-concept SVMs
//! trained on any valid support classify the whole grid, point along the
//! factor difference, and agree with each other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_space::{ConceptSpace, TrainingSupport, ValidityRule};
use crate::error::{Error, Result};
use crate::factor_model::FactorSet;
use crate::oracles::svm::binary_svm_readouts;
use crate::probe_trainer::{sigmoid, ProbeBank};
use crate::synthetic_lab::stability::draw_supports;

pub const ORTHOGONALITY_PRECONDITION: f64 = 1e-8;
pub const DIRECTION_TOL: f64 = 1e-6;
pub const TV_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub k: usize,
    pub supports: usize,
    /// Worst per-concept accuracy on the full grid over all supports.
    pub min_accuracy: f64,
    /// Smallest cosine between an SVM weight and its factor difference.
    pub min_direction_cosine: f64,
    /// Every support holds a counterfactual pair for every concept.
    pub counterfactual_pairs: bool,
    /// Largest posterior difference between two supports' readouts.
    pub max_pairwise_tv: f64,
    pub pass: bool,
}

/// Whether the support holds two tuples differing only in concept `i`.
pub fn has_counterfactual_pair(space: &ConceptSpace, support: &TrainingSupport, i: usize) -> bool {
    let mut present = vec![false; space.grid_size()];
    for t in support.tuples() {
        present[space.index_unchecked(t)] = true;
    }
    support.tuples().iter().any(|t| {
        let mut f = t.clone();
        f[i] = 1 - f[i];
        present[space.index_unchecked(&f)]
    })
}

/// Runs the sufficiency check over `count` majority supports (sampled from
/// `seed`) or over the cross-dataset at every center.
pub fn verify_sufficiency(factors: &FactorSet, rule: &ValidityRule, count: usize, seed: u64) -> Result<SufficiencyReport> {
    let space = factors.space();
    if !space.is_binary() {
        return Err(Error::InvalidArgument("sufficiency check needs binary concepts".into()));
    }
    let k = space.k();
    let deltas: Vec<_> = (0..k).map(|i| factors.factor(i, 1) - factors.factor(i, 0)).collect();
    for i in 0..k {
        if deltas[i].norm() == 0.0 {
            return Err(Error::InvalidArgument(format!("concept {i} has identical factors")));
        }
        for j in i + 1..k {
            let c = deltas[i].dot(&deltas[j]).abs() / (deltas[i].norm() * deltas[j].norm());
            if c > ORTHOGONALITY_PRECONDITION {
                return Err(Error::InvalidArgument(format!(
                    "factor differences of concepts {i} and {j} are not orthogonal (|cos| = {c:e})"
                )));
            }
        }
    }
    let set = factors.to_embedding_set()?;
    let supports: Vec<TrainingSupport> = match rule {
        ValidityRule::BinaryMajority => draw_supports(&set, rule, count, seed)?,
        ValidityRule::CrossAt(_) => space
            .enumerate_tuples()
            .iter()
            .map(|c| space.cross_dataset(c))
            .collect::<Result<_>>()?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "sufficiency uses majority or cross-dataset supports, not {other:?}"
            )))
        }
    };
    let counterfactual_pairs = supports
        .iter()
        .all(|s| (0..k).all(|i| has_counterfactual_pair(space, s, i)));

    let banks: Vec<Result<(Vec<f64>, f64, ProbeBank)>> = supports
        .par_iter()
        .map(|s| {
            let (sols, bank) = binary_svm_readouts(&set, s)?;
            let acc = bank.accuracy(set.data(), set.labels())?;
            let min_acc = acc.iter().cloned().fold(f64::INFINITY, f64::min);
            let cos: Vec<f64> = sols
                .iter()
                .zip(&deltas)
                .map(|(sol, d)| {
                    let w = nalgebra::DVector::from_column_slice(&sol.w);
                    w.dot(d) / (w.norm() * d.norm())
                })
                .collect();
            Ok((cos, min_acc, bank))
        })
        .collect();
    let banks = banks.into_iter().collect::<Result<Vec<_>>>()?;

    let min_accuracy = banks.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    let min_direction_cosine = banks
        .iter()
        .flat_map(|b| b.0.iter().copied())
        .fold(f64::INFINITY, f64::min);

    let z = set.data();
    let post: Vec<Vec<f64>> = banks
        .iter()
        .map(|(_, _, b)| {
            let h = b.logits(z).expect("dimensions match");
            (0..z.nrows())
                .flat_map(|r| (0..k).map(move |i| (r, i)))
                .map(|(r, i)| sigmoid(h[(r, 2 * i + 1)] - h[(r, 2 * i)]))
                .collect()
        })
        .collect();
    let mut max_pairwise_tv: f64 = 0.0;
    for a in 0..post.len() {
        for b in a + 1..post.len() {
            for (x, y) in post[a].iter().zip(&post[b]) {
                max_pairwise_tv = max_pairwise_tv.max((x - y).abs());
            }
        }
    }
    let pass = min_accuracy == 1.0
        && min_direction_cosine > 1.0 - DIRECTION_TOL
        && counterfactual_pairs
        && max_pairwise_tv <= TV_TOL;
    Ok(SufficiencyReport {
        k,
        supports: supports.len(),
        min_accuracy,
        min_direction_cosine,
        counterfactual_pairs,
        max_pairwise_tv,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic_lab::generators::generate_factorized;

    #[test]
    fn orthogonal_factors_pass_majority_and_cross() {
        let space = ConceptSpace::binary(3).unwrap();
        let (_, f) = generate_factorized(&space, 5, true, 1.0, 7).unwrap();
        let r = verify_sufficiency(&f, &ValidityRule::BinaryMajority, 5, 1).unwrap();
        assert!(r.pass, "{r:?}");
        let r = verify_sufficiency(&f, &ValidityRule::CrossAt(vec![0; 3]), 0, 0).unwrap();
        assert_eq!(r.supports, 8);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn non_orthogonal_factors_rejected() {
        let space = ConceptSpace::binary(3).unwrap();
        let (_, f) = generate_factorized(&space, 3, false, 1.0, 7).unwrap();
        assert!(verify_sufficiency(&f, &ValidityRule::BinaryMajority, 2, 0).is_err());
    }

    #[test]
    fn majority_supports_always_hold_counterfactual_pairs() {
        for k in 1..=6 {
            let space = ConceptSpace::binary(k).unwrap();
            for seed in 0..50 {
                let s = space.sample_support(&ValidityRule::BinaryMajority, seed).unwrap();
                for i in 0..k {
                    assert!(has_counterfactual_pair(&space, &s, i));
                }
            }
        }
    }
}
