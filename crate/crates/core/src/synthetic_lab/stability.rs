//! Agreement of readouts trained on different valid supports.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_space::{TrainingSupport, ValidityRule};
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::oracles::svm::binary_svm_readouts;
use crate::probe_trainer::{train_probes, ProbeBank, TrainConfig};
use crate::synthetic_lab::free::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Hard-margin SVM per concept.
    Svm,
    /// Finite-epoch gradient training of probes.
    Trained(TrainConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub trials: usize,
    /// Largest posterior total-variation distance over support pairs, grid
    /// tuples and concepts.
    pub max_tv: f64,
    pub per_concept_tv: Vec<f64>,
    /// `1 - min cos` between per-concept weight directions across supports.
    pub direction_dispersion: Vec<f64>,
    pub support_sizes: Vec<usize>,
}

/// Draws `trials` distinct supports under `rule` (majority supports by seed,
/// cross-datasets at distinct sampled centers).
pub fn draw_supports(set: &EmbeddingSet, rule: &ValidityRule, trials: usize, seed: u64) -> Result<Vec<TrainingSupport>> {
    let space = set.space();
    match rule {
        ValidityRule::BinaryMajority => (0..trials)
            .map(|t| space.sample_support(rule, derive_seed(seed, &[t as u64])))
            .collect(),
        ValidityRule::CrossAt(_) => {
            if trials > space.grid_size() {
                return Err(Error::InvalidArgument(format!(
                    "only {} distinct cross-dataset centers exist",
                    space.grid_size()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut centers = index::sample(&mut rng, space.grid_size(), trials).into_vec();
            centers.sort_unstable();
            centers
                .into_iter()
                .map(|c| space.cross_dataset(&space.tuple_at(c)?))
                .collect()
        }
        other => Err(Error::InvalidArgument(format!(
            "stability experiments use majority or cross-dataset supports, not {other:?}"
        ))),
    }
}

/// Trains readouts on `trials` supports and measures how much their
/// posteriors and weight directions disagree over the full grid.
pub fn stability_experiment(
    set: &EmbeddingSet,
    rule: &ValidityRule,
    trials: usize,
    readout: &Readout,
    seed: u64,
) -> Result<StabilityReport> {
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let space = set.space();
    if !space.is_binary() {
        return Err(Error::InvalidArgument("stability experiments need a binary concept space".into()));
    }
    let supports = draw_supports(set, rule, trials, seed)?;
    let banks: Vec<Result<ProbeBank>> = supports
        .par_iter()
        .map(|s| match readout {
            Readout::Svm => binary_svm_readouts(set, s).map(|(_, b)| b),
            Readout::Trained(c) => train_probes(set, s, c).map(|t| t.bank),
        })
        .collect();
    let banks = banks.into_iter().collect::<Result<Vec<_>>>()?;

    let k = space.k();
    let grid = space.full_grid();
    let rows = set.select_rows(grid.tuples())?;
    let z = set.subset(&rows).data().clone();
    // posteriors[bank][row][concept] = P(value 1)
    let post: Vec<Vec<Vec<f64>>> = banks
        .iter()
        .map(|b| {
            let h = b.logits(&z).expect("dimension checked by training");
            (0..z.nrows())
                .map(|r| (0..k).map(|i| crate::probe_trainer::sigmoid(h[(r, 2 * i + 1)] - h[(r, 2 * i)])).collect())
                .collect()
        })
        .collect();
    let mut per_concept_tv = vec![0.0f64; k];
    for a in 0..banks.len() {
        for b in a + 1..banks.len() {
            for (pa, pb) in post[a].iter().zip(&post[b]) {
                for (i, tv) in per_concept_tv.iter_mut().enumerate() {
                    // Binary TV distance is the difference of one probability.
                    *tv = tv.max((pa[i] - pb[i]).abs());
                }
            }
        }
    }
    let mut direction_dispersion = Vec::with_capacity(k);
    for i in 0..k {
        let dirs: Vec<_> = banks
            .iter()
            .map(|b| {
                let v = b.weight(i, 1) - b.weight(i, 0);
                let n = v.norm();
                if n > 0.0 {
                    v / n
                } else {
                    v
                }
            })
            .collect();
        let mut min_cos = 1.0f64;
        for a in 0..dirs.len() {
            for b in a + 1..dirs.len() {
                min_cos = min_cos.min(dirs[a].dot(&dirs[b]));
            }
        }
        direction_dispersion.push((1.0 - min_cos).max(0.0));
    }
    Ok(StabilityReport {
        trials,
        max_tv: per_concept_tv.iter().cloned().fold(0.0, f64::max),
        per_concept_tv,
        direction_dispersion,
        support_sizes: supports.iter().map(|s| s.len()).collect(),
    })
}
