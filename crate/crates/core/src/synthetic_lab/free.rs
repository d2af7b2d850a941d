//! Free embeddings optimized jointly with their probes, and the scan for the
//! smallest dimension at which a grid becomes classifiable.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_space::{ConceptSpace, ValidityRule};
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::probe_trainer::{Adam, Geometry, Loss, ProbeBank, TrainConfig};

pub const DEFAULT_GRID_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    pub loss: Loss,
    pub geometry: Geometry,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub grid_cap: usize,
    /// Sample `grid_cap` tuples uniformly when the grid is larger than the cap.
    pub allow_sampling: bool,
}

impl Default for LabConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            loss: t.loss,
            geometry: t.geometry,
            epochs: t.epochs,
            lr: t.lr,
            seed: t.seed,
            grid_cap: DEFAULT_GRID_CAP,
            allow_sampling: false,
        }
    }
}

impl LabConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            geometry: self.geometry,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
            convergence: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabRun {
    pub d: usize,
    pub config: LabConfig,
    pub set: EmbeddingSet,
    pub bank: ProbeBank,
    pub history: Vec<f64>,
    /// Per-concept training accuracy over the optimized tuples.
    pub accuracy: Vec<f64>,
    /// True when only a uniform sample of the grid was optimized.
    pub approximate: bool,
}

impl LabRun {
    pub fn mean_accuracy(&self) -> f64 {
        self.accuracy.iter().sum::<f64>() / self.accuracy.len() as f64
    }

    pub fn min_accuracy(&self) -> f64 {
        self.accuracy.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Optimizes one embedding per tuple together with the probes, from
/// `z ~ N(0, I)`, using the same full-batch Adam and cosine schedule as
/// probe training.
pub fn train_free_embeddings(space: &ConceptSpace, d: usize, config: &LabConfig) -> Result<LabRun> {
    let tc = config.train_config();
    tc.validate()?;
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let (labels, approximate) = if space.grid_size() > config.grid_cap {
        if !config.allow_sampling {
            return Err(Error::InvalidArgument(format!(
                "grid of {} tuples exceeds the cap of {}; enable sampling",
                space.grid_size(),
                config.grid_cap
            )));
        }
        let s = space.sample_support(&ValidityRule::FixedSize(config.grid_cap), config.seed)?;
        (s.tuples().to_vec(), true)
    } else {
        (space.enumerate_tuples(), false)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z = DMatrix::from_fn(labels.len(), d, |_, _| StandardNormal.sample(&mut rng));
    let mut bank = ProbeBank::random(space.clone(), d, config.geometry, &mut rng);
    let spherical = config.geometry == Geometry::Spherical;
    if spherical {
        normalize_rows_in_place(&mut z);
    }
    let mut params = bank.params();
    let mut adam_bank = Adam::new(params.len());
    let mut adam_z = Adam::new(z.len());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (loss, grad, dz) = bank.loss_and_grad(&z, &labels, config.loss, true)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
        let lr = tc.lr_at(epoch);
        adam_bank.step(&mut params, &grad.flatten(config.geometry), lr);
        let dz = dz.expect("requested embedding gradient");
        adam_z.step(z.as_mut_slice(), dz.as_slice(), lr);
        bank.set_params(&params);
        if spherical {
            bank.normalize_weights();
            params = bank.params();
            normalize_rows_in_place(&mut z);
        }
    }
    let accuracy = bank.accuracy(&z, &labels)?;
    let mut set = EmbeddingSet::new(space.clone(), z, labels)?;
    set.meta.insert("generator".into(), "free_embeddings".into());
    set.meta.insert("seed".into(), config.seed.to_string());
    Ok(LabRun {
        d,
        config: config.clone(),
        set,
        bank,
        history,
        accuracy,
        approximate,
    })
}

fn normalize_rows_in_place(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub restarts: usize,
    pub d_max: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub success_threshold: f64,
    pub grid_cap: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            d_max: 32,
            epochs: 5000,
            lr: 0.1,
            seed: 0,
            success_threshold: 0.99,
            grid_cap: DEFAULT_GRID_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimAttempt {
    pub d: usize,
    /// Best mean per-concept accuracy over restarts.
    pub best_mean_accuracy: f64,
    /// Worst concept of the restart with the best mean.
    pub best_min_accuracy: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDimCell {
    pub k: usize,
    pub n: usize,
    /// First successful dimension, if any up to `d_max`.
    pub min_d: Option<usize>,
    pub attempts: Vec<DimAttempt>,
    pub approximate: bool,
}

impl MinDimCell {
    /// Success below `d = k` is possible at the 0.99 threshold for large `k`
    /// (a few misclassified tuples), never with perfect accuracy.
    pub fn below_bound(&self) -> bool {
        self.min_d.is_some_and(|d| d < self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDimTable {
    pub loss: Loss,
    pub geometry: Geometry,
    pub config: ScanConfig,
    pub cells: Vec<MinDimCell>,
}

impl MinDimTable {
    pub fn cell(&self, k: usize, n: usize) -> Option<&MinDimCell> {
        self.cells.iter().find(|c| c.k == k && c.n == n)
    }
}

/// Mixes the scan seed with the cell coordinates into an independent stream seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        // splitmix64 finalizer
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// For each `(k, n)`, scans `d = 1, 2, ...` until some restart reaches the
/// success threshold on mean per-concept accuracy.
pub fn min_dim_scan(
    ks: &[usize],
    ns: &[usize],
    loss: Loss,
    geometry: Geometry,
    config: &ScanConfig,
) -> Result<MinDimTable> {
    if ks.is_empty() || ns.is_empty() {
        return Err(Error::InvalidArgument("k and n lists must be non-empty".into()));
    }
    if config.restarts == 0 || config.d_max == 0 {
        return Err(Error::InvalidArgument("restarts and d_max must be positive".into()));
    }
    let cells: Vec<(usize, usize)> = ks
        .iter()
        .flat_map(|&k| ns.iter().map(move |&n| (k, n)))
        .collect();
    let results: Vec<Result<MinDimCell>> = cells
        .par_iter()
        .map(|&(k, n)| scan_cell(k, n, loss, geometry, config))
        .collect();
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MinDimTable {
        loss,
        geometry,
        config: config.clone(),
        cells,
    })
}

fn scan_cell(k: usize, n: usize, loss: Loss, geometry: Geometry, config: &ScanConfig) -> Result<MinDimCell> {
    let space = ConceptSpace::uniform(k, n)?;
    let mut attempts = Vec::new();
    let mut min_d = None;
    let mut approximate = false;
    for d in 1..=config.d_max {
        let runs: Vec<Result<LabRun>> = (0..config.restarts)
            .into_par_iter()
            .map(|r| {
                let lab = LabConfig {
                    loss,
                    geometry,
                    epochs: config.epochs,
                    lr: config.lr,
                    seed: derive_seed(config.seed, &[k as u64, n as u64, d as u64, r as u64]),
                    grid_cap: config.grid_cap,
                    allow_sampling: true,
                };
                train_free_embeddings(&space, d, &lab)
            })
            .collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        approximate |= runs.iter().any(|r| r.approximate);
        if d < k {
            if let Some(r) = runs.iter().find(|r| r.min_accuracy() == 1.0 && !r.approximate) {
                return Err(Error::Degenerate(format!(
                    "k={k}, n={n}: perfect accuracy at d={d} < k (seed {}) contradicts the region-count bound",
                    r.config.seed
                )));
            }
        }
        let best = runs
            .iter()
            .max_by(|a, b| a.mean_accuracy().total_cmp(&b.mean_accuracy()))
            .expect("at least one restart");
        let success = best.mean_accuracy() >= config.success_threshold;
        attempts.push(DimAttempt {
            d,
            best_mean_accuracy: best.mean_accuracy(),
            best_min_accuracy: best.min_accuracy(),
            success,
        });
        if success {
            min_d = Some(d);
            break;
        }
    }
    Ok(MinDimCell {
        k,
        n,
        min_d,
        attempts,
        approximate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(loss: Loss, geometry: Geometry, seed: u64) -> LabConfig {
        LabConfig {
            loss,
            geometry,
            epochs: 2000,
            seed,
            ..LabConfig::default()
        }
    }

    #[test]
    fn two_binary_concepts_fit_in_two_dims() {
        let space = ConceptSpace::binary(2).unwrap();
        for seed in 0..3 {
            let run = train_free_embeddings(&space, 2, &quick(Loss::Ce, Geometry::Euclidean, seed)).unwrap();
            assert_eq!(run.accuracy, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn three_binary_concepts_do_not_fit_in_two_dims() {
        let space = ConceptSpace::binary(3).unwrap();
        for seed in 0..3 {
            let run = train_free_embeddings(&space, 2, &quick(Loss::Ce, Geometry::Euclidean, seed)).unwrap();
            assert!(run.min_accuracy() < 1.0);
        }
    }

    #[test]
    fn spherical_needs_about_one_more_dimension() {
        let space = ConceptSpace::uniform(2, 6).unwrap();
        let best = (0..3)
            .map(|seed| {
                train_free_embeddings(&space, 3, &quick(Loss::Ce, Geometry::Spherical, seed))
                    .unwrap()
                    .mean_accuracy()
            })
            .fold(0.0, f64::max);
        assert!(best >= 0.99, "{best}");
    }

    #[test]
    fn cap_without_sampling_is_an_error() {
        let space = ConceptSpace::uniform(3, 5).unwrap();
        let config = LabConfig {
            grid_cap: 100,
            epochs: 1,
            ..LabConfig::default()
        };
        assert!(train_free_embeddings(&space, 2, &config).is_err());
        let config = LabConfig {
            allow_sampling: true,
            ..config
        };
        let run = train_free_embeddings(&space, 2, &config).unwrap();
        assert!(run.approximate);
        assert_eq!(run.set.rows(), 100);
    }

    #[test]
    fn free_training_is_deterministic() {
        let space = ConceptSpace::uniform(2, 3).unwrap();
        let c = LabConfig {
            epochs: 50,
            ..LabConfig::default()
        };
        let a = train_free_embeddings(&space, 2, &c).unwrap();
        let b = train_free_embeddings(&space, 2, &c).unwrap();
        assert_eq!(a.set, b.set);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn small_scan() {
        let config = ScanConfig {
            epochs: 1500,
            d_max: 4,
            ..ScanConfig::default()
        };
        let t = min_dim_scan(&[2], &[2], Loss::Ce, Geometry::Euclidean, &config).unwrap();
        let c = t.cell(2, 2).unwrap();
        assert_eq!(c.min_d, Some(2));
        assert!(!c.attempts[0].success);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(0, &[2, 2, 1, 0]);
        let b = derive_seed(0, &[2, 2, 1, 1]);
        let c = derive_seed(1, &[2, 2, 1, 0]);
        assert!(a != b && a != c && b != c);
    }
}
