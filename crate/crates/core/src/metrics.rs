//! Whitened projected R^2, factor orthogonality, effective rank and
//! compositional accuracy.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concept_space::TrainingSupport;
use crate::embedding_store::{
    column_mean, center_rows, EmbeddingSet, SpanProjector, WhitenTransform, DEFAULT_WHITEN_TOL,
};
use crate::error::{Error, Result};
use crate::factor_model::FactorSet;
use crate::linalg;
use crate::probe_trainer::ProbeBank;

/// Order of probe-span projection and whitening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineOrder {
    /// Project onto the probe span, then whiten the projected data.
    #[default]
    ProjectThenWhiten,
    /// Whiten the raw data, then project onto the span of the probes
    /// expressed in whitened coordinates.
    WhitenThenProject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Options {
    pub whiten: bool,
    pub order: PipelineOrder,
    pub whiten_tol: f64,
}

impl Default for R2Options {
    fn default() -> Self {
        Self {
            whiten: true,
            order: PipelineOrder::ProjectThenWhiten,
            whiten_tol: DEFAULT_WHITEN_TOL,
        }
    }
}

/// Which transforms were applied before computing R^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub projection_rank: Option<usize>,
    pub whitening_rank: Option<usize>,
    pub order: PipelineOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Result {
    pub r2: f64,
    pub numerator_ss: f64,
    pub denominator_ss: f64,
    pub pipeline: Pipeline,
}

/// `1 - sum |z - z_hat|^2 / sum |z - z_bar|^2` after the optional probe-span
/// projection and whitening, with the same transform applied to data and
/// reconstructions.
pub fn projected_whitened_r2(
    set: &EmbeddingSet,
    factors: &FactorSet,
    probes: Option<&ProbeBank>,
    opts: &R2Options,
) -> Result<R2Result> {
    if factors.space() != set.space() {
        return Err(Error::InvalidArgument("factors belong to a different concept space".into()));
    }
    if factors.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: factors.dim(),
        });
    }
    if let Some(p) = probes {
        if p.dim() != set.dim() {
            return Err(Error::DimensionMismatch {
                expected: set.dim(),
                got: p.dim(),
            });
        }
    }
    let mut x = set.data().clone();
    let mut recon = factors.reconstruct_rows(set.labels())?;
    let mut projection_rank = None;
    let mut whitening_rank = None;

    match opts.order {
        PipelineOrder::ProjectThenWhiten => {
            if let Some(p) = probes {
                let proj = SpanProjector::fit(&p.weights)?;
                x = proj.project(&x)?;
                recon = proj.project(&recon)?;
                projection_rank = Some(proj.rank());
            }
            if opts.whiten {
                let t = WhitenTransform::fit(&x, opts.whiten_tol)?;
                x = t.apply(&x)?;
                recon = t.apply(&recon)?;
                whitening_rank = Some(t.rank());
            }
        }
        PipelineOrder::WhitenThenProject => {
            let mut whitener = None;
            if opts.whiten {
                let t = WhitenTransform::fit(&x, opts.whiten_tol)?;
                x = t.apply(&x)?;
                recon = t.apply(&recon)?;
                whitening_rank = Some(t.rank());
                whitener = Some(t);
            }
            if let Some(p) = probes {
                let w = match &whitener {
                    Some(t) => {
                        let mut mapped = DMatrix::zeros(p.weights.nrows(), t.rank());
                        for (r, row) in p.weights.row_iter().enumerate() {
                            mapped.set_row(r, &t.map_functional(&row.transpose()).transpose());
                        }
                        mapped
                    }
                    None => p.weights.clone(),
                };
                let proj = SpanProjector::fit(&w)?;
                x = proj.project(&x)?;
                recon = proj.project(&recon)?;
                projection_rank = Some(proj.rank());
            }
        }
    }

    let mean = column_mean(&x);
    let denominator_ss = center_rows(&x, &mean).norm_squared();
    let numerator_ss = (&x - &recon).norm_squared();
    if denominator_ss <= 0.0 {
        return Err(Error::Degenerate("embeddings have zero total variance".into()));
    }
    Ok(R2Result {
        r2: 1.0 - numerator_ss / denominator_ss,
        numerator_ss,
        denominator_ss,
        pipeline: Pipeline {
            projection_rank,
            whitening_rank,
            order: opts.order,
        },
    })
}

/// Mean absolute cosines between centered, normalized factor directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthReport {
    pub within: Vec<f64>,
    /// Symmetric; the diagonal repeats `within`.
    pub across: Vec<Vec<f64>>,
    /// Directions dropped because their centered factor was zero.
    pub zero_directions: usize,
}

impl OrthReport {
    /// Mean of the off-diagonal entries.
    pub fn mean_across(&self) -> f64 {
        let k = self.within.len();
        if k < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    sum += self.across[i][j];
                }
            }
        }
        sum / (k * (k - 1)) as f64
    }

    pub fn mean_within(&self) -> f64 {
        self.within.iter().sum::<f64>() / self.within.len().max(1) as f64
    }
}

fn unit_directions(factors: &FactorSet, i: usize) -> (Vec<DVector<f64>>, usize) {
    let block = factors.concept(i);
    let centre = column_mean(block);
    let mut out = Vec::new();
    let mut zeros = 0;
    for row in block.row_iter() {
        let d = row.transpose() - &centre;
        let n = d.norm();
        if n > 0.0 && n > 1e-14 * centre.norm().max(block.amax()) {
            out.push(d / n);
        } else {
            zeros += 1;
        }
    }
    (out, zeros)
}

fn abs_cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b).abs().min(1.0)
}

pub fn orthogonality(factors: &FactorSet) -> Result<OrthReport> {
    let k = factors.space().k();
    let mut dirs = Vec::with_capacity(k);
    let mut zero_directions = 0;
    for i in 0..k {
        let (d, z) = unit_directions(factors, i);
        if d.is_empty() {
            return Err(Error::Degenerate(format!(
                "concept {i} has no nonzero centered factor direction"
            )));
        }
        zero_directions += z;
        dirs.push(d);
    }
    let mut across = vec![vec![0.0; k]; k];
    let mut within = vec![0.0; k];
    for i in 0..k {
        let di = &dirs[i];
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in 0..di.len() {
            for b in 0..di.len() {
                if a != b {
                    sum += abs_cos(&di[a], &di[b]);
                    count += 1;
                }
            }
        }
        // A single surviving direction has no partner; it is parallel to itself.
        within[i] = if count == 0 { 1.0 } else { sum / count as f64 };
        across[i][i] = within[i];
        for j in i + 1..k {
            let dj = &dirs[j];
            let mut s = 0.0;
            for a in di {
                for b in dj {
                    s += abs_cos(a, b);
                }
            }
            let v = s / (di.len() * dj.len()) as f64;
            across[i][j] = v;
            across[j][i] = v;
        }
    }
    Ok(OrthReport {
        within,
        across,
        zero_directions,
    })
}

/// Factors with every vector (and the mean) passed through a projector.
pub fn project_factors(factors: &FactorSet, proj: &SpanProjector) -> Result<FactorSet> {
    let p = proj.matrix();
    let blocks = (0..factors.space().k())
        .map(|i| factors.concept(i) * &p)
        .collect();
    FactorSet::new(factors.space().clone(), blocks, &p * factors.mean())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRank {
    pub rank: usize,
    /// Fraction of variance explained by each principal component, largest first.
    pub explained: Vec<f64>,
}

impl EffectiveRank {
    pub fn cumulative(&self) -> Vec<f64> {
        self.explained
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

pub const DEFAULT_RANK_THRESHOLD: f64 = 0.95;

/// Number of principal components of the row-centered factor matrix of
/// concept `i` needed to explain `threshold` of its variance.
pub fn effective_rank(factors: &FactorSet, i: usize, threshold: f64) -> Result<EffectiveRank> {
    if i >= factors.space().k() {
        return Err(Error::OutOfRange(format!("concept {i}")));
    }
    let block = factors.concept(i);
    let centered = center_rows(block, &column_mean(block));
    let sv = linalg::singular_values(&centered);
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Ok(EffectiveRank {
            rank: 0,
            explained: Vec::new(),
        });
    }
    let explained: Vec<f64> = sv.iter().map(|s| s * s / total).collect();
    let mut acc = 0.0;
    let mut rank = explained.len();
    for (r, v) in explained.iter().enumerate() {
        acc += v;
        if acc + 1e-12 >= threshold {
            rank = r + 1;
            break;
        }
    }
    Ok(EffectiveRank { rank, explained })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_concept: Vec<f64>,
    pub mean: f64,
    pub rows: usize,
}

/// Argmax accuracy of `probes` on the rows of `set` labelled with held-out tuples.
pub fn compositional_accuracy(
    probes: &ProbeBank,
    set: &EmbeddingSet,
    heldout: &TrainingSupport,
) -> Result<AccuracyReport> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out support is empty".into()));
    }
    let rows = set.select_rows(heldout.tuples())?;
    let sub = set.subset(&rows);
    let per_concept = probes.accuracy(sub.data(), sub.labels())?;
    let mean = per_concept.iter().sum::<f64>() / per_concept.len() as f64;
    Ok(AccuracyReport {
        per_concept,
        mean,
        rows: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_space::ConceptSpace;
    use crate::factor_model::recover_by_averaging;
    use crate::probe_trainer::Geometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn additive(space: &ConceptSpace, d: usize, seed: u64) -> FactorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = space
            .cardinalities()
            .iter()
            .map(|&n| gaussian(&mut rng, n, d))
            .collect();
        FactorSet::new(space.clone(), blocks, DVector::from_element(d, 0.3)).unwrap()
    }

    #[test]
    fn r2_is_one_on_additive_data() {
        let space = ConceptSpace::new(vec![3, 4]).unwrap();
        let truth = additive(&space, 6, 1);
        let set = truth.to_embedding_set().unwrap();
        let f = recover_by_averaging(&set).unwrap();
        for order in [PipelineOrder::ProjectThenWhiten, PipelineOrder::WhitenThenProject] {
            let opts = R2Options {
                order,
                ..R2Options::default()
            };
            let r = projected_whitened_r2(&set, &f, None, &opts).unwrap();
            assert!((r.r2 - 1.0).abs() < 1e-9);
            assert!(r.numerator_ss < 1e-12 * r.denominator_ss);
        }
    }

    #[test]
    fn r2_shift_invariance() {
        let space = ConceptSpace::new(vec![3, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = gaussian(&mut rng, 9, 4);
        let set = EmbeddingSet::new(space.clone(), data.clone(), space.enumerate_tuples()).unwrap();
        let f = recover_by_averaging(&set).unwrap();
        let r1 = projected_whitened_r2(&set, &f, None, &R2Options::default()).unwrap().r2;
        let mut shifted = data;
        for mut row in shifted.row_iter_mut() {
            row.add_scalar_mut(17.0);
        }
        let set2 = set.with_data(shifted).unwrap();
        let f2 = recover_by_averaging(&set2).unwrap();
        let r2 = projected_whitened_r2(&set2, &f2, None, &R2Options::default()).unwrap().r2;
        assert!((r1 - r2).abs() < 1e-9);
        assert!(r1 < 1.0);
    }

    #[test]
    fn projection_discards_off_span_noise() {
        // Additive signal in coords 0..2, arbitrary noise in coord 3.
        let space = ConceptSpace::new(vec![3, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = EmbeddingSet::from_grid(space.clone(), 4, |t| {
            vec![t[0] as f64, t[1] as f64 * 2.0, (t[0] + t[1]) as f64, rng.random_range(-1.0..1.0)]
        })
        .unwrap();
        let f = recover_by_averaging(&set).unwrap();
        let raw = projected_whitened_r2(&set, &f, None, &R2Options::default()).unwrap();
        assert!(raw.r2 < 0.99);
        let mut bank = ProbeBank::zeros(space, 4, Geometry::Euclidean);
        for r in 0..6 {
            bank.weights[(r, r % 3)] = 1.0 + r as f64;
        }
        let proj = projected_whitened_r2(&set, &f, Some(&bank), &R2Options::default()).unwrap();
        assert_eq!(proj.pipeline.projection_rank, Some(3));
        assert!((proj.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let space = ConceptSpace::binary(2).unwrap();
        let set = EmbeddingSet::from_grid(space, 2, |_| vec![1.0, 1.0]).unwrap();
        let f = recover_by_averaging(&set).unwrap();
        let opts = R2Options {
            whiten: false,
            ..R2Options::default()
        };
        assert!(projected_whitened_r2(&set, &f, None, &opts).is_err());
    }

    #[test]
    fn binary_within_is_one() {
        let space = ConceptSpace::binary(3).unwrap();
        let f = additive(&space, 5, 4);
        let o = orthogonality(&f).unwrap();
        for w in &o.within {
            assert!((w - 1.0).abs() < 1e-12);
        }
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(o.across[i][j], o.across[j][i]);
                assert!((0.0..=1.0).contains(&o.across[i][j]));
            }
        }
    }

    #[test]
    fn orthogonal_blocks_have_zero_across() {
        let space = ConceptSpace::new(vec![3, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = linalg::random_orthonormal(&mut rng, 8, 8);
        let a = gaussian(&mut rng, 3, 3) * q.columns(0, 3).transpose();
        let b = gaussian(&mut rng, 4, 4) * q.columns(3, 4).transpose();
        let f = FactorSet::new(space, vec![a, b], DVector::zeros(8)).unwrap();
        assert!(orthogonality(&f).unwrap().across[0][1] < 1e-8);
    }

    #[test]
    fn random_directions_have_expected_mean_cosine() {
        let d = 512;
        let space = ConceptSpace::uniform(2, 40).unwrap();
        let f = additive(&space, d, 6);
        let o = orthogonality(&f).unwrap();
        let expect = (2.0 / (std::f64::consts::PI * d as f64)).sqrt();
        assert!((o.across[0][1] - expect).abs() < 0.01, "{} vs {expect}", o.across[0][1]);
    }

    #[test]
    fn orthogonality_is_scale_invariant() {
        let space = ConceptSpace::new(vec![3, 3]).unwrap();
        let f = additive(&space, 4, 7);
        let canon = f.canonical();
        let scaled = FactorSet::new(
            space,
            vec![canon.concept(0) * 3.5, canon.concept(1) * 0.01],
            canon.mean().clone(),
        )
        .unwrap();
        let a = orthogonality(&canon).unwrap();
        let b = orthogonality(&scaled).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.across[i][j] - b.across[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_zero_concept_rejected() {
        let space = ConceptSpace::binary(2).unwrap();
        let mut f = additive(&space, 3, 8);
        f = FactorSet::new(space, vec![f.concept(0).clone(), DMatrix::zeros(2, 3)], f.mean().clone()).unwrap();
        assert!(orthogonality(&f).is_err());
    }

    #[test]
    fn effective_rank_cases() {
        let space = ConceptSpace::new(vec![6, 12]).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let line = DMatrix::from_fn(6, 3, |r, c| r as f64 * v[c]);
        let circle = DMatrix::from_fn(12, 3, |r, c| {
            let a = r as f64 * std::f64::consts::TAU / 12.0;
            [a.cos(), a.sin(), 0.0][c]
        });
        let f = FactorSet::new(space, vec![line, circle], DVector::zeros(3)).unwrap();
        assert_eq!(effective_rank(&f, 0, 0.95).unwrap().rank, 1);
        let e = effective_rank(&f, 1, 0.95).unwrap();
        assert_eq!(e.rank, 2);
        assert!((e.cumulative().last().unwrap() - 1.0).abs() < 1e-12);

        let zero = FactorSet::zeros(ConceptSpace::binary(1).unwrap(), 3);
        assert_eq!(effective_rank(&zero, 0, 0.95).unwrap().rank, 0);
    }

    #[test]
    fn effective_rank_of_random_factors() {
        // Monte-Carlo reference (2000 Gaussian draws, computed independently):
        // 5 in ~5%, 6 in ~78%, 7 in ~17% of draws.
        let space = ConceptSpace::uniform(1, 10).unwrap();
        let mut hist = [0usize; 11];
        for seed in 0..40 {
            let f = additive(&space, 10, 100 + seed);
            hist[effective_rank(&f, 0, 0.95).unwrap().rank] += 1;
        }
        assert_eq!(hist[5] + hist[6] + hist[7], 40, "{hist:?}");
        assert!(hist[6] >= 20, "{hist:?}");
    }

    #[test]
    fn accuracy_shift_invariant_in_biases() {
        let space = ConceptSpace::new(vec![3, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set = EmbeddingSet::new(space.clone(), gaussian(&mut rng, 6, 3), space.enumerate_tuples()).unwrap();
        let mut bank = ProbeBank::zeros(space.clone(), 3, Geometry::Euclidean);
        bank.weights = gaussian(&mut rng, 5, 3);
        let a = compositional_accuracy(&bank, &set, &space.full_grid()).unwrap();
        for j in 0..3 {
            bank.biases[j] += 4.2;
        }
        let b = compositional_accuracy(&bank, &set, &space.full_grid()).unwrap();
        assert_eq!(a, b);
        let empty = TrainingSupport::from_tuples(&space, vec![], crate::ValidityRule::FixedSize(0));
        assert!(compositional_accuracy(&bank, &set, &empty).is_err());
    }

    #[test]
    fn random_probes_are_at_chance() {
        let space = ConceptSpace::binary(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows = 4000;
        let labels: Vec<Vec<usize>> = (0..rows).map(|_| vec![rng.random_range(0..2)]).collect();
        let set = EmbeddingSet::new(space.clone(), gaussian(&mut rng, rows, 8), labels).unwrap();
        let mut bank = ProbeBank::zeros(space.clone(), 8, Geometry::Euclidean);
        bank.weights = gaussian(&mut rng, 2, 8);
        let acc = compositional_accuracy(&bank, &set, &space.full_grid()).unwrap();
        assert!((acc.mean - 0.5).abs() < 0.05);
    }
}
