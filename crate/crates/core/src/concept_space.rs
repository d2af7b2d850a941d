//! Concept grids, tuple arithmetic, cross-datasets and training supports.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One value per concept, 0-based.
pub type ConceptTuple = Vec<usize>;

/// The grid `C_1 x ... x C_k` of concept values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ConceptSpace {
    cardinalities: Vec<usize>,
    grid_size: usize,
}

impl ConceptSpace {
    pub fn new(cardinalities: Vec<usize>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::InvalidSpace("at least one concept is required".into()));
        }
        if let Some((i, &n)) = cardinalities.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::InvalidSpace(format!(
                "concept {i} has {n} values; every concept needs at least 2"
            )));
        }
        let grid_size = cardinalities
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or(Error::GridOverflow)?;
        Ok(Self {
            cardinalities,
            grid_size,
        })
    }

    /// `k` binary concepts.
    pub fn binary(k: usize) -> Result<Self> {
        Self::new(vec![2; k])
    }

    /// `k` concepts with `n` values each.
    pub fn uniform(k: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; k])
    }

    pub fn k(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.cardinalities[i]
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn is_binary(&self) -> bool {
        self.cardinalities.iter().all(|&n| n == 2)
    }

    /// Total number of concept values, `sum n_i`.
    pub fn total_values(&self) -> usize {
        self.cardinalities.iter().sum()
    }

    /// Maximal rank of the one-hot design matrix, `1 + sum (n_i - 1)`.
    pub fn cross_size(&self) -> usize {
        1 + self.cardinalities.iter().map(|n| n - 1).sum::<usize>()
    }

    pub fn check_tuple(&self, t: &[usize]) -> Result<()> {
        if t.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: t.len(),
            });
        }
        for (i, (&v, &n)) in t.iter().zip(&self.cardinalities).enumerate() {
            if v >= n {
                return Err(Error::OutOfRange(format!(
                    "concept {i} value {v} not below {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, t: &[usize]) -> bool {
        self.check_tuple(t).is_ok()
    }

    /// Mixed-radix index with the last concept varying fastest.
    pub fn tuple_index(&self, t: &[usize]) -> Result<usize> {
        self.check_tuple(t)?;
        Ok(self.index_unchecked(t))
    }

    pub(crate) fn index_unchecked(&self, t: &[usize]) -> usize {
        t.iter()
            .zip(&self.cardinalities)
            .fold(0, |acc, (&v, &n)| acc * n + v)
    }

    pub fn tuple_at(&self, mut index: usize) -> Result<ConceptTuple> {
        if index >= self.grid_size {
            return Err(Error::OutOfRange(format!(
                "tuple index {index} not below grid size {}",
                self.grid_size
            )));
        }
        let mut t = vec![0; self.k()];
        for (slot, &n) in t.iter_mut().zip(&self.cardinalities).rev() {
            *slot = index % n;
            index /= n;
        }
        Ok(t)
    }

    /// All tuples in canonical order.
    pub fn enumerate_tuples(&self) -> Vec<ConceptTuple> {
        let mut out = Vec::with_capacity(self.grid_size);
        let mut t = vec![0; self.k()];
        for _ in 0..self.grid_size {
            out.push(t.clone());
            for (slot, &n) in t.iter_mut().zip(&self.cardinalities).rev() {
                *slot += 1;
                if *slot < n {
                    break;
                }
                *slot = 0;
            }
        }
        out
    }

    /// `t` with concept `i` set to `j`.
    pub fn intervene(&self, t: &[usize], i: usize, j: usize) -> Result<ConceptTuple> {
        self.check_tuple(t)?;
        if i >= self.k() {
            return Err(Error::OutOfRange(format!("concept {i} not below k={}", self.k())));
        }
        if j >= self.cardinalities[i] {
            return Err(Error::OutOfRange(format!(
                "value {j} not below n_{i}={}",
                self.cardinalities[i]
            )));
        }
        let mut out = t.to_vec();
        out[i] = j;
        Ok(out)
    }

    /// The center together with every tuple differing from it in exactly one concept.
    pub fn cross_dataset(&self, center: &[usize]) -> Result<TrainingSupport> {
        self.check_tuple(center)?;
        let mut tuples = vec![center.to_vec()];
        for (i, &n) in self.cardinalities.iter().enumerate() {
            for j in (0..n).filter(|&j| j != center[i]) {
                let mut t = center.to_vec();
                t[i] = j;
                tuples.push(t);
            }
        }
        Ok(TrainingSupport::from_tuples(
            self,
            tuples,
            ValidityRule::CrossAt(center.to_vec()),
        ))
    }

    pub fn full_grid(&self) -> TrainingSupport {
        TrainingSupport {
            tuples: self.enumerate_tuples(),
            rule: ValidityRule::FullGrid,
        }
    }

    /// Draws a support satisfying `rule`. Deterministic in `seed`.
    pub fn sample_support(&self, rule: &ValidityRule, seed: u64) -> Result<TrainingSupport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng, size: usize| -> Vec<ConceptTuple> {
            let mut idx = index::sample(rng, self.grid_size, size).into_vec();
            idx.sort_unstable();
            idx.into_iter()
                .map(|x| self.tuple_at(x).expect("sampled index in range"))
                .collect()
        };
        match rule {
            ValidityRule::FullGrid => Ok(self.full_grid()),
            ValidityRule::FixedSize(n) => {
                if *n == 0 || *n > self.grid_size {
                    return Err(Error::InvalidArgument(format!(
                        "support size {n} must lie in 1..={}",
                        self.grid_size
                    )));
                }
                Ok(TrainingSupport {
                    tuples: draw(&mut rng, *n),
                    rule: rule.clone(),
                })
            }
            ValidityRule::Fraction(rho) => {
                if !(*rho > 0.0 && *rho <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "fraction {rho} must lie in (0, 1]"
                    )));
                }
                let size = fraction_count(self.grid_size, *rho);
                if size == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "fraction {rho} of {} tuples is empty",
                        self.grid_size
                    )));
                }
                Ok(TrainingSupport {
                    tuples: draw(&mut rng, size),
                    rule: rule.clone(),
                })
            }
            ValidityRule::CrossAt(center) => self.cross_dataset(center),
            ValidityRule::Complement => Err(Error::InvalidArgument(
                "a complement support cannot be sampled on its own".into(),
            )),
            ValidityRule::BinaryMajority => {
                if !self.is_binary() {
                    return Err(Error::InvalidArgument(
                        "the majority rule needs a binary concept space".into(),
                    ));
                }
                let size = (self.grid_size / 2 + 1).min(self.grid_size);
                Ok(TrainingSupport {
                    tuples: draw(&mut rng, size),
                    rule: rule.clone(),
                })
            }
        }
    }
}

impl TryFrom<Vec<usize>> for ConceptSpace {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConceptSpace> for Vec<usize> {
    fn from(s: ConceptSpace) -> Self {
        s.cardinalities
    }
}

/// `floor(rho * size)`, robust to the rounding error in products like `0.1 * 180000`.
fn fraction_count(size: usize, rho: f64) -> usize {
    let exact = rho * size as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
        rounded as usize
    } else {
        exact.floor() as usize
    }
}

/// The rule a training support was drawn under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityRule {
    FullGrid,
    FixedSize(usize),
    Fraction(f64),
    CrossAt(ConceptTuple),
    /// `|T| = 2^(k-1) + 1` tuples of a binary grid.
    BinaryMajority,
    /// Whatever remains after removing another support; used for held-out sets.
    Complement,
}

/// An ordered, duplicate-free set of tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSupport {
    tuples: Vec<ConceptTuple>,
    rule: ValidityRule,
}

impl TrainingSupport {
    /// Sorts by canonical index and drops duplicates. Tuples must be valid in `space`.
    pub fn from_tuples(space: &ConceptSpace, tuples: Vec<ConceptTuple>, rule: ValidityRule) -> Self {
        let mut keyed: Vec<(usize, ConceptTuple)> = tuples
            .into_iter()
            .map(|t| (space.index_unchecked(&t), t))
            .collect();
        keyed.sort_by_key(|(i, _)| *i);
        keyed.dedup_by_key(|(i, _)| *i);
        Self {
            tuples: keyed.into_iter().map(|(_, t)| t).collect(),
            rule,
        }
    }

    pub fn tuples(&self) -> &[ConceptTuple] {
        &self.tuples
    }

    pub fn rule(&self) -> &ValidityRule {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn contains(&self, t: &[usize]) -> bool {
        self.tuples.iter().any(|x| x.as_slice() == t)
    }

    /// Grid tuples not in this support.
    pub fn complement(&self, space: &ConceptSpace) -> TrainingSupport {
        let mut present = vec![false; space.grid_size()];
        for t in &self.tuples {
            present[space.index_unchecked(t)] = true;
        }
        let tuples = present
            .iter()
            .enumerate()
            .filter(|(_, &p)| !p)
            .map(|(i, _)| space.tuple_at(i).expect("index in range"))
            .collect();
        TrainingSupport {
            tuples,
            rule: ValidityRule::Complement,
        }
    }

    /// Number of tuples taking each value of concept `i`.
    pub fn marginal_counts(&self, space: &ConceptSpace, i: usize) -> Result<Vec<usize>> {
        if i >= space.k() {
            return Err(Error::OutOfRange(format!("concept {i} not below k={}", space.k())));
        }
        let mut counts = vec![0; space.cardinality(i)];
        for t in &self.tuples {
            counts[t[i]] += 1;
        }
        Ok(counts)
    }
}
