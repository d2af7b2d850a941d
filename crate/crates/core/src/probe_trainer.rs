//! Affine per-concept readouts: scoring, CE/BCE losses with analytic
//! gradients, full-batch Adam training and posteriors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::concept_space::{ConceptSpace, ConceptTuple, TrainingSupport};
use crate::embedding_store::{
    join_list, malformed, read_f32le, write_f32le, EmbeddingSet, Manifest, MANIFEST_FILE,
};
use crate::error::{Error, Result};

pub const PROBE_WEIGHTS_FILE: &str = "probe_weights.f32";
pub const PROBE_BIASES_FILE: &str = "probe_biases.f32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Euclidean,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Per-concept softmax cross-entropy.
    Ce,
    /// One-vs-rest binary cross-entropy, averaged over the values of a concept.
    Bce,
}

impl std::str::FromStr for Geometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Geometry::Euclidean),
            "spherical" => Ok(Geometry::Spherical),
            _ => Err(Error::InvalidArgument(format!("unknown geometry {s:?}"))),
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(Loss::Ce),
            "bce" => Ok(Loss::Bce),
            _ => Err(Error::InvalidArgument(format!("unknown loss {s:?}"))),
        }
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Geometry::Euclidean => "euclidean",
            Geometry::Spherical => "spherical",
        })
    }
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Loss::Ce => "ce",
            Loss::Bce => "bce",
        })
    }
}

/// Affine readouts `h_{i,j}(z)`, one per concept value.
///
/// Weights are stacked into a single `(sum n_i) x d` matrix; concept `i`
/// occupies rows `offset(i) .. offset(i) + n_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBank {
    space: ConceptSpace,
    offsets: Vec<usize>,
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub geometry: Geometry,
    /// Only used by the spherical geometry; `tau = exp(log_temperature)`.
    pub log_temperature: f64,
}

fn block_offsets(space: &ConceptSpace) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(space.k());
    let mut acc = 0;
    for &n in space.cardinalities() {
        offsets.push(acc);
        acc += n;
    }
    offsets
}

impl ProbeBank {
    pub fn new(
        space: ConceptSpace,
        weights: DMatrix<f64>,
        biases: DVector<f64>,
        geometry: Geometry,
    ) -> Result<Self> {
        let total = space.total_values();
        if weights.nrows() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: weights.nrows(),
            });
        }
        if biases.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: biases.len(),
            });
        }
        let mut bank = Self {
            offsets: block_offsets(&space),
            space,
            weights,
            biases,
            geometry,
            log_temperature: 0.0,
        };
        if geometry == Geometry::Spherical {
            bank.normalize_weights();
        }
        Ok(bank)
    }

    /// Builds a bank from per-concept weight matrices and bias vectors.
    pub fn from_blocks(
        space: ConceptSpace,
        weights: &[DMatrix<f64>],
        biases: &[DVector<f64>],
        geometry: Geometry,
    ) -> Result<Self> {
        if weights.len() != space.k() || biases.len() != space.k() {
            return Err(Error::DimensionMismatch {
                expected: space.k(),
                got: weights.len().min(biases.len()),
            });
        }
        let d = weights.first().map(|w| w.ncols()).unwrap_or(0);
        let total = space.total_values();
        let mut w = DMatrix::zeros(total, d);
        let mut b = DVector::zeros(total);
        let offsets = block_offsets(&space);
        for i in 0..space.k() {
            let n = space.cardinality(i);
            if weights[i].shape() != (n, d) || biases[i].len() != n {
                return Err(Error::InvalidArgument(format!(
                    "concept {i} block has the wrong shape"
                )));
            }
            w.rows_mut(offsets[i], n).copy_from(&weights[i]);
            b.rows_mut(offsets[i], n).copy_from(&biases[i]);
        }
        Self::new(space, w, b, geometry)
    }

    pub fn zeros(space: ConceptSpace, d: usize, geometry: Geometry) -> Self {
        let total = space.total_values();
        Self {
            offsets: block_offsets(&space),
            space,
            weights: DMatrix::zeros(total, d),
            biases: DVector::zeros(total),
            geometry,
            log_temperature: 0.0,
        }
    }

    /// Random initialization: small Gaussian weights (unit rows when spherical), zero biases.
    pub fn random(space: ConceptSpace, d: usize, geometry: Geometry, rng: &mut ChaCha8Rng) -> Self {
        let mut bank = Self::zeros(space, d, geometry);
        let scale = match geometry {
            Geometry::Euclidean => 0.01,
            Geometry::Spherical => 1.0,
        };
        for v in bank.weights.iter_mut() {
            let x: f64 = StandardNormal.sample(rng);
            *v = scale * x;
        }
        if geometry == Geometry::Spherical {
            bank.normalize_weights();
        }
        bank
    }

    pub fn space(&self) -> &ConceptSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn weight(&self, i: usize, j: usize) -> DVector<f64> {
        self.weights.row(self.offsets[i] + j).transpose()
    }

    pub fn bias(&self, i: usize, j: usize) -> f64 {
        self.biases[self.offsets[i] + j]
    }

    pub fn concept_weights(&self, i: usize) -> DMatrix<f64> {
        self.weights
            .rows(self.offsets[i], self.space.cardinality(i))
            .into_owned()
    }

    /// Rescales each weight row to unit norm; zero rows are left alone.
    pub fn normalize_weights(&mut self) {
        for mut row in self.weights.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        Ok(())
    }

    /// Logits for each row of `z` (rows x sum n_i).
    pub fn logits(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(z.ncols())?;
        Ok(self.forward(z).logits)
    }

    /// Logits for one embedding, one vector per concept.
    pub fn score(&self, z: &[f64]) -> Result<Vec<Vec<f64>>> {
        let h = self.logits(&DMatrix::from_row_slice(1, z.len(), z))?;
        Ok((0..self.space.k())
            .map(|i| {
                (0..self.space.cardinality(i))
                    .map(|j| h[(0, self.offsets[i] + j)])
                    .collect()
            })
            .collect())
    }

    /// Softmax over the values of concept `i`.
    pub fn posterior(&self, z: &[f64], i: usize) -> Result<Vec<f64>> {
        if i >= self.space.k() {
            return Err(Error::OutOfRange(format!("concept {i}")));
        }
        Ok(softmax(&self.score(z)?[i]))
    }

    /// Argmax prediction per row and concept; ties go to the lowest index.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<Vec<ConceptTuple>> {
        let h = self.logits(z)?;
        Ok((0..z.nrows())
            .map(|r| {
                (0..self.space.k())
                    .map(|i| {
                        let o = self.offsets[i];
                        argmax((0..self.space.cardinality(i)).map(|j| h[(r, o + j)]))
                    })
                    .collect()
            })
            .collect())
    }

    /// Per-concept accuracy of argmax predictions against labels.
    pub fn accuracy(&self, z: &DMatrix<f64>, labels: &[ConceptTuple]) -> Result<Vec<f64>> {
        let preds = self.predict(z)?;
        let k = self.space.k();
        let mut hits = vec![0usize; k];
        for (p, t) in preds.iter().zip(labels) {
            for i in 0..k {
                if p[i] == t[i] {
                    hits[i] += 1;
                }
            }
        }
        let n = labels.len().max(1) as f64;
        Ok(hits.into_iter().map(|h| h as f64 / n).collect())
    }

    fn forward(&self, z: &DMatrix<f64>) -> Forward {
        match self.geometry {
            Geometry::Euclidean => {
                let mut logits = z * self.weights.transpose();
                for mut row in logits.row_iter_mut() {
                    row += self.biases.transpose();
                }
                Forward {
                    logits,
                    z_hat: None,
                    z_norms: Vec::new(),
                    w_hat: None,
                    w_norms: Vec::new(),
                    cosines: None,
                }
            }
            Geometry::Spherical => {
                let (z_hat, z_norms) = normalize_rows(z);
                let (w_hat, w_norms) = normalize_rows(&self.weights);
                let cosines = &z_hat * w_hat.transpose();
                let tau = self.temperature();
                let mut logits = &cosines * tau;
                for mut row in logits.row_iter_mut() {
                    row += self.biases.transpose();
                }
                Forward {
                    logits,
                    z_hat: Some(z_hat),
                    z_norms,
                    w_hat: Some(w_hat),
                    w_norms,
                    cosines: Some(cosines),
                }
            }
        }
    }

    /// Mean loss over rows of `z` with the given labels, plus gradients with
    /// respect to the bank parameters and (optionally) the embeddings.
    pub fn loss_and_grad(
        &self,
        z: &DMatrix<f64>,
        labels: &[ConceptTuple],
        loss: Loss,
        want_z_grad: bool,
    ) -> Result<(f64, BankGrad, Option<DMatrix<f64>>)> {
        self.check_dim(z.ncols())?;
        if z.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: z.nrows(),
                got: labels.len(),
            });
        }
        let fwd = self.forward(z);
        let (value, g) = self.logit_loss_grad(&fwd.logits, labels, loss);

        let (dw, dlt, dz) = match self.geometry {
            Geometry::Euclidean => {
                let dw = g.transpose() * z;
                let dz = want_z_grad.then(|| &g * &self.weights);
                (dw, 0.0, dz)
            }
            Geometry::Spherical => {
                let tau = self.temperature();
                let z_hat = fwd.z_hat.as_ref().expect("spherical forward");
                let w_hat = fwd.w_hat.as_ref().expect("spherical forward");
                let cos = fwd.cosines.as_ref().expect("spherical forward");
                // dL/dw_hat, then through w_hat = w / |w|.
                let dw_hat = (g.transpose() * z_hat) * tau;
                let dw = sphere_backprop(&dw_hat, w_hat, &fwd.w_norms);
                let dlt = tau * g.component_mul(cos).sum();
                let dz = want_z_grad.then(|| {
                    let dz_hat = (&g * w_hat) * tau;
                    sphere_backprop(&dz_hat, z_hat, &fwd.z_norms)
                });
                (dw, dlt, dz)
            }
        };
        let db = g.row_sum().transpose();
        Ok((
            value,
            BankGrad {
                weights: dw,
                biases: db,
                log_temperature: dlt,
            },
            dz,
        ))
    }

    pub fn loss_value(&self, z: &DMatrix<f64>, labels: &[ConceptTuple], loss: Loss) -> Result<f64> {
        self.check_dim(z.ncols())?;
        let fwd = self.forward(z);
        Ok(self.logit_loss_grad(&fwd.logits, labels, loss).0)
    }

    /// Mean loss and `dL/dh` (already divided by the row count).
    fn logit_loss_grad(&self, h: &DMatrix<f64>, labels: &[ConceptTuple], loss: Loss) -> (f64, DMatrix<f64>) {
        let rows = h.nrows();
        let inv_rows = 1.0 / rows.max(1) as f64;
        let mut g = DMatrix::zeros(rows, h.ncols());
        let mut total = 0.0;
        for (r, t) in labels.iter().enumerate() {
            for (i, &c) in t.iter().enumerate() {
                let o = self.offsets[i];
                let n = self.space.cardinality(i);
                match loss {
                    Loss::Ce => {
                        let row: Vec<f64> = (0..n).map(|j| h[(r, o + j)]).collect();
                        let lse = log_sum_exp(&row);
                        total += lse - row[c];
                        for j in 0..n {
                            let p = (row[j] - lse).exp();
                            g[(r, o + j)] = (p - if j == c { 1.0 } else { 0.0 }) * inv_rows;
                        }
                    }
                    Loss::Bce => {
                        let inv_n = 1.0 / n as f64;
                        for j in 0..n {
                            let x = h[(r, o + j)];
                            if j == c {
                                total += inv_n * softplus(-x);
                                g[(r, o + j)] = inv_n * (sigmoid(x) - 1.0) * inv_rows;
                            } else {
                                total += inv_n * softplus(x);
                                g[(r, o + j)] = inv_n * sigmoid(x) * inv_rows;
                            }
                        }
                    }
                }
            }
        }
        (total * inv_rows, g)
    }

    /// Flattened trainable parameters: weights (row-major), biases, and the
    /// log-temperature for the spherical geometry.
    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.weights.transpose().iter().copied().collect();
        p.extend(self.biases.iter());
        if self.geometry == Geometry::Spherical {
            p.push(self.log_temperature);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (r, c) = self.weights.shape();
        for a in 0..r {
            for b in 0..c {
                self.weights[(a, b)] = p[a * c + b];
            }
        }
        let nb = self.biases.len();
        self.biases.copy_from_slice(&p[r * c..r * c + nb]);
        if self.geometry == Geometry::Spherical {
            self.log_temperature = p[r * c + nb];
        }
    }
}

/// Gradient of a loss with respect to a [`ProbeBank`]'s parameters.
#[derive(Debug, Clone)]
pub struct BankGrad {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub log_temperature: f64,
}

impl BankGrad {
    pub fn flatten(&self, geometry: Geometry) -> Vec<f64> {
        let mut p: Vec<f64> = self.weights.transpose().iter().copied().collect();
        p.extend(self.biases.iter());
        if geometry == Geometry::Spherical {
            p.push(self.log_temperature);
        }
        p
    }
}

struct Forward {
    logits: DMatrix<f64>,
    z_hat: Option<DMatrix<f64>>,
    z_norms: Vec<f64>,
    w_hat: Option<DMatrix<f64>>,
    w_norms: Vec<f64>,
    cosines: Option<DMatrix<f64>>,
}

fn normalize_rows(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Pulls a gradient on `x/|x|` back to `x`: `(I - x_hat x_hat^T) g / |x|` per row.
fn sphere_backprop(g_hat: &DMatrix<f64>, x_hat: &DMatrix<f64>, norms: &[f64]) -> DMatrix<f64> {
    let mut out = g_hat.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let n = norms[r];
        if n == 0.0 {
            row.fill(0.0);
            continue;
        }
        let xr = x_hat.row(r);
        let proj = row.dot(&xr);
        row -= xr * proj;
        row /= n;
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Optimization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub geometry: Geometry,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop early once no normalized weight row moves by more than this
    /// (Euclidean distance) over a 100-epoch window.
    pub convergence: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Ce,
            geometry: Geometry::Euclidean,
            epochs: 5000,
            lr: 0.1,
            seed: 0,
            convergence: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    /// Learning rate at step `t` of a cosine schedule that reaches zero at `epochs`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let frac = t as f64 / self.epochs as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// A trained bank and its per-epoch loss.
#[derive(Debug, Clone)]
pub struct TrainedProbes {
    pub bank: ProbeBank,
    pub history: Vec<f64>,
}

/// Fits probes on the rows of `set` whose labels lie in `support`.
pub fn train_probes(set: &EmbeddingSet, support: &TrainingSupport, config: &TrainConfig) -> Result<TrainedProbes> {
    config.validate()?;
    if support.is_empty() {
        return Err(Error::InvalidArgument("training support is empty".into()));
    }
    let rows = set.select_rows(support.tuples())?;
    let sub = set.subset(&rows);
    train_on_matrix(set.space(), sub.data(), sub.labels(), config)
}

/// Fits probes on an explicit data matrix and labels.
pub fn train_on_matrix(
    space: &ConceptSpace,
    z: &DMatrix<f64>,
    labels: &[ConceptTuple],
    config: &TrainConfig,
) -> Result<TrainedProbes> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bank = ProbeBank::random(space.clone(), z.ncols(), config.geometry, &mut rng);
    let mut params = bank.params();
    let mut adam = Adam::new(params.len());
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_dirs: Option<DMatrix<f64>> = None;
    for epoch in 0..config.epochs {
        let (loss, grad, _) = bank.loss_and_grad(z, labels, config.loss, false)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
        adam.step(&mut params, &grad.flatten(config.geometry), config.lr_at(epoch));
        bank.set_params(&params);
        if config.geometry == Geometry::Spherical {
            bank.normalize_weights();
            params = bank.params();
        }
        if let Some(tol) = config.convergence {
            if epoch % 100 == 99 {
                let dirs = normalize_rows(&bank.weights).0;
                if let Some(prev) = &last_dirs {
                    let moved = (0..dirs.nrows())
                        .map(|r| (dirs.row(r) - prev.row(r)).norm())
                        .fold(0.0, f64::max);
                    if moved < tol {
                        break;
                    }
                }
                last_dirs = Some(dirs);
            }
        }
    }
    Ok(TrainedProbes { bank, history })
}

/// Largest relative error between analytic and central-difference
/// gradients of the mean loss over `support`, taken over every bank parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(bank: &ProbeBank, set: &EmbeddingSet, support: &TrainingSupport, loss: Loss) -> Result<f64> {
    let rows = set.select_rows(support.tuples())?;
    let sub = set.subset(&rows);
    let z = sub.data();
    let labels = sub.labels();
    let (_, grad, _) = bank.loss_and_grad(z, labels, loss, false)?;
    let analytic = grad.flatten(bank.geometry);
    let base = bank.params();
    let mut probe = bank.clone();
    let mut worst: f64 = 0.0;
    for (idx, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[idx] = base[idx] + FD_STEP;
        probe.set_params(&p);
        let up = probe.loss_value(z, labels, loss)?;
        p[idx] = base[idx] - FD_STEP;
        probe.set_params(&p);
        let down = probe.loss_value(z, labels, loss)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

pub const FD_STEP: f64 = 1e-5;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

// ---------------------------------------------------------------------------
// Dump section

/// Stores a bank in an existing dump directory under a `probes.` manifest section.
pub fn write_probes(bank: &ProbeBank, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut m = Manifest::read(dir)?;
    m.remove_prefix("probes.");
    m.set("probes.blocks", join_list(bank.space.cardinalities()));
    m.set("probes.d", bank.dim().to_string());
    m.set("probes.geometry", bank.geometry.to_string());
    m.set("probes.log_temperature", format!("{:?}", bank.log_temperature));
    m.set("probes.dtype", "f32le");
    let w = &bank.weights;
    write_f32le(
        &dir.join(PROBE_WEIGHTS_FILE),
        (0..w.nrows()).flat_map(|r| (0..w.ncols()).map(move |c| w[(r, c)])),
    )?;
    write_f32le(&dir.join(PROBE_BIASES_FILE), bank.biases.iter().copied())?;
    m.write(dir)
}

pub fn read_probes(dir: impl AsRef<Path>) -> Result<ProbeBank> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let m = Manifest::read(dir)?;
    let blocks = m.require_list("probes.blocks", &mpath)?;
    let d = m.require_usize("probes.d", &mpath)?;
    let geometry: Geometry = m
        .require("probes.geometry", &mpath)?
        .parse()
        .map_err(|e: Error| malformed(&mpath, &e.to_string()))?;
    let lt: f64 = m
        .require("probes.log_temperature", &mpath)?
        .parse()
        .map_err(|_| malformed(&mpath, "probes.log_temperature is not a number"))?;
    let space = ConceptSpace::new(blocks).map_err(|e| malformed(&mpath, &e.to_string()))?;
    let total = space.total_values();
    let w = read_f32le(&dir.join(PROBE_WEIGHTS_FILE), total * d)?;
    let b = read_f32le(&dir.join(PROBE_BIASES_FILE), total)?;
    let mut bank = ProbeBank::zeros(space, d, geometry);
    bank.weights = DMatrix::from_row_slice(total, d, &w);
    bank.biases = DVector::from_vec(b);
    bank.log_temperature = lt;
    Ok(bank)
}
