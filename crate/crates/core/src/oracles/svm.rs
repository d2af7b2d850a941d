//! Hard-margin SVM as the closest pair of points between two convex hulls.
//!
//! The iteration moves convex weight between pairs of points on one side at a
//! time (exact line search), which keeps the coefficients `lambda`, `gamma`
//! explicit. Once the duality gap is small the active sets are known and the
//! closest pair is recomputed exactly from the equality-constrained least
//! squares system on those sets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concept_space::{ConceptSpace, TrainingSupport};
use crate::embedding_store::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::probe_trainer::{Geometry, ProbeBank};

pub const SVM_GAP_TOL: f64 = 1e-10;
pub const SVM_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub margin: f64,
    /// Convex weights on the positive points.
    pub lambda: Vec<f64>,
    /// Convex weights on the negative points.
    pub gamma: Vec<f64>,
    /// Relative duality gap at termination, `gap / |v|^2`.
    pub gap: f64,
    pub iterations: usize,
    pub polished: bool,
}

impl SvmSolution {
    pub fn decision(&self, z: &[f64]) -> f64 {
        linalg::dot(&self.w, z) + self.b
    }

    /// Worst violation of `y (w.z + b) >= 1` over all points, and worst
    /// deviation from `|w.z + b| = 1` over points with nonzero coefficients.
    pub fn kkt_residuals(&self, pos: &DMatrix<f64>, neg: &DMatrix<f64>) -> (f64, f64) {
        let mut feas: f64 = 0.0;
        let mut tight: f64 = 0.0;
        for (r, row) in pos.row_iter().enumerate() {
            let z: Vec<f64> = row.iter().copied().collect();
            let f = self.decision(&z);
            feas = feas.max(1.0 - f);
            if self.lambda[r] > 0.0 {
                tight = tight.max((f - 1.0).abs());
            }
        }
        for (r, row) in neg.row_iter().enumerate() {
            let z: Vec<f64> = row.iter().copied().collect();
            let f = self.decision(&z);
            feas = feas.max(1.0 + f);
            if self.gamma[r] > 0.0 {
                tight = tight.max((f + 1.0).abs());
            }
        }
        (feas, tight)
    }
}

/// Solves the hard-margin SVM separating the rows of `pos` (label +1) from
/// the rows of `neg` (label -1).
pub fn hard_margin_svm(pos: &DMatrix<f64>, neg: &DMatrix<f64>) -> Result<SvmSolution> {
    let (np, nq) = (pos.nrows(), neg.nrows());
    if np == 0 || nq == 0 {
        return Err(Error::InvalidArgument("both classes need at least one point".into()));
    }
    if pos.ncols() != neg.ncols() {
        return Err(Error::DimensionMismatch {
            expected: pos.ncols(),
            got: neg.ncols(),
        });
    }
    let mut state = HullPair::new(pos, neg);
    let scale = state.scale();
    let iterations = state.iterate(scale);
    let v = state.v();
    let vv = v.norm_squared();
    if vv.sqrt() <= 1e-9 * scale {
        return Err(Error::NotSeparable { distance: vv.sqrt() });
    }

    let mut polished = false;
    if let Some((lambda, gamma)) = state.polish() {
        state.lambda = lambda;
        state.gamma = gamma;
        polished = true;
    }
    let v = state.v();
    let vv = v.norm_squared();
    let (gap, min_p, max_q) = state.gap_exact(&v);
    if min_p - max_q <= 0.0 || vv.sqrt() <= 1e-9 * scale {
        return Err(Error::NotSeparable { distance: vv.sqrt() });
    }

    let w = &v * (2.0 / vv);
    let p_point = pos.transpose() * DVector::from_column_slice(&state.lambda);
    let b = 1.0 - w.dot(&p_point);
    Ok(SvmSolution {
        margin: 1.0 / w.norm(),
        w: w.iter().copied().collect(),
        b,
        lambda: state.lambda,
        gamma: state.gamma,
        gap: gap / vv,
        iterations,
        polished,
    })
}

struct HullPair<'a> {
    pos: &'a DMatrix<f64>,
    neg: &'a DMatrix<f64>,
    /// Gram matrix of all points, positives first.
    gram: DMatrix<f64>,
    lambda: Vec<f64>,
    gamma: Vec<f64>,
    /// `v . x_a` for positives and `v . y_b` for negatives, where `v = p - q`.
    sp: Vec<f64>,
    sq: Vec<f64>,
    vv: f64,
}

impl<'a> HullPair<'a> {
    fn new(pos: &'a DMatrix<f64>, neg: &'a DMatrix<f64>) -> Self {
        let (np, nq) = (pos.nrows(), neg.nrows());
        let mut all = DMatrix::zeros(np + nq, pos.ncols());
        all.rows_mut(0, np).copy_from(pos);
        all.rows_mut(np, nq).copy_from(neg);
        let gram = &all * all.transpose();
        let mut s = Self {
            pos,
            neg,
            gram,
            lambda: vec![1.0 / np as f64; np],
            gamma: vec![1.0 / nq as f64; nq],
            sp: vec![0.0; np],
            sq: vec![0.0; nq],
            vv: 0.0,
        };
        s.refresh();
        s
    }

    fn scale(&self) -> f64 {
        let m = (0..self.gram.nrows())
            .map(|i| self.gram[(i, i)])
            .fold(0.0, f64::max)
            .sqrt();
        m.max(1e-300)
    }

    /// Recomputes the cached inner products from the coefficients.
    fn refresh(&mut self) {
        let np = self.pos.nrows();
        let n = self.gram.nrows();
        let mut coef = vec![0.0; n];
        coef[..np].copy_from_slice(&self.lambda);
        for (b, g) in self.gamma.iter().enumerate() {
            coef[np + b] = -g;
        }
        let mut s = vec![0.0; n];
        for (a, sa) in s.iter_mut().enumerate() {
            *sa = (0..n).map(|c| self.gram[(a, c)] * coef[c]).sum();
        }
        self.vv = coef.iter().zip(&s).map(|(c, x)| c * x).sum();
        self.sp.copy_from_slice(&s[..np]);
        self.sq.copy_from_slice(&s[np..]);
    }

    fn v(&self) -> DVector<f64> {
        self.pos.transpose() * DVector::from_column_slice(&self.lambda)
            - self.neg.transpose() * DVector::from_column_slice(&self.gamma)
    }

    /// Duality gap and the extreme projections, computed from `v` directly.
    fn gap_exact(&self, v: &DVector<f64>) -> (f64, f64, f64) {
        let sp: Vec<f64> = self.pos.row_iter().map(|r| r.transpose().dot(v)).collect();
        let sq: Vec<f64> = self.neg.row_iter().map(|r| r.transpose().dot(v)).collect();
        let min_p = sp.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_q = sq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vp: f64 = self.lambda.iter().zip(&sp).map(|(l, s)| l * s).sum();
        let vq: f64 = self.gamma.iter().zip(&sq).map(|(g, s)| g * s).sum();
        ((vp - min_p) + (max_q - vq), min_p, max_q)
    }

    fn iterate(&mut self, scale: f64) -> usize {
        let np = self.pos.nrows();
        let tiny = (1e-9 * scale).powi(2);
        for it in 0..SVM_MAX_ITER {
            if it % 1000 == 999 {
                self.refresh();
            }
            if self.vv <= tiny {
                return it;
            }
            // Positive side: move weight from the worst active point to the best point.
            let (p_min, _) = argmin(&self.sp, |_| true);
            let (p_max, _) = argmax(&self.sp, |a| self.lambda[a] > 0.0);
            // Negative side: move weight from the worst active point to the best point.
            let (q_max, _) = argmax(&self.sq, |_| true);
            let (q_min, _) = argmin(&self.sq, |b| self.gamma[b] > 0.0);
            let viol_p = self.sp[p_max] - self.sp[p_min];
            let viol_q = self.sq[q_max] - self.sq[q_min];
            if viol_p.max(0.0) + viol_q.max(0.0) <= SVM_GAP_TOL * self.vv {
                // Cheap proxy; confirm with the exact gap.
                let (gap, _, _) = self.gap_exact(&self.v());
                if gap <= SVM_GAP_TOL * self.vv {
                    return it;
                }
                self.refresh();
                continue;
            }
            if viol_p >= viol_q {
                // v += t (x_min - x_max)
                let (i, j) = (p_min, p_max);
                let dd = self.gram[(i, i)] + self.gram[(j, j)] - 2.0 * self.gram[(i, j)];
                if dd <= 0.0 {
                    self.lambda[i] += self.lambda[j];
                    self.lambda[j] = 0.0;
                    continue;
                }
                let t = (viol_p / dd).min(self.lambda[j]);
                self.lambda[i] += t;
                self.lambda[j] -= t;
                self.shift(i, j, t);
            } else {
                // v -= t (y_max - y_min)
                let (i, j) = (np + q_max, np + q_min);
                let dd = self.gram[(i, i)] + self.gram[(j, j)] - 2.0 * self.gram[(i, j)];
                if dd <= 0.0 {
                    self.gamma[q_max] += self.gamma[q_min];
                    self.gamma[q_min] = 0.0;
                    continue;
                }
                let t = (viol_q / dd).min(self.gamma[q_min]);
                self.gamma[q_max] += t;
                self.gamma[q_min] -= t;
                self.shift(j, i, t);
            }
        }
        SVM_MAX_ITER
    }

    /// Applies `v += t (x_i - x_j)` (indices into the stacked point list) to the caches.
    fn shift(&mut self, i: usize, j: usize, t: f64) {
        let np = self.pos.nrows();
        let dv_v: f64 = {
            let si = if i < np { self.sp[i] } else { self.sq[i - np] };
            let sj = if j < np { self.sp[j] } else { self.sq[j - np] };
            si - sj
        };
        let dd = self.gram[(i, i)] + self.gram[(j, j)] - 2.0 * self.gram[(i, j)];
        self.vv += 2.0 * t * dv_v + t * t * dd;
        for a in 0..np {
            self.sp[a] += t * (self.gram[(a, i)] - self.gram[(a, j)]);
        }
        for b in 0..self.neg.nrows() {
            self.sq[b] += t * (self.gram[(np + b, i)] - self.gram[(np + b, j)]);
        }
        for c in &mut self.lambda {
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        for c in &mut self.gamma {
            if *c < 0.0 {
                *c = 0.0;
            }
        }
    }

    /// Exact closest pair restricted to the current active sets.
    fn polish(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let v = self.v();
        let vv = v.norm_squared();
        let (gap0, _, _) = self.gap_exact(&v);
        let sp: Vec<f64> = self.pos.row_iter().map(|r| r.transpose().dot(&v)).collect();
        let sq: Vec<f64> = self.neg.row_iter().map(|r| r.transpose().dot(&v)).collect();
        let min_p = sp.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_q = sq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for rel in [1e-3, 1e-5, 1e-7, 0.0] {
            let act_p: Vec<usize> = if rel > 0.0 {
                (0..sp.len()).filter(|&a| sp[a] - min_p <= rel * vv).collect()
            } else {
                (0..sp.len()).filter(|&a| self.lambda[a] > 0.0).collect()
            };
            let act_q: Vec<usize> = if rel > 0.0 {
                (0..sq.len()).filter(|&b| max_q - sq[b] <= rel * vv).collect()
            } else {
                (0..sq.len()).filter(|&b| self.gamma[b] > 0.0).collect()
            };
            let Some((lambda, gamma)) = self.solve_active(&act_p, &act_q) else {
                continue;
            };
            let cand = HullPair {
                pos: self.pos,
                neg: self.neg,
                gram: DMatrix::zeros(0, 0),
                lambda,
                gamma,
                sp: Vec::new(),
                sq: Vec::new(),
                vv: 0.0,
            };
            let cv = cand.v();
            let cvv = cv.norm_squared();
            let (gap, _, _) = cand.gap_exact(&cv);
            if cvv > vv * (1.0 + 1e-9) || gap > gap0.max(1e-13 * cvv) {
                continue;
            }
            if best.as_ref().is_none_or(|(_, _, g)| gap < *g) {
                best = Some((cand.lambda, cand.gamma, gap));
            }
        }
        best.map(|(l, g, _)| (l, g))
    }

    /// Minimizes `|X_A l - Y_B g|^2` subject to `sum l = sum g = 1` via the KKT system.
    fn solve_active(&self, act_p: &[usize], act_q: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
        if act_p.is_empty() || act_q.is_empty() {
            return None;
        }
        let np = self.pos.nrows();
        let (a, b) = (act_p.len(), act_q.len());
        let m = a + b;
        let idx: Vec<(usize, f64)> = act_p
            .iter()
            .map(|&i| (i, 1.0))
            .chain(act_q.iter().map(|&j| (np + j, -1.0)))
            .collect();
        let mut kkt = DMatrix::zeros(m + 2, m + 2);
        for (r, &(ir, sr)) in idx.iter().enumerate() {
            for (c, &(ic, sc)) in idx.iter().enumerate() {
                kkt[(r, c)] = 2.0 * sr * sc * self.gram[(ir, ic)];
            }
        }
        for r in 0..a {
            kkt[(r, m)] = 1.0;
            kkt[(m, r)] = 1.0;
        }
        for r in a..m {
            kkt[(r, m + 1)] = 1.0;
            kkt[(m + 1, r)] = 1.0;
        }
        let mut rhs = DVector::zeros(m + 2);
        rhs[m] = 1.0;
        rhs[m + 1] = 1.0;
        let (pinv, _) = linalg::pseudo_inverse(&kkt, 1e-13);
        let sol = pinv * rhs;
        let mut lambda = vec![0.0; np];
        let mut gamma = vec![0.0; self.neg.nrows()];
        for (r, &i) in act_p.iter().enumerate() {
            lambda[i] = sol[r];
        }
        for (r, &j) in act_q.iter().enumerate() {
            gamma[j] = sol[a + r];
        }
        let floor = -1e-12;
        if lambda.iter().chain(&gamma).any(|&c| c < floor || !c.is_finite()) {
            return None;
        }
        for c in lambda.iter_mut().chain(gamma.iter_mut()) {
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        let sl: f64 = lambda.iter().sum();
        let sg: f64 = gamma.iter().sum();
        if (sl - 1.0).abs() > 1e-8 || (sg - 1.0).abs() > 1e-8 {
            return None;
        }
        lambda.iter_mut().for_each(|c| *c /= sl);
        gamma.iter_mut().for_each(|c| *c /= sg);
        Some((lambda, gamma))
    }
}

/// Per-concept SVM readouts on a binary grid: for each concept, value 1 is
/// the positive class. Returns the solutions and the equivalent probe bank.
pub fn binary_svm_readouts(set: &EmbeddingSet, support: &TrainingSupport) -> Result<(Vec<SvmSolution>, ProbeBank)> {
    let space = set.space();
    if !space.is_binary() {
        return Err(Error::InvalidArgument("SVM readouts need a binary concept space".into()));
    }
    let rows = set.select_rows(support.tuples())?;
    let mut sols = Vec::with_capacity(space.k());
    for i in 0..space.k() {
        let (p, q): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| set.labels()[r][i] == 1);
        if p.is_empty() || q.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "support has only one value of concept {i}"
            )));
        }
        let pos = set.subset(&p);
        let neg = set.subset(&q);
        sols.push(hard_margin_svm(pos.data(), neg.data())?);
    }
    let bank = bank_from_svms(space, &sols)?;
    Ok((sols, bank))
}

/// Probe bank whose binary posteriors equal `sigmoid(w.z + b)` for each
/// concept: `w_{i,1} = w/2`, `w_{i,0} = -w/2`, and likewise for the bias.
pub fn bank_from_svms(space: &ConceptSpace, sols: &[SvmSolution]) -> Result<ProbeBank> {
    if !space.is_binary() || sols.len() != space.k() {
        return Err(Error::InvalidArgument("need one SVM per binary concept".into()));
    }
    let d = sols.first().map(|s| s.w.len()).unwrap_or(0);
    let mut w = DMatrix::zeros(2 * space.k(), d);
    let mut b = DVector::zeros(2 * space.k());
    for (i, s) in sols.iter().enumerate() {
        for c in 0..d {
            w[(2 * i, c)] = -0.5 * s.w[c];
            w[(2 * i + 1, c)] = 0.5 * s.w[c];
        }
        b[2 * i] = -0.5 * s.b;
        b[2 * i + 1] = 0.5 * s.b;
    }
    ProbeBank::new(space.clone(), w, b, Geometry::Euclidean)
}

fn argmin(v: &[f64], ok: impl Fn(usize) -> bool) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if ok(i) && (best.0 == usize::MAX || x < best.1) {
            best = (i, x);
        }
    }
    best
}

fn argmax(v: &[f64], ok: impl Fn(usize) -> bool) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if ok(i) && (best.0 == usize::MAX || x > best.1) {
            best = (i, x);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(d: usize, pts: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(pts.len(), d, |r, c| pts[r][c])
    }

    #[test]
    fn symmetric_pair_in_1d() {
        let s = hard_margin_svm(&rows(1, &[&[1.0]]), &rows(1, &[&[-1.0]])).unwrap();
        assert!((s.w[0] - 1.0).abs() < 1e-15);
        assert!(s.b.abs() < 1e-15);
        assert!((s.margin - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_against_hull_is_tight() {
        let pos = rows(2, &[&[0.0, 3.0]]);
        let neg = rows(2, &[&[-1.0, 0.0], &[1.0, 0.0], &[0.0, -2.0], &[2.0, -1.0]]);
        let s = hard_margin_svm(&pos, &neg).unwrap();
        assert!((s.decision(&[0.0, 3.0]) - 1.0).abs() < 1e-12);
        let (feas, tight) = s.kkt_residuals(&pos, &neg);
        assert!(feas < 1e-8 && tight < 1e-8);
        assert!((s.margin - 1.5).abs() < 1e-10);
        assert!((s.margin * linalg::norm(&s.w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_hulls_are_not_separable() {
        let pos = rows(2, &[&[1.0, 1.0], &[-1.0, -1.0]]);
        let neg = rows(2, &[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(matches!(hard_margin_svm(&pos, &neg), Err(Error::NotSeparable { .. })));
    }

    /// Brute-force reference for tiny instances: closest pair over all
    /// segment/point and point/point combinations in 2D.
    fn brute_distance(pos: &DMatrix<f64>, neg: &DMatrix<f64>) -> f64 {
        fn seg_point(a: &[f64], b: &[f64], p: &[f64]) -> f64 {
            let ab = [b[0] - a[0], b[1] - a[1]];
            let ap = [p[0] - a[0], p[1] - a[1]];
            let l = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if l == 0.0 { 0.0 } else { ((ap[0] * ab[0] + ap[1] * ab[1]) / l).clamp(0.0, 1.0) };
            ((a[0] + t * ab[0] - p[0]).powi(2) + (a[1] + t * ab[1] - p[1]).powi(2)).sqrt()
        }
        let pts = |m: &DMatrix<f64>| -> Vec<[f64; 2]> { m.row_iter().map(|r| [r[0], r[1]]).collect() };
        let (p, q) = (pts(pos), pts(neg));
        let mut best = f64::INFINITY;
        for (a, b) in [(&p, &q), (&q, &p)] {
            for i in 0..a.len() {
                for j in 0..a.len() {
                    for x in b.iter() {
                        best = best.min(seg_point(&a[i], &a[j], x));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 200 {
            let np = rng.random_range(1..6);
            let nq = rng.random_range(1..6);
            let shift = rng.random_range(0.5..3.0);
            let pos = DMatrix::from_fn(np, 2, |_, c| rng.random_range(-1.0..1.0) + if c == 0 { shift } else { 0.0 });
            let neg = DMatrix::from_fn(nq, 2, |_, c| rng.random_range(-1.0..1.0) - if c == 0 { shift } else { 0.0 });
            let Ok(s) = hard_margin_svm(&pos, &neg) else { continue };
            let dist = 2.0 * s.margin;
            assert!((dist - brute_distance(&pos, &neg)).abs() < 1e-9);
            let (feas, tight) = s.kkt_residuals(&pos, &neg);
            assert!(feas < 1e-8 && tight < 1e-8, "{feas} {tight}");
            assert!((s.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!((s.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            checked += 1;
        }
    }

    #[test]
    fn high_dimensional_random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let d = rng.random_range(2..30);
            let pos = DMatrix::from_fn(40, d, |_, c| rng.random_range(-1.0..1.0) + if c == 0 { 1.2 } else { 0.0 });
            let neg = DMatrix::from_fn(35, d, |_, c| rng.random_range(-1.0..1.0) - if c == 0 { 1.2 } else { 0.0 });
            let s = hard_margin_svm(&pos, &neg).unwrap();
            let (feas, tight) = s.kkt_residuals(&pos, &neg);
            assert!(feas < 1e-8 && tight < 1e-8, "d={d} {feas} {tight} gap={}", s.gap);
            assert!(s.gap <= SVM_GAP_TOL);
        }
    }
}
