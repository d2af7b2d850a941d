//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = U diag(s) V^T` with singular values in descending order.
///
/// Computed with `faer`: the bidiagonal QR in `nalgebra` 0.35 returns wrong
/// factors on some rank-deficient inputs, such as one-hot design matrices.
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let p = r.min(c);
    if p == 0 {
        return (DMatrix::zeros(r, 0), Vec::new(), DMatrix::zeros(c, 0));
    }
    let a = faer::Mat::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = a.thin_svd().expect("SVD converges");
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| s[y].partial_cmp(&s[x]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| s[i]).collect();
    let u = DMatrix::from_fn(r, p, |i, j| u[(i, order[j])]);
    let v = DMatrix::from_fn(c, p, |i, j| v[(i, order[j])]);
    (u, values, v)
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let a = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut s = a.singular_values().expect("SVD converges");
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Number of singular values strictly above `rel_tol * max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&v| v > rel_tol * max).count(),
        _ => 0,
    }
}

/// Right singular vectors (as columns) whose singular values exceed
/// `rel_tol * max`, together with those singular values, largest first.
pub fn leading_right_singular(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, Vec<f64>) {
    let d = m.ncols();
    let (_, s, v) = thin_svd(m);
    let max = s.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return (DMatrix::zeros(d, 0), Vec::new());
    }
    let keep = s.iter().filter(|&&x| x > rel_tol * max).count();
    (v.columns(0, keep).into_owned(), s[..keep].to_vec())
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
/// Returns the pseudo-inverse and the numerical rank used.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let (r, c) = m.shape();
    let (u, s, v) = thin_svd(m);
    let max = s.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return (DMatrix::zeros(c, r), 0);
    }
    let rank = s.iter().filter(|&&x| x > rel_tol * max).count();
    let mut vs = v.columns(0, rank).into_owned();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        col /= s[j];
    }
    (vs * u.columns(0, rank).transpose(), rank)
}

/// Column-stacked orthonormal basis drawn from a Gaussian matrix via QR.
pub fn random_orthonormal<R: rand::Rng>(rng: &mut R, d: usize, cols: usize) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    assert!(cols <= d, "cannot draw {cols} orthonormal columns in dimension {d}");
    if cols == 0 {
        return DMatrix::zeros(d, 0);
    }
    let g = DMatrix::from_fn(d, cols, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    q.columns(0, cols).into_owned()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_duplicated_rows() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 0.0, 1.0, 0.0]);
        assert_eq!(numerical_rank(&m, 1e-10), 2);
    }

    #[test]
    fn pinv_of_full_rank_square_is_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let (p, r) = pseudo_inverse(&m, 1e-12);
        assert_eq!(r, 2);
        let id = &m * &p;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4), 1e-9), 0);
    }
}
