//! Embedding matrices keyed by concept tuples, the on-disk dump format,
//! PCA whitening and probe-span projection.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::concept_space::{ConceptSpace, ConceptTuple};
use crate::error::{Error, Result};
use crate::linalg;

pub const DUMP_MAGIC: &str = "CGLAB1";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";
pub const LABELS_FILE: &str = "labels.u16";

/// Embeddings (one row per sample) with their concept labels.
///
/// Values are held in f64; dumps store them as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    space: ConceptSpace,
    data: DMatrix<f64>,
    labels: Vec<ConceptTuple>,
    pub meta: BTreeMap<String, String>,
}

impl EmbeddingSet {
    pub fn new(space: ConceptSpace, data: DMatrix<f64>, labels: Vec<ConceptTuple>) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                got: labels.len(),
            });
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        for t in &labels {
            space.check_tuple(t)?;
        }
        Ok(Self {
            space,
            data,
            labels,
            meta: BTreeMap::new(),
        })
    }

    /// One row per grid tuple in canonical order, filled by `f`.
    pub fn from_grid(space: ConceptSpace, d: usize, mut f: impl FnMut(&[usize]) -> Vec<f64>) -> Result<Self> {
        let labels = space.enumerate_tuples();
        let mut data = DMatrix::zeros(labels.len(), d);
        for (r, t) in labels.iter().enumerate() {
            let z = f(t);
            if z.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: z.len(),
                });
            }
            for (c, v) in z.into_iter().enumerate() {
                data[(r, c)] = v;
            }
        }
        Self::new(space, data, labels)
    }

    pub fn space(&self) -> &ConceptSpace {
        &self.space
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[ConceptTuple] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.data.row(r).iter().copied().collect()
    }

    /// Row indices grouped by canonical tuple index.
    pub fn rows_by_tuple(&self) -> HashMap<usize, Vec<usize>> {
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for (r, t) in self.labels.iter().enumerate() {
            map.entry(self.space.index_unchecked(t)).or_default().push(r);
        }
        map
    }

    /// Rows whose labels belong to `tuples`, in the order given, with all
    /// duplicates of each tuple kept. Errors if a tuple has no row.
    pub fn select_rows(&self, tuples: &[ConceptTuple]) -> Result<Vec<usize>> {
        let map = self.rows_by_tuple();
        let mut out = Vec::new();
        for t in tuples {
            self.space.check_tuple(t)?;
            match map.get(&self.space.index_unchecked(t)) {
                Some(rows) => out.extend_from_slice(rows),
                None => {
                    return Err(Error::InvalidArgument(format!("no embedding for tuple {t:?}")))
                }
            }
        }
        Ok(out)
    }

    /// New set keeping only the given rows.
    pub fn subset(&self, rows: &[usize]) -> EmbeddingSet {
        let data = DMatrix::from_fn(rows.len(), self.dim(), |r, c| self.data[(rows[r], c)]);
        EmbeddingSet {
            space: self.space.clone(),
            data,
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Same labels, new data.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<EmbeddingSet> {
        let mut out = EmbeddingSet::new(self.space.clone(), data, self.labels.clone())?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Whether the set has exactly one row per grid tuple.
    pub fn is_one_row_per_tuple(&self) -> bool {
        self.rows() == self.space.grid_size() && self.rows_by_tuple().len() == self.rows()
    }
}

// ---------------------------------------------------------------------------
// Dump format

/// Ordered key/value manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|(k, _)| !k.starts_with(prefix));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::MalformedDump {
                path: path.to_path_buf(),
                reason: format!("line {} is not key=value", lineno + 1),
            })?;
            if m.get(k).is_some() {
                return Err(Error::MalformedDump {
                    path: path.to_path_buf(),
                    reason: format!("duplicate key {k:?}"),
                });
            }
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }

    fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m = Self::parse(&text, &path)?;
        if m.get("magic") != Some(DUMP_MAGIC) {
            return Err(malformed(&path, "missing or wrong magic"));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }

    pub(crate) fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| malformed(path, &format!("missing key {key:?}")))
    }

    pub(crate) fn require_usize(&self, key: &str, path: &Path) -> Result<usize> {
        let v = self.require(key, path)?;
        v.trim()
            .parse()
            .map_err(|_| malformed(path, &format!("key {key:?} is not a non-negative integer: {v:?}")))
    }

    pub(crate) fn require_list(&self, key: &str, path: &Path) -> Result<Vec<usize>> {
        let v = self.require(key, path)?;
        v.split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(path, &format!("key {key:?} is not an integer list: {v:?}")))
    }
}

pub(crate) fn malformed(path: &Path, reason: &str) -> Error {
    Error::MalformedDump {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub(crate) fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn write_f32le(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32le(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = expected_len * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `set` into directory `dir` (created if needed).
pub fn write_dump(set: &EmbeddingSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if set.rows() == 0 {
        return Err(Error::InvalidArgument("refusing to write an empty embedding set".into()));
    }
    if let Some(&n) = set.space.cardinalities().iter().find(|&&n| n > u16::MAX as usize + 1) {
        return Err(Error::InvalidArgument(format!(
            "cardinality {n} does not fit 16-bit labels"
        )));
    }
    for (k, v) in &set.meta {
        if k.is_empty() || k.contains(['=', '\n', '\r']) || v.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "metadata entry {k:?} cannot be stored in a manifest"
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut m = Manifest::default();
    m.set("magic", DUMP_MAGIC);
    m.set("k", set.space.k().to_string());
    m.set("cardinalities", join_list(set.space.cardinalities()));
    m.set("d", set.dim().to_string());
    m.set("rows", set.rows().to_string());
    m.set("dtype", "f32le");
    for (k, v) in &set.meta {
        m.set(&format!("meta.{k}"), v.clone());
    }
    m.write(dir)?;

    let data = &set.data;
    write_f32le(
        &dir.join(EMBEDDINGS_FILE),
        (0..set.rows()).flat_map(|r| (0..set.dim()).map(move |c| data[(r, c)])),
    )?;
    let labels: Vec<u8> = set
        .labels
        .iter()
        .flat_map(|t| t.iter().flat_map(|&v| (v as u16).to_le_bytes()))
        .collect();
    let path = dir.join(LABELS_FILE);
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

/// Reads a dump directory written by [`write_dump`] or any compatible producer.
pub fn read_dump(dir: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let m = Manifest::read(dir)?;
    let dtype = m.require("dtype", &mpath)?;
    if dtype != "f32le" {
        return Err(malformed(&mpath, &format!("unsupported dtype {dtype:?}")));
    }
    let k = m.require_usize("k", &mpath)?;
    let cards = m.require_list("cardinalities", &mpath)?;
    if cards.len() != k {
        return Err(malformed(
            &mpath,
            &format!("k={k} but {} cardinalities listed", cards.len()),
        ));
    }
    let space = ConceptSpace::new(cards).map_err(|e| malformed(&mpath, &e.to_string()))?;
    let d = m.require_usize("d", &mpath)?;
    let rows = m.require_usize("rows", &mpath)?;
    if d == 0 || rows == 0 {
        return Err(malformed(&mpath, "d and rows must be positive"));
    }
    let total = rows
        .checked_mul(d)
        .ok_or_else(|| malformed(&mpath, "rows*d overflows"))?;

    let values = read_f32le(&dir.join(EMBEDDINGS_FILE), total)?;
    let data = DMatrix::from_row_slice(rows, d, &values);

    let lpath = dir.join(LABELS_FILE);
    let lbytes = fs::read(&lpath).map_err(|e| Error::io(&lpath, e))?;
    let expected = rows * k * 2;
    if lbytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: lpath,
            expected,
            got: lbytes.len(),
        });
    }
    let raw: Vec<usize> = lbytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    let mut labels = Vec::with_capacity(rows);
    for (r, chunk) in raw.chunks_exact(k).enumerate() {
        if let Err(e) = space.check_tuple(chunk) {
            return Err(malformed(&lpath, &format!("row {r}: label {e}")));
        }
        labels.push(chunk.to_vec());
    }

    let mut set = EmbeddingSet::new(space, data, labels)?;
    for (key, v) in m.entries() {
        if let Some(name) = key.strip_prefix("meta.") {
            set.meta.insert(name.to_string(), v.clone());
        }
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Whitening and projection

/// PCA whitening fitted on a data matrix (rows are samples).
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenTransform {
    pub mean: DVector<f64>,
    /// d x r, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub inv_scales: Vec<f64>,
    pub rel_tol: f64,
}

pub const DEFAULT_WHITEN_TOL: f64 = 1e-8;

impl WhitenTransform {
    pub fn fit(x: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidArgument("whitening needs at least two rows".into()));
        }
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "whitening tolerance {rel_tol} must lie in (0, 1)"
            )));
        }
        let mean = column_mean(x);
        let centered = center_rows(x, &mean);
        let (basis, sv) = linalg::leading_right_singular(&centered, rel_tol);
        if sv.is_empty() {
            return Err(Error::Degenerate("data has no variance to whiten".into()));
        }
        let scale = ((x.nrows() - 1) as f64).sqrt();
        Ok(Self {
            mean,
            basis,
            inv_scales: sv.iter().map(|s| scale / s).collect(),
            rel_tol,
        })
    }

    pub fn rank(&self) -> usize {
        self.inv_scales.len()
    }

    /// Maps rows of `x` into whitened coordinates (rows x r).
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.ncols(),
            });
        }
        let mut y = center_rows(x, &self.mean) * &self.basis;
        for (c, s) in self.inv_scales.iter().enumerate() {
            y.column_mut(c).scale_mut(*s);
        }
        Ok(y)
    }

    /// Expresses a linear functional `w . z` on raw inputs in whitened
    /// coordinates: returns `w'` with `w . (z - mean) = w' . whiten(z)` for z
    /// in the retained subspace.
    pub fn map_functional(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = self.basis.transpose() * w;
        for (v, s) in out.iter_mut().zip(&self.inv_scales) {
            *v /= s;
        }
        out
    }
}

/// Orthogonal projector onto the span of probe weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanProjector {
    /// d x r, orthonormal columns.
    pub basis: DMatrix<f64>,
}

pub const SPAN_RANK_TOL: f64 = 1e-10;

impl SpanProjector {
    /// `weights` is m x d with one probe per row.
    pub fn fit(weights: &DMatrix<f64>) -> Result<Self> {
        if weights.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one probe vector".into()));
        }
        let (basis, sv) = linalg::leading_right_singular(weights, SPAN_RANK_TOL);
        if sv.is_empty() {
            return Err(Error::Degenerate("probe weights are all zero".into()));
        }
        Ok(Self { basis })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Projects each row of `x`, staying in the ambient coordinates.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.basis.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.nrows(),
                got: x.ncols(),
            });
        }
        Ok((x * &self.basis) * self.basis.transpose())
    }
}

pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_set(rows: usize, d: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = ConceptSpace::new(vec![3, 5, 2]).unwrap();
        let data = DMatrix::from_fn(rows, d, |_, _| rng.random::<f32>() as f64 * 4.0 - 2.0);
        let labels = (0..rows)
            .map(|_| space.cardinalities().iter().map(|&n| rng.random_range(0..n)).collect())
            .collect();
        let mut set = EmbeddingSet::new(space, data, labels).unwrap();
        set.meta.insert("model".into(), "toy".into());
        set
    }

    #[test]
    fn dump_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(1000, 64, 1);
        write_dump(&set, dir.path()).unwrap();
        let back = read_dump(dir.path()).unwrap();
        assert_eq!(back.labels(), set.labels());
        assert_eq!(back.meta, set.meta);
        for (a, b) in back.data().iter().zip(set.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_set_rejected_at_write() {
        let dir = tempfile::tempdir().unwrap();
        let space = ConceptSpace::binary(2).unwrap();
        let set = EmbeddingSet::new(space, DMatrix::zeros(0, 3), vec![]).unwrap();
        assert!(write_dump(&set, dir.path()).is_err());
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(10, 511, 2);
        write_dump(&set, dir.path()).unwrap();
        let mut m = Manifest::read(dir.path()).unwrap();
        m.set("d", "512");
        m.write(dir.path()).unwrap();
        assert!(matches!(read_dump(dir.path()), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(4, 2, 3);
        write_dump(&set, dir.path()).unwrap();
        let p = dir.path().join(LABELS_FILE);
        let mut b = fs::read(&p).unwrap();
        b[0] = 9;
        fs::write(&p, b).unwrap();
        assert!(matches!(read_dump(dir.path()), Err(Error::MalformedDump { .. })));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dump(&random_set(3, 2, 4), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("CGLAB1", "NOPE");
        fs::write(&p, text).unwrap();
        assert!(matches!(read_dump(dir.path()), Err(Error::MalformedDump { .. })));
    }

    #[test]
    fn whitening_isotropic_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(10_000, 8, |_, _| StandardNormal.sample(&mut rng));
        let t = WhitenTransform::fit(&x, DEFAULT_WHITEN_TOL).unwrap();
        assert_eq!(t.rank(), 8);
        let y = t.apply(&x).unwrap();
        let cov = y.transpose() * &y / 9999.0;
        for i in 0..8 {
            assert!((cov[(i, i)] - 1.0).abs() < 1e-6);
            assert!(y.column(i).mean().abs() < 1e-8);
            for j in 0..8 {
                if i != j {
                    assert!(cov[(i, j)].abs() < 0.05);
                }
            }
        }
        // Basis orthonormality.
        let g = t.basis.transpose() * &t.basis;
        assert!((g - DMatrix::identity(8, 8)).amax() < 1e-10);
    }

    #[test]
    fn whitening_already_white_data_keeps_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(500, 4, |_, _| StandardNormal.sample(&mut rng));
        let y = WhitenTransform::fit(&x, DEFAULT_WHITEN_TOL).unwrap().apply(&x).unwrap();
        let t2 = WhitenTransform::fit(&y, DEFAULT_WHITEN_TOL).unwrap();
        for s in &t2.inv_scales {
            assert!((s - 1.0).abs() < 1e-8);
        }
        let y2 = t2.apply(&y).unwrap();
        let cov = y2.transpose() * &y2 / 499.0;
        assert!((cov - DMatrix::identity(4, 4)).amax() < 1e-8);
    }

    #[test]
    fn whitening_rank_one() {
        let x = DMatrix::from_fn(20, 3, |r, c| (r as f64) * [1.0, -2.0, 0.5][c]);
        assert_eq!(WhitenTransform::fit(&x, DEFAULT_WHITEN_TOL).unwrap().rank(), 1);
        assert!(WhitenTransform::fit(&DMatrix::zeros(5, 3), DEFAULT_WHITEN_TOL).is_err());
    }

    #[test]
    fn projector_basics() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = SpanProjector::fit(&w).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[3.0, 4.0, 5.0]);
        let y = p.project(&x).unwrap();
        assert!((y[(0, 2)]).abs() < 1e-12);
        assert!((y[(0, 0)] - 3.0).abs() < 1e-12);

        let dup = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 0.0, 1.0, 1.0]);
        assert_eq!(SpanProjector::fit(&dup).unwrap().rank(), 2);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let full = DMatrix::from_fn(5, 5, |_, _| StandardNormal.sample(&mut rng));
        let pm = SpanProjector::fit(&full).unwrap().matrix();
        assert!((pm - DMatrix::identity(5, 5)).amax() < 1e-8);

        assert!(SpanProjector::fit(&DMatrix::zeros(2, 3)).is_err());
    }
}
