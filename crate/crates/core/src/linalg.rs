//! Dense linear algebra shared by the analytic and training code.
//!
//! Everything is `f64` and backed by `nalgebra` dynamic matrices. The
//! factorizations here add the conventions the rest of the crate relies on:
//! singular values sorted in descending order with a deterministic sign for
//! the singular vectors, and positive-definiteness checks that surface as
//! [`Error::NotPositiveDefinite`] instead of NaNs.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for the symmetry check on [`SpdMatrix`].
const SYMMETRY_RTOL: f64 = 1e-12;

/// A symmetric positive-definite matrix.
///
/// Construction checks symmetry and that a Cholesky factorization exists.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dims(
                "SpdMatrix",
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("SpdMatrix entries must be finite"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_RTOL * scale {
            return Err(Error::invalid(format!(
                "matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        // Exact symmetrization so downstream eigen-solvers see a symmetric input.
        let m = symmetrize(&m);
        if Cholesky::new(m.clone()).is_none() {
            return Err(Error::NotPositiveDefinite("Cholesky factorization failed"));
        }
        Ok(SpdMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(Matrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn cholesky(&self) -> Cholesky<f64, nalgebra::Dyn> {
        Cholesky::new(self.0.clone()).expect("SpdMatrix invariant: Cholesky exists")
    }

    pub fn inverse(&self) -> Matrix {
        symmetrize(&self.cholesky().inverse())
    }

    /// Solves `self * x = b`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.cholesky().solve(b)
    }
}

impl AsRef<Matrix> for SpdMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

/// Thin SVD `m = U diag(s) Vᵀ` with `k = min(rows, cols)` components.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v_t: Matrix,
}

impl ThinSvd {
    pub fn recompose(&self) -> Matrix {
        &self.u * Matrix::from_diagonal(&self.singular_values) * &self.v_t
    }
}

/// SVD with singular values in descending order.
///
/// Equal singular values keep the order produced by the underlying
/// factorization (stable sort). Each left singular vector is flipped, together
/// with its right partner, so that its first nonzero entry is nonnegative.
pub fn svd(m: &Matrix) -> ThinSvd {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return ThinSvd {
            u: Matrix::zeros(m.nrows(), 0),
            singular_values: Vector::zeros(0),
            v_t: Matrix::zeros(0, m.ncols()),
        };
    }
    let raw = nalgebra::SVD::new(m.clone(), true, true);
    let u_raw = raw.u.expect("requested U");
    let vt_raw = raw.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        raw.singular_values[b]
            .partial_cmp(&raw.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut u = Matrix::zeros(m.nrows(), k);
    let mut v_t = Matrix::zeros(k, m.ncols());
    let mut s = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u_raw.column(src).into_owned();
        let mut vrow = vt_raw.row(src).into_owned();
        let lead = ucol.iter().copied().find(|x| x.abs() > 1e-14).unwrap_or(0.0);
        if lead < 0.0 {
            ucol.neg_mut();
            vrow.neg_mut();
        }
        u.set_column(dst, &ucol);
        v_t.set_row(dst, &vrow);
        s[dst] = raw.singular_values[src];
    }
    ThinSvd {
        u,
        singular_values: s,
        v_t,
    }
}

/// Best rank-`r` approximation in Frobenius norm: keep the `r` largest
/// singular values and zero the rest.
pub fn rank_truncate(m: &Matrix, r: usize) -> Result<Matrix> {
    let max = m.nrows().min(m.ncols());
    if r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    if r == max {
        return Ok(m.clone());
    }
    let f = svd(m);
    let mut s = f.singular_values.clone();
    for x in s.iter_mut().skip(r) {
        *x = 0.0;
    }
    Ok(&f.u * Matrix::from_diagonal(&s) * &f.v_t)
}

/// Applies `f` to the eigenvalues of a symmetric positive-definite matrix.
fn spectral_map(m: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dims(
            "spectral function",
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite("nonpositive eigenvalue"));
    }
    let d = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * Matrix::from_diagonal(&d) * q.transpose())))
}

/// Principal (symmetric positive-definite) square root.
pub fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    spectral_map(m, f64::sqrt)
}

/// Inverse of the principal square root.
pub fn sym_inv_sqrt(m: &Matrix) -> Result<Matrix> {
    spectral_map(m, |l| 1.0 / l.sqrt())
}

/// Log-determinant through the Cholesky factor.
pub fn logdet_pd(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::dims(
            "logdet_pd",
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let chol = Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite("logdet_pd"))?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Inverse of a symmetric positive-definite matrix, erroring when the
/// Cholesky factorization fails.
pub fn inv_pd(m: &Matrix) -> Result<Matrix> {
    let chol = Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite("inv_pd"))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Draws `n` rows `mean + L ξ` with `L` the lower Cholesky factor of `cov`.
pub fn chol_sample(mean: &Vector, cov: &Matrix, n: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::dims(
            "chol_sample",
            format!("{d}x{d} covariance"),
            format!("{}x{}", cov.nrows(), cov.ncols()),
        ));
    }
    if n == 0 {
        return Err(Error::invalid("chol_sample needs n >= 1"));
    }
    let chol = Cholesky::new(symmetrize(cov)).ok_or(Error::NotPositiveDefinite("chol_sample"))?;
    let l = chol.l();
    let mut out = Matrix::zeros(n, d);
    let mut xi = Vector::zeros(d);
    for i in 0..n {
        for x in xi.iter_mut() {
            *x = rng.normal();
        }
        let draw = mean + &l * &xi;
        out.set_row(i, &draw.transpose());
    }
    Ok(out)
}

/// Deterministic, splittable random source.
///
/// ChaCha20 is counter based; [`SeededRng::fork`] selects an independent
/// stream of the same key, so per-index generators can be created without
/// coordinating state between threads.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `stream`, derived from the root seed only.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha20Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng { seed: self.seed, inner }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.inner)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut self.inner, 0..=i);
            idx.swap(i, j);
        }
        idx
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        // Row-major fill so results do not depend on nalgebra's storage order.
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.normal();
            }
        }
        m
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// JSON sub-format `{rows, cols, data: [row-major]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixJson {
    fn from(m: &Matrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixJson> for Matrix {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Matrix> {
        if j.rows * j.cols != j.data.len() {
            return Err(Error::dims(
                "matrix JSON",
                format!("{} entries", j.rows * j.cols),
                j.data.len(),
            ));
        }
        if j.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix JSON entries must be finite"));
        }
        Ok(Matrix::from_row_slice(j.rows, j.cols, &j.data))
    }
}

/// `serde(with = ...)` adapter for [`Matrix`] fields.
pub mod matrix_serde {
    use super::{Matrix, MatrixJson};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        Matrix::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// Stacks row slices into a matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut m = Matrix::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        for (j, &x) in r.iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    m
}

/// Selects the given rows, in order.
pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.ncols());
    for (dst, &src) in idx.iter().enumerate() {
        out.set_row(dst, &m.row(src));
    }
    out
}
