//! Empirical contrastive losses over a batch of tilting scores, with exact
//! gradients with respect to every score.
//!
//! Throughout, `s[i][j]` is the score of the pair `(u^i, v^j)`; the diagonal
//! holds the aligned pairs.

use serde::{Deserialize, Serialize};

use crate::encoders::SimilarityBatch;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `exp(−|x − y|²/(2h²))`; `None` selects the median heuristic per sample.
    Gaussian {
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    /// `(⟨x, y⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Gaussian { bandwidth: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    Clip,
    Cond {
        lambda_u: f64,
        lambda_v: f64,
    },
    Joint,
    CondMmd {
        #[serde(default)]
        kernel: Kernel,
        lambda_u: f64,
        lambda_v: f64,
    },
    JointMmd {
        #[serde(default)]
        kernel: Kernel,
    },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        let lambdas = match *self {
            LossKind::Cond { lambda_u, lambda_v } | LossKind::CondMmd { lambda_u, lambda_v, .. } => {
                Some((lambda_u, lambda_v))
            }
            _ => None,
        };
        if let Some((a, b)) = lambdas {
            if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
                return Err(Error::invalid(format!(
                    "loss weights must be nonnegative and not both zero, got ({a}, {b})"
                )));
            }
        }
        match self {
            LossKind::CondMmd { kernel, .. } | LossKind::JointMmd { kernel } => kernel.validate(),
            _ => Ok(()),
        }
    }

    /// Whether the loss needs the raw paired samples besides the scores.
    pub fn needs_samples(&self) -> bool {
        matches!(self, LossKind::CondMmd { .. } | LossKind::JointMmd { .. })
    }
}

fn check_batch(s: &Matrix) -> Result<usize> {
    if !s.is_square() {
        return Err(Error::dims(
            "similarity batch",
            "square",
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    if s.nrows() < 2 {
        return Err(Error::invalid(format!("losses need N >= 2, got {}", s.nrows())));
    }
    if s.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::invalid("similarity scores must not be NaN or +inf"));
    }
    Ok(s.nrows())
}

/// `log((1/n) Σ exp(x))` with max-shifting.
fn log_mean_exp<'a>(xs: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), &x| (s + (x - m).exp(), n + 1));
    m + (sum / n as f64).ln()
}

fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

/// Softmax down each column: `P[a][b] = exp(s_ab)/Σ_j exp(s_jb)`.
pub fn softmax_columns(s: &Matrix) -> Matrix {
    let mut p = s.clone();
    for mut col in p.column_iter_mut() {
        softmax_in_place(col.as_mut_slice());
    }
    p
}

/// Column softmax together with the mean over columns of `log mean exp`.
fn softmax_columns_with_lme(s: &Matrix) -> (f64, Matrix) {
    let mut p = s.clone();
    let n = s.nrows() as f64;
    let mut acc = 0.0;
    for mut col in p.column_iter_mut() {
        let c = col.as_mut_slice();
        let m = c.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for x in c.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in c.iter_mut() {
            *x /= z;
        }
        acc += m + (z / n).ln();
    }
    (acc / s.ncols() as f64, p)
}

/// Softmax along each row.
pub fn softmax_rows(s: &Matrix) -> Matrix {
    softmax_columns(&s.transpose()).transpose()
}

fn mean_diag(s: &Matrix) -> f64 {
    s.diagonal().mean()
}

fn col_lme_mean(s: &Matrix) -> f64 {
    s.column_iter().map(|c| log_mean_exp(c.iter())).sum::<f64>() / s.ncols() as f64
}

fn row_lme_mean(s: &Matrix) -> f64 {
    let t = s.transpose();
    col_lme_mean(&t)
}

/// Symmetric InfoNCE: `−(1/2N) Σ_i [log softmax_col(s)_ii + log softmax_row(s)_ii]`.
pub fn loss_clip(s: &SimilarityBatch) -> Result<f64> {
    let n = check_batch(&s.s)? as f64;
    let d = mean_diag(&s.s);
    // log softmax_col(s)_ii = s_ii − log Σ_j exp(s_ji) = s_ii − LME_col − log N
    Ok(-0.5 * ((d - col_lme_mean(&s.s) - n.ln()) + (d - row_lme_mean(&s.s) - n.ln())))
}

/// Weighted conditional loss. The `λ_u` term normalizes over `u` (columns),
/// the `λ_v` term over `v` (rows).
pub fn loss_cond(s: &SimilarityBatch, lambda_u: f64, lambda_v: f64) -> Result<f64> {
    check_batch(&s.s)?;
    let d = mean_diag(&s.s);
    let mut out = 0.0;
    if lambda_u != 0.0 {
        out -= 0.5 * lambda_u * (d - col_lme_mean(&s.s));
    }
    if lambda_v != 0.0 {
        out -= 0.5 * lambda_v * (d - row_lme_mean(&s.s));
    }
    Ok(out)
}

/// `−mean(s_pos) + log mean exp(s_neg)` over all entries of `s_neg`.
pub fn loss_joint(s_pos: &[f64], s_neg: &Matrix) -> Result<f64> {
    if s_pos.len() < 2 || s_neg.is_empty() {
        return Err(Error::invalid("joint loss needs at least two positive pairs"));
    }
    let pos = s_pos.iter().sum::<f64>() / s_pos.len() as f64;
    Ok(-pos + log_mean_exp(s_neg.iter()))
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { bandwidth: Some(h) } if !(h > 0.0 && h.is_finite()) => {
                Err(Error::invalid(format!("kernel bandwidth must be positive, got {h}")))
            }
            Kernel::Polynomial { degree: 0, .. } => Err(Error::invalid("polynomial degree must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Fixes a missing Gaussian bandwidth from the median pairwise distance of `pooled`.
    pub fn resolved_for(&self, pooled: &Matrix) -> Kernel {
        match *self {
            Kernel::Gaussian { bandwidth: None } => Kernel::Gaussian {
                bandwidth: Some(median_heuristic(pooled)),
            },
            k => k,
        }
    }

    fn from_sq_dist_and_dot(&self, d2: f64, dot: f64) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } => {
                let h = bandwidth.expect("bandwidth resolved before evaluation");
                (-d2 / (2.0 * h * h)).exp()
            }
            Kernel::Polynomial { degree, offset } => (dot + offset).powi(degree as i32),
        }
    }

    /// Gram matrix `K[i][j] = k(a_i, b_j)`.
    pub fn gram(&self, a: &Matrix, b: &Matrix) -> Matrix {
        let dots = a * b.transpose();
        let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
        let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
        Matrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            let d2 = (na[i] + nb[j] - 2.0 * dots[(i, j)]).max(0.0);
            self.from_sq_dist_and_dot(d2, dots[(i, j)])
        })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        self.from_sq_dist_and_dot(d2, dot)
    }
}

/// Median Euclidean distance over distinct pairs of rows.
pub fn median_heuristic(x: &Matrix) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push((x.row(i) - x.row(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn pooled(x: &Matrix, y: &Matrix) -> Matrix {
    let mut p = Matrix::zeros(x.nrows() + y.nrows(), x.ncols());
    p.rows_mut(0, x.nrows()).copy_from(x);
    p.rows_mut(x.nrows(), y.nrows()).copy_from(y);
    p
}

/// Unbiased-style MMD estimate with every sum restricted to `i ≠ j`,
/// including the cross term.
pub fn mmd_unbiased(x: &Matrix, y: &Matrix, k: &Kernel) -> Result<f64> {
    let n = x.nrows();
    if n < 2 || y.nrows() != n || x.ncols() != y.ncols() {
        return Err(Error::dims(
            "mmd_unbiased",
            "two equal-size sample sets with N >= 2",
            format!("{}x{} and {}x{}", x.nrows(), x.ncols(), y.nrows(), y.ncols()),
        ));
    }
    k.validate()?;
    let k = k.resolved_for(&pooled(x, y));
    let off = |m: Matrix| m.sum() - m.diagonal().sum();
    let c = 1.0 / (n * (n - 1)) as f64;
    Ok(c * off(k.gram(x, x)) - 2.0 * c * off(k.gram(x, y)) + c * off(k.gram(y, y)))
}

/// One side of the conditional MMD loss. `w[i][·]` are the model weights of
/// the candidates given conditioning sample `i`, `gram` the kernel among the
/// candidates. Returns the value and `∂/∂w`.
fn cond_mmd_side(w: &Matrix, gram: &Matrix) -> (f64, Matrix) {
    let n = w.nrows();
    let nf = n as f64;
    let mut k_off = gram.clone();
    k_off.fill_diagonal(0.0);
    // ½ (1/N) Σ_i (N/(N−1)) Σ_{j≠k} k_jk w_ij w_ik  −  (1/(N−1)) Σ_i Σ_{k≠i} k_ik w_ik
    let kw = w * &k_off; // (i, k) = Σ_j w_ij k_jk
    let quad = kw.component_mul(w).sum();
    let lin = k_off.component_mul(w).sum();
    let value = 0.5 / (nf - 1.0) * quad - lin / (nf - 1.0);
    let grad = (kw - &k_off) / (nf - 1.0);
    (value, grad)
}

/// Backpropagates `∂/∂w` through a row-wise softmax `w = softmax(t)`.
fn softmax_rows_vjp(w: &Matrix, gw: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        let dot = w.row(i).dot(&gw.row(i));
        for j in 0..w.ncols() {
            out[(i, j)] = w[(i, j)] * (gw[(i, j)] - dot);
        }
    }
    out
}

/// Conditional MMD loss with kernels on the raw samples. Returns value and score gradient.
pub fn loss_cond_mmd_with_grad(
    s: &SimilarityBatch,
    u: &Matrix,
    v: &Matrix,
    k_u: &Kernel,
    k_v: &Kernel,
    lambda_u: f64,
    lambda_v: f64,
) -> Result<(f64, Matrix)> {
    let n = check_batch(&s.s)?;
    if u.nrows() != n || v.nrows() != n {
        return Err(Error::dims(
            "cond MMD samples",
            n,
            format!("{} and {}", u.nrows(), v.nrows()),
        ));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, n);
    if lambda_u != 0.0 {
        // Given v^i the weights run over u^j: w[i][j] = softmax_j s[j][i].
        let k = k_u.resolved_for(u);
        let w = softmax_rows(&s.s.transpose());
        let (val, gw) = cond_mmd_side(&w, &k.gram(u, u));
        value += lambda_u * val;
        grad += softmax_rows_vjp(&w, &gw).transpose() * lambda_u;
    }
    if lambda_v != 0.0 {
        let k = k_v.resolved_for(v);
        let w = softmax_rows(&s.s);
        let (val, gw) = cond_mmd_side(&w, &k.gram(v, v));
        value += lambda_v * val;
        grad += softmax_rows_vjp(&w, &gw) * lambda_v;
    }
    Ok((value, grad))
}

pub fn loss_cond_mmd(
    s: &SimilarityBatch,
    u: &Matrix,
    v: &Matrix,
    k_u: &Kernel,
    k_v: &Kernel,
    lambda_u: f64,
    lambda_v: f64,
) -> Result<f64> {
    Ok(loss_cond_mmd_with_grad(s, u, v, k_u, k_v, lambda_u, lambda_v)?.0)
}

/// `k((u, v), (u', v')) = Σ_t c_t A_t[u, u'] B_t[v, v']`, the kernel on
/// concatenated pairs written as a sum of separable terms.
fn separable_terms(k: &Kernel, u: &Matrix, v: &Matrix) -> Vec<(f64, Matrix, Matrix)> {
    match *k {
        Kernel::Gaussian { .. } => vec![(1.0, k.gram(u, u), k.gram(v, v))],
        Kernel::Polynomial { degree, offset } => {
            let a = (u * u.transpose()).add_scalar(offset);
            let b = v * v.transpose();
            let d = degree as i32;
            (0..=d)
                .map(|m| {
                    let binom = (0..m).fold(1.0, |acc, i| acc * (d - i) as f64 / (i + 1) as f64);
                    (binom, a.map(|x| x.powi(m)), b.map(|x| x.powi(d - m)))
                })
                .collect()
        }
    }
}

/// Joint MMD loss between the paired sample and the tilted model, the latter
/// represented by all `N²` product pairs `(u^a, v^b)` with softmax weights of
/// their scores. Returns value and score gradient.
pub fn loss_joint_mmd_with_grad(s: &SimilarityBatch, u: &Matrix, v: &Matrix, k: &Kernel) -> Result<(f64, Matrix)> {
    let n = check_batch(&s.s)?;
    if u.nrows() != n || v.nrows() != n {
        return Err(Error::dims(
            "joint MMD samples",
            n,
            format!("{} and {}", u.nrows(), v.nrows()),
        ));
    }
    if s.s.iter().all(|&x| x == f64::NEG_INFINITY) {
        return Err(Error::invalid("all product-pair scores are -inf"));
    }
    let k = match k {
        Kernel::Gaussian { bandwidth: None } => {
            let mut z = Matrix::zeros(n, u.ncols() + v.ncols());
            z.columns_mut(0, u.ncols()).copy_from(u);
            z.columns_mut(u.ncols(), v.ncols()).copy_from(v);
            k.resolved_for(&z)
        }
        k => *k,
    };
    let w = {
        let mut flat: Vec<f64> = s.s.iter().copied().collect();
        softmax_in_place(&mut flat);
        Matrix::from_column_slice(n, n, &flat)
    };
    let nf = n as f64;
    let mut value = 0.0;
    let mut gw = Matrix::zeros(n, n);
    for (c, a, b) in separable_terms(&k, u, v) {
        // cross: (1/N) Σ_i Σ_ab w_ab A[i,a] B[i,b] = (1/N) tr(A W Bᵀ)
        let awb = &a * &w * &b;
        value += c * (-2.0 / nf * (&a * &w * b.transpose()).trace() + w.dot(&awb));
        gw += (a.transpose() * &b) * (-2.0 * c / nf) + awb * (2.0 * c);
    }
    let dot = w.dot(&gw);
    let grad = w.component_mul(&gw.add_scalar(-dot));
    Ok((value, grad))
}

pub fn loss_joint_mmd(s: &SimilarityBatch, u: &Matrix, v: &Matrix, k: &Kernel) -> Result<f64> {
    Ok(loss_joint_mmd_with_grad(s, u, v, k)?.0)
}

/// Raw paired samples needed by the MMD losses.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub u: &'a Matrix,
    pub v: &'a Matrix,
}

/// Loss value and its exact gradient with respect to every score.
/// Minimum and maximum in independent lanes, so the loop vectorizes.
/// Both are NaN if any entry is.
fn min_max(xs: &[f64]) -> (f64, f64) {
    let mut lo = [f64::INFINITY; 8];
    let mut hi = [f64::NEG_INFINITY; 8];
    let mut nan = false;
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            lo[k] = if c[k] < lo[k] { c[k] } else { lo[k] };
            hi[k] = if c[k] > hi[k] { c[k] } else { hi[k] };
            nan |= c[k].is_nan();
        }
    }
    for &x in rest {
        lo[0] = lo[0].min(x);
        hi[0] = hi[0].max(x);
        nan |= x.is_nan();
    }
    if nan {
        return (f64::NAN, f64::NAN);
    }
    (
        lo.iter().copied().fold(f64::INFINITY, f64::min),
        hi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

fn lane_sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = xs.chunks_exact(8);
    let rest: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    acc.iter().sum::<f64>() + rest
}

/// `exp(x)` for `x ∈ [−700, 0]`, branch-free so that the fused loss loop
/// vectorizes. Relative error stays within a few ulp of `f64::exp`.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const SHIFTER: f64 = 6755399441055744.0; // 1.5 · 2^52, rounds to nearest
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let t = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 12 on |r| ≤ ln2/2
    const C: [f64; 13] = [
        1.0,
        1.0,
        0.5,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let p01 = C[0] + C[1] * r;
    let p23 = C[2] + C[3] * r;
    let p45 = C[4] + C[5] * r;
    let p67 = C[6] + C[7] * r;
    let p89 = C[8] + C[9] * r;
    let p1011 = C[10] + C[11] * r;
    let p = (p01 + p23 * r2) + (p45 + p67 * r2) * r4 + ((p89 + p1011 * r2) + C[12] * r4) * r8;
    let ki = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    p * f64::from_bits((ki.wrapping_add(1023) << 52) as u64)
}

/// Value and score gradient of `Cond(λ_u, λ_v)` from one exponential per entry.
///
/// A single global shift serves both the column and the row normalizers
/// when the score range is small enough for no sum to underflow; wider
/// ranges take the per-line shifts.
fn cond_fused(s: &Matrix, lu: f64, lv: f64, mut buf: Vec<f64>) -> (f64, Matrix) {
    let n = s.nrows();
    let nf = n as f64;
    let d = mean_diag(s);
    let (lo, hi) = min_max(s.as_slice());
    let (a, b) = (0.5 * lu / nf, 0.5 * lv / nf);
    if !(hi - lo <= 600.0) {
        let mut value = 0.0;
        let mut g = Matrix::zeros(n, n);
        if lu != 0.0 {
            let (lme, p) = softmax_columns_with_lme(s);
            value -= 0.5 * lu * (d - lme);
            g += p * a;
        }
        if lv != 0.0 {
            let (lme, p) = softmax_columns_with_lme(&s.transpose());
            value -= 0.5 * lv * (d - lme);
            g += p.transpose() * b;
        }
        for i in 0..n {
            g[(i, i)] -= a + b;
        }
        return (value, g);
    }
    buf.clear();
    buf.resize(n * n, 0.0);
    let mut e = Matrix::from_vec(n, n, buf);
    let mut col = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (j, (ec, sc)) in e
        .as_mut_slice()
        .chunks_exact_mut(n)
        .zip(s.as_slice().chunks_exact(n))
        .enumerate()
    {
        for (y, &x) in ec.iter_mut().zip(sc) {
            *y = exp_nonpositive(x - hi);
        }
        for (r, &y) in row.iter_mut().zip(ec.iter()) {
            *r += y;
        }
        col[j] = lane_sum(ec);
    }
    // mean over lines of log mean exp
    let lme = |z: &[f64]| hi + z.iter().map(|v| (v / nf).ln()).sum::<f64>() / nf;
    let value = -0.5 * lu * (d - lme(&col)) - 0.5 * lv * (d - lme(&row));
    let ra: Vec<f64> = row.iter().map(|w| b / w).collect();
    for (j, ec) in e.as_mut_slice().chunks_exact_mut(n).enumerate() {
        let ca = a / col[j];
        for (x, r) in ec.iter_mut().zip(&ra) {
            *x *= ca + r;
        }
    }
    for i in 0..n {
        e[(i, i)] -= a + b;
    }
    (value, e)
}

pub fn loss_grad_scores(kind: &LossKind, s: &SimilarityBatch, samples: Option<Samples>) -> Result<(f64, Matrix)> {
    loss_grad_scores_in(kind, s, samples, Vec::new())
}

/// As [`loss_grad_scores`]; the Clip and Cond paths build the gradient in `buf`.
pub fn loss_grad_scores_in(
    kind: &LossKind,
    s: &SimilarityBatch,
    samples: Option<Samples>,
    buf: Vec<f64>,
) -> Result<(f64, Matrix)> {
    let n = check_batch(&s.s)?;
    let nf = n as f64;
    let need = || samples.ok_or_else(|| Error::invalid("MMD losses need the raw paired samples"));
    match *kind {
        LossKind::Clip | LossKind::Cond { .. } => {
            let (lu, lv) = match *kind {
                LossKind::Cond { lambda_u, lambda_v } => (lambda_u, lambda_v),
                _ => (1.0, 1.0),
            };
            let (mut value, g) = cond_fused(&s.s, lu, lv, buf);
            if matches!(kind, LossKind::Clip) {
                value += nf.ln();
            }
            Ok((value, g))
        }
        LossKind::Joint => {
            let pos: Vec<f64> = s.s.diagonal().iter().copied().collect();
            let mut flat: Vec<f64> = s.s.iter().copied().collect();
            softmax_in_place(&mut flat);
            let g = Matrix::from_column_slice(n, n, &flat) - Matrix::identity(n, n) / nf;
            Ok((loss_joint(&pos, &s.s)?, g))
        }
        LossKind::CondMmd {
            kernel,
            lambda_u,
            lambda_v,
        } => {
            let x = need()?;
            loss_cond_mmd_with_grad(s, x.u, x.v, &kernel, &kernel, lambda_u, lambda_v)
        }
        LossKind::JointMmd { kernel } => {
            let x = need()?;
            loss_joint_mmd_with_grad(s, x.u, x.v, &kernel)
        }
    }
}
