//! Closed-form theory for jointly Gaussian modalities with bilinear and
//! quadratic tiltings: true and model conditionals, population losses as
//! matrix functions, and their (optionally rank-constrained) minimizers.
//!
//! All distributions are centered. Covariance blocks follow the convention
//! `C = [[C_uu, C_uv], [C_vu, C_vv]]` with `u ∈ ℝ^{n_x}` and `v ∈ ℝ^{n_y}`.

use serde::{Deserialize, Serialize};

use crate::datagen::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    inv_pd, logdet_pd, matrix_serde, rank_truncate, svd, sym_inv_sqrt, sym_sqrt, symmetrize, Matrix, SpdMatrix, Vector,
};

/// Centered joint Gaussian on `ℝ^{n_x} × ℝ^{n_y}`.
#[derive(Debug, Clone)]
pub struct BlockGaussian {
    c_uu: SpdMatrix,
    c_uv: Matrix,
    c_vv: SpdMatrix,
}

impl BlockGaussian {
    pub fn new(c_uu: Matrix, c_uv: Matrix, c_vv: Matrix) -> Result<Self> {
        let c_uu = SpdMatrix::new(c_uu)?;
        let c_vv = SpdMatrix::new(c_vv)?;
        if c_uv.nrows() != c_uu.dim() || c_uv.ncols() != c_vv.dim() {
            return Err(Error::dims(
                "BlockGaussian cross-covariance",
                format!("{}x{}", c_uu.dim(), c_vv.dim()),
                format!("{}x{}", c_uv.nrows(), c_uv.ncols()),
            ));
        }
        let g = BlockGaussian { c_uu, c_uv, c_vv };
        SpdMatrix::new(g.full()).map_err(|_| Error::NotPositiveDefinite("joint covariance"))?;
        Ok(g)
    }

    /// Splits a full `(n_x + n_y)`-square covariance.
    pub fn from_joint(c: &Matrix, n_x: usize) -> Result<Self> {
        if !c.is_square() || n_x == 0 || n_x >= c.nrows() {
            return Err(Error::invalid(format!(
                "cannot split a {}x{} covariance at n_x = {n_x}",
                c.nrows(),
                c.ncols()
            )));
        }
        let n = c.nrows();
        let n_y = n - n_x;
        Self::new(
            c.view((0, 0), (n_x, n_x)).into_owned(),
            c.view((0, n_x), (n_x, n_y)).into_owned(),
            c.view((n_x, n_x), (n_y, n_y)).into_owned(),
        )
    }

    /// The two-dimensional example with unit cross-covariance and variance 1.5.
    pub fn example_2d() -> Self {
        let c = Matrix::from_row_slice(2, 2, &[1.5, 1.0, 1.0, 1.5]);
        Self::from_joint(&c, 1).expect("example covariance is PD")
    }

    pub fn n_x(&self) -> usize {
        self.c_uu.dim()
    }

    pub fn n_y(&self) -> usize {
        self.c_vv.dim()
    }

    pub fn c_uu(&self) -> &Matrix {
        self.c_uu.as_matrix()
    }

    pub fn c_uv(&self) -> &Matrix {
        &self.c_uv
    }

    pub fn c_vu(&self) -> Matrix {
        self.c_uv.transpose()
    }

    pub fn c_vv(&self) -> &Matrix {
        self.c_vv.as_matrix()
    }

    pub fn full(&self) -> Matrix {
        let (nx, ny) = (self.n_x(), self.n_y());
        let mut c = Matrix::zeros(nx + ny, nx + ny);
        c.view_mut((0, 0), (nx, nx)).copy_from(self.c_uu());
        c.view_mut((0, nx), (nx, ny)).copy_from(&self.c_uv);
        c.view_mut((nx, 0), (ny, nx)).copy_from(&self.c_vu());
        c.view_mut((nx, nx), (ny, ny)).copy_from(self.c_vv());
        c
    }

    /// Whitened cross-covariance `C_uu^{-1/2} C_uv C_vv^{-1/2}`.
    pub fn whitened_cross(&self) -> Result<Matrix> {
        Ok(sym_inv_sqrt(self.c_uu())? * &self.c_uv * sym_inv_sqrt(self.c_vv())?)
    }

    fn check_a(&self, a: &Matrix, context: &'static str) -> Result<()> {
        if a.nrows() != self.n_x() || a.ncols() != self.n_y() {
            return Err(Error::dims(
                context,
                format!("{}x{}", self.n_x(), self.n_y()),
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        Ok(())
    }

    fn check_rank(&self, r: Option<usize>) -> Result<()> {
        let max = self.n_x().min(self.n_y());
        match r {
            Some(r) if r > max => Err(Error::RankOutOfRange { rank: r, max }),
            _ => Ok(()),
        }
    }
}

/// Linear-Gaussian conditional `N(gain · x, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianConditionalMap {
    pub gain: Matrix,
    pub cov: SpdMatrix,
}

/// Parameters `A = GᵀH`, `B = GᵀG`, `C = HᵀH` of the quadratic tilting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticTiltingParams {
    #[serde(with = "matrix_serde")]
    pub a: Matrix,
    #[serde(with = "matrix_serde")]
    pub b: Matrix,
    #[serde(with = "matrix_serde")]
    pub c: Matrix,
}

#[derive(Debug, Clone)]
pub enum ModelTilting {
    /// `exp(uᵀ A v)`, the unnormalized linear-encoder inner product.
    CosineLinear(Matrix),
    /// `exp(-½|Gu - Hv|²)` expanded into `A`, `B`, `C`.
    Quadratic(QuadraticTiltingParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    UGivenV,
    VGivenU,
}

pub fn conditional_u_given_v(g: &BlockGaussian) -> GaussianConditionalMap {
    let gain = g.c_vv.solve(&g.c_vu()).transpose();
    let cov = g.c_uu() - &gain * g.c_vu();
    GaussianConditionalMap {
        gain,
        cov: SpdMatrix::new(symmetrize(&cov)).expect("Schur complement of a PD matrix is PD"),
    }
}

pub fn conditional_v_given_u(g: &BlockGaussian) -> GaussianConditionalMap {
    let gain = g.c_uu.solve(&g.c_uv).transpose();
    let cov = g.c_vv() - &gain * &g.c_uv;
    GaussianConditionalMap {
        gain,
        cov: SpdMatrix::new(symmetrize(&cov)).expect("Schur complement of a PD matrix is PD"),
    }
}

/// Population conditional loss of the bilinear tilting, up to an
/// `A`-independent constant: `-Tr(A C_vu) + ½ Tr(Aᵀ C_uu A C_vv)`.
pub fn cond_loss_closed(a: &Matrix, g: &BlockGaussian) -> Result<f64> {
    g.check_a(a, "cond_loss_closed")?;
    let lin = (a * g.c_vu()).trace();
    let quad = (a.transpose() * g.c_uu() * a * g.c_vv()).trace();
    Ok(-lin + 0.5 * quad)
}

/// Population joint loss of the bilinear tilting:
/// `-Tr(A C_vu) - ½ log|I - C_vv Aᵀ C_uu A|`.
pub fn joint_loss_closed(a: &Matrix, g: &BlockGaussian) -> Result<f64> {
    g.check_a(a, "joint_loss_closed")?;
    // Same determinant through the symmetric similarity transform by C_vv^{1/2}.
    let s = sym_sqrt(g.c_vv())?;
    let inner = Matrix::identity(g.n_y(), g.n_y()) - &s * a.transpose() * g.c_uu() * a * &s;
    let logdet =
        logdet_pd(&inner).map_err(|_| Error::DivergentNormalizer("I - C_vv Aᵀ C_uu A is not positive definite"))?;
    Ok(-(a * g.c_vu()).trace() - 0.5 * logdet)
}

/// Minimizer of [`cond_loss_closed`], optionally over matrices of rank ≤ r.
pub fn minimizer_cond(g: &BlockGaussian, r: Option<usize>) -> Result<Matrix> {
    g.check_rank(r)?;
    let iu = sym_inv_sqrt(g.c_uu())?;
    let iv = sym_inv_sqrt(g.c_vv())?;
    let w = &iu * g.c_uv() * &iv;
    let w = match r {
        Some(r) => rank_truncate(&w, r)?,
        None => w,
    };
    Ok(&iu * w * &iv)
}

/// Singular-value shrinkage `σ ↦ σ⁻¹(½√(1+4σ²) − ½)`, extended by `h(0) = 0`.
pub fn shrinkage_h(sigma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::invalid(format!("h is defined on [0, 1], got {sigma}")));
    }
    // Rationalized form; avoids cancellation for small σ.
    Ok(2.0 * sigma / ((1.0 + 4.0 * sigma * sigma).sqrt() + 1.0))
}

/// Minimizer of [`joint_loss_closed`], optionally over matrices of rank ≤ r.
pub fn minimizer_joint(g: &BlockGaussian, r: Option<usize>) -> Result<Matrix> {
    g.check_rank(r)?;
    let iu = sym_inv_sqrt(g.c_uu())?;
    let iv = sym_inv_sqrt(g.c_vv())?;
    let f = svd(&(&iu * g.c_uv() * &iv));
    let keep = r.unwrap_or(f.singular_values.len());
    let mut d = Vector::zeros(f.singular_values.len());
    for (k, &s) in f.singular_values.iter().enumerate().take(keep) {
        // Whitened singular values are < 1 for a PD joint covariance; clamp roundoff.
        d[k] = shrinkage_h(s.min(1.0))?;
    }
    let m = &f.u * Matrix::from_diagonal(&d) * &f.v_t;
    Ok(&iu * m * &iv)
}

/// Settings for the numerical rank-constrained quadratic-tilting solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Iteration cap for the backtracking-gradient refinement after Adam.
    pub refine_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            learning_rate: 1e-2,
            max_iterations: 5000,
            tolerance: 1e-8,
            refine_iterations: 200_000,
        }
    }
}

/// Reduced objective in `B` after `A` has been optimized out, with `P = B + C_uu⁻¹`:
/// `Tr(P S) − log|P S| + Tr(M₀ᵀ P M₀) − Σ_{top r} eig(M₀ᵀ P M₀)`.
struct QuadObjective {
    cuu_inv: Matrix,
    s: Matrix,
    logdet_s: f64,
    m0: Matrix,
    r: usize,
}

impl QuadObjective {
    fn new(g: &BlockGaussian, r: usize) -> Result<Self> {
        let s = conditional_u_given_v(g).cov.into_matrix();
        Ok(QuadObjective {
            cuu_inv: g.c_uu.inverse(),
            logdet_s: logdet_pd(&s)?,
            s,
            m0: g.c_uv() * sym_inv_sqrt(g.c_vv())?,
            r,
        })
    }

    fn p(&self, gm: &Matrix) -> Matrix {
        symmetrize(&(gm.transpose() * gm + &self.cuu_inv))
    }

    /// Value and gradient with respect to the factor `G` of `B = GᵀG`.
    fn eval(&self, gm: &Matrix) -> Result<(f64, Matrix)> {
        let p = self.p(gm);
        let k = symmetrize(&(self.m0.transpose() * &p * &self.m0));
        let eig = nalgebra::SymmetricEigen::new(k.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top: f64 = order.iter().take(self.r).map(|&i| eig.eigenvalues[i]).sum();
        let value = (&p * &self.s).trace() - logdet_pd(&p)? - self.logdet_s + k.trace() - top;

        let mut qq = Matrix::zeros(k.nrows(), k.nrows());
        for &i in order.iter().take(self.r) {
            let q = eig.eigenvectors.column(i);
            qq += q * q.transpose();
        }
        let dp = &self.s - inv_pd(&p)? + &self.m0 * self.m0.transpose() - &self.m0 * qq * self.m0.transpose();
        let grad = gm * symmetrize(&dp) * 2.0;
        Ok((value, grad))
    }
}

/// Minimizer of the one-sided (2, 0) conditional loss for the quadratic
/// tilting. Without a rank the closed form is returned; with rank `r` the
/// reduced objective is minimized over `B = GᵀG`, `G ∈ ℝ^{r×n_x}`, and `A`
/// follows from `B`.
pub fn minimizer_quadratic_onesided(
    g: &BlockGaussian,
    r: Option<usize>,
    solver: &SolverConfig,
) -> Result<QuadraticTiltingParams> {
    g.check_rank(r)?;
    let cuu_inv = g.c_uu.inverse();
    let b_full = {
        let cvu_cond = conditional_v_given_u(g).cov;
        let x = &cuu_inv * g.c_uv();
        symmetrize(&(&x * cvu_cond.inverse() * x.transpose()))
    };
    let c = Matrix::zeros(g.n_y(), g.n_y());
    let Some(r) = r else {
        let s_inv = conditional_u_given_v(g).cov.inverse();
        let a = s_inv * g.c_uv() * g.c_vv.inverse();
        return Ok(QuadraticTiltingParams { a, b: b_full, c });
    };

    let obj = QuadObjective::new(g, r)?;
    let mut gm = factor_truncated(&b_full, r);
    let b = symmetrize(&(solve_factor(&obj, &mut gm, solver)?));
    let p = symmetrize(&(&b + &cuu_inv));
    let ph = sym_sqrt(&p)?;
    let a = &ph * rank_truncate(&(&ph * &obj.m0), r)? * sym_inv_sqrt(g.c_vv())?;
    Ok(QuadraticTiltingParams { a, b, c })
}

/// `G` with `GᵀG` equal to the best rank-`r` PSD approximation of `b`.
fn factor_truncated(b: &Matrix, r: usize) -> Matrix {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(b));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mut gm = Matrix::zeros(r, b.nrows());
    for (row, &i) in order.iter().take(r).enumerate() {
        let scale = eig.eigenvalues[i].max(0.0).sqrt();
        gm.set_row(row, &(eig.eigenvectors.column(i).transpose() * scale));
    }
    gm
}

/// Adam followed by backtracking gradient descent. Returns `B = GᵀG`.
fn solve_factor(obj: &QuadObjective, gm: &mut Matrix, cfg: &SolverConfig) -> Result<Matrix> {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let n = gm.len();
    let mut m = Matrix::zeros(gm.nrows(), gm.ncols());
    let mut v = Matrix::zeros(gm.nrows(), gm.ncols());
    let (mut f, mut grad) = obj.eval(gm)?;
    let mut best = (f, gm.clone());
    for t in 1..=cfg.max_iterations {
        if grad.norm() <= cfg.tolerance {
            return Ok(gm.transpose() * &*gm);
        }
        m = &m * b1 + &grad * (1.0 - b1);
        v = &v * b2 + grad.component_mul(&grad) * (1.0 - b2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for i in 0..n {
            gm[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
        (f, grad) = obj.eval(gm)?;
        if f < best.0 {
            best = (f, gm.clone());
        }
    }

    // Fixed-step Adam hovers around the optimum at a scale set by the step
    // size, so finish with a monotone line-search descent from its best iterate.
    *gm = best.1;
    (f, grad) = obj.eval(gm)?;
    let mut step = 1.0;
    for _ in 0..cfg.refine_iterations {
        let gn2 = grad.norm_squared();
        if gn2.sqrt() <= cfg.tolerance {
            return Ok(gm.transpose() * &*gm);
        }
        step *= 2.0;
        loop {
            let trial = &*gm - &grad * step;
            let (ft, gt) = obj.eval(&trial)?;
            if ft <= f - 0.5 * step * gn2 {
                *gm = trial;
                f = ft;
                grad = gt;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::SolverDidNotConverge {
                    iterations: cfg.max_iterations,
                    grad_norm: gn2.sqrt(),
                });
            }
        }
    }
    let grad_norm = grad.norm();
    if grad_norm <= cfg.tolerance {
        Ok(gm.transpose() * &*gm)
    } else {
        Err(Error::SolverDidNotConverge {
            iterations: cfg.max_iterations + cfg.refine_iterations,
            grad_norm,
        })
    }
}

/// Conditional of the tilted model on the requested side.
pub fn model_conditional(tilting: &ModelTilting, side: Side, g: &BlockGaussian) -> Result<GaussianConditionalMap> {
    match tilting {
        ModelTilting::CosineLinear(a) => {
            g.check_a(a, "model_conditional")?;
            Ok(match side {
                Side::UGivenV => GaussianConditionalMap {
                    gain: g.c_uu() * a,
                    cov: g.c_uu.clone(),
                },
                Side::VGivenU => GaussianConditionalMap {
                    gain: g.c_vv() * a.transpose(),
                    cov: g.c_vv.clone(),
                },
            })
        }
        ModelTilting::Quadratic(q) => {
            g.check_a(&q.a, "model_conditional")?;
            let (prec, a) = match side {
                Side::UGivenV => (&q.b + g.c_uu.inverse(), q.a.clone()),
                Side::VGivenU => (&q.c + g.c_vv.inverse(), q.a.transpose()),
            };
            let cov = inv_pd(&prec)?;
            Ok(GaussianConditionalMap {
                gain: &cov * a,
                cov: SpdMatrix::new(cov)?,
            })
        }
    }
}

/// Marginal covariance of `u` under the bilinear-tilting model,
/// `C_uu + C_uu A (C_vv⁻¹ − Aᵀ C_uu A)⁻¹ Aᵀ C_uu`.
pub fn model_marginal_u(a: &Matrix, g: &BlockGaussian) -> Result<SpdMatrix> {
    g.check_a(a, "model_marginal_u")?;
    let inner = g.c_vv.inverse() - a.transpose() * g.c_uu() * a;
    let inner_inv =
        inv_pd(&inner).map_err(|_| Error::DivergentNormalizer("C_vv⁻¹ − Aᵀ C_uu A is not positive definite"))?;
    let x = g.c_uu() * a;
    SpdMatrix::new(symmetrize(&(g.c_uu() + &x * inner_inv * x.transpose())))
}

/// `KL(N(m1, c1) ‖ N(m2, c2))`.
pub fn kl_gaussians(m1: &Vector, c1: &Matrix, m2: &Vector, c2: &Matrix) -> Result<f64> {
    let d = m1.len();
    for (name, n) in [("m2", m2.len()), ("c1", c1.nrows()), ("c2", c2.nrows())] {
        if n != d {
            return Err(Error::dims("kl_gaussians", d, format!("{n} ({name})")));
        }
    }
    let c2_inv = inv_pd(c2)?;
    let dm = m2 - m1;
    let maha = (dm.transpose() * &c2_inv * &dm)[(0, 0)];
    Ok(0.5 * ((&c2_inv * c1).trace() - d as f64 + logdet_pd(c2)? - logdet_pd(c1)? + maha))
}

/// `E[exp(½ zᵀ B z + cᵀ z)]` for `z ~ N(m, Λ)`.
pub fn exp_quadratic_expectation(m: &Vector, lambda: &Matrix, b: &Matrix, c: &Vector) -> Result<f64> {
    let d = m.len();
    if lambda.nrows() != d || b.nrows() != d || b.ncols() != d || c.len() != d {
        return Err(Error::dims(
            "exp_quadratic_expectation",
            d,
            "inconsistent operand sizes",
        ));
    }
    let lam_inv = inv_pd(lambda)?;
    let prec = symmetrize(&(&lam_inv - symmetrize(b)));
    let prec_inv = inv_pd(&prec).map_err(|_| Error::DivergentNormalizer("Λ⁻¹ − B is not positive definite"))?;
    let w = c + &lam_inv * m;
    let quad = (w.transpose() * prec_inv * &w)[(0, 0)];
    let base = (m.transpose() * &lam_inv * m)[(0, 0)];
    let log_det = logdet_pd(lambda)? + logdet_pd(&prec)?;
    Ok((-0.5 * log_det + 0.5 * quad - 0.5 * base).exp())
}

/// Factors `B = GᵀG` with `G` the PD square root and solves `GᵀH = A`.
pub fn recover_encoders(q: &QuadraticTiltingParams) -> Result<(Matrix, Matrix)> {
    if q.a.nrows() > q.a.ncols() {
        return Err(Error::invalid(format!(
            "encoder recovery needs n_x <= n_y, got {}x{}",
            q.a.nrows(),
            q.a.ncols()
        )));
    }
    let gm = sym_sqrt(&q.b)?;
    let h = SpdMatrix::new(gm.clone())?.solve(&q.a);
    Ok((gm, h))
}

/// Plug-in covariance blocks from a paired sample (centered, divided by N).
pub fn empirical_block_gaussian(data: &PairedDataset) -> Result<BlockGaussian> {
    let n = data.len();
    let (nx, ny) = (data.u.ncols(), data.v.ncols());
    if n < nx + ny + 1 {
        return Err(Error::NotPositiveDefinite("too few samples for a PD covariance"));
    }
    let mut z = Matrix::zeros(n, nx + ny);
    z.view_mut((0, 0), (n, nx)).copy_from(&data.u);
    z.view_mut((0, nx), (n, ny)).copy_from(&data.v);
    let mean = z.row_mean();
    for mut row in z.row_iter_mut() {
        row -= &mean;
    }
    let c = symmetrize(&(z.transpose() * &z / n as f64));
    BlockGaussian::from_joint(&c, nx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    fn scalar(m: &Matrix) -> f64 {
        assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub(crate) fn random_block(rng: &mut SeededRng, nx: usize, ny: usize) -> BlockGaussian {
        let n = nx + ny;
        let a = rng.normal_matrix(n, n);
        let c = &a * a.transpose() + Matrix::identity(n, n) * 0.3;
        BlockGaussian::from_joint(&c, nx).unwrap()
    }

    fn min_eig(m: &Matrix) -> f64 {
        nalgebra::SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
    }

    #[test]
    fn example_conditionals() {
        let g = BlockGaussian::example_2d();
        let c = conditional_u_given_v(&g);
        assert!((scalar(&c.gain) - 2.0 / 3.0).abs() < 1e-14);
        assert!((scalar(c.cov.as_matrix()) - 5.0 / 6.0).abs() < 1e-14);
        let c = conditional_v_given_u(&g);
        assert!((scalar(&c.gain) - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn independent_blocks() {
        let g = BlockGaussian::new(
            Matrix::identity(2, 2) * 2.0,
            Matrix::zeros(2, 3),
            Matrix::identity(3, 3),
        )
        .unwrap();
        let c = conditional_u_given_v(&g);
        assert_eq!(c.gain.amax(), 0.0);
        assert_eq!(c.cov.as_matrix(), g.c_uu());
        assert_eq!(minimizer_cond(&g, None).unwrap().amax(), 0.0);
        assert_eq!(minimizer_joint(&g, None).unwrap().amax(), 0.0);
        let q = minimizer_quadratic_onesided(&g, None, &SolverConfig::default()).unwrap();
        assert_eq!(q.a.amax(), 0.0);
        assert_eq!(q.b.amax(), 0.0);
    }

    #[test]
    fn conditional_cov_below_marginal() {
        let mut rng = SeededRng::new(1);
        let g = random_block(&mut rng, 6, 4);
        let c = conditional_u_given_v(&g);
        assert!(min_eig(c.cov.as_matrix()) > 0.0);
        assert!(min_eig(&(g.c_uu() - c.cov.as_matrix())) > -1e-10);
    }

    #[test]
    fn closed_losses_on_example() {
        let g = BlockGaussian::example_2d();
        let a = |x: f64| Matrix::from_element(1, 1, x);
        assert_eq!(cond_loss_closed(&a(0.0), &g).unwrap(), 0.0);
        assert!((cond_loss_closed(&a(4.0 / 9.0), &g).unwrap() + 2.0 / 9.0).abs() < 1e-14);
        assert_eq!(joint_loss_closed(&a(0.0), &g).unwrap(), 0.0);
        let want = -1.0 / 3.0 - 0.5 * 0.75f64.ln();
        assert!((joint_loss_closed(&a(1.0 / 3.0), &g).unwrap() - want).abs() < 1e-14);
        assert!((want + 0.18953).abs() < 1e-4);
        assert!(matches!(
            joint_loss_closed(&a(1.0), &g),
            Err(Error::DivergentNormalizer(_))
        ));
    }

    #[test]
    fn minimizers_on_example_match_grid_search() {
        let g = BlockGaussian::example_2d();
        let grid_min = |f: &dyn Fn(f64) -> Option<f64>| {
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=400_000 {
                let x = -2.0 + 4.0 * k as f64 / 400_000.0;
                if let Some(v) = f(x) {
                    if v < best.0 {
                        best = (v, x);
                    }
                }
            }
            best.1
        };
        let a_cond = scalar(&minimizer_cond(&g, None).unwrap());
        assert!((a_cond - 4.0 / 9.0).abs() < 1e-14);
        let x = grid_min(&|x| cond_loss_closed(&Matrix::from_element(1, 1, x), &g).ok());
        assert!((x - a_cond).abs() < 2e-5);

        let a_joint = scalar(&minimizer_joint(&g, None).unwrap());
        assert!((a_joint - 1.0 / 3.0).abs() < 1e-14);
        let x = grid_min(&|x| joint_loss_closed(&Matrix::from_element(1, 1, x), &g).ok());
        assert!((x - a_joint).abs() < 2e-5);
    }

    #[test]
    fn full_rank_truncation_is_unconstrained() {
        let mut rng = SeededRng::new(2);
        let g = random_block(&mut rng, 3, 4);
        let full = minimizer_cond(&g, None).unwrap();
        let r3 = minimizer_cond(&g, Some(3)).unwrap();
        assert!((full - r3).amax() < 1e-10);
        assert!(matches!(
            minimizer_cond(&g, Some(4)),
            Err(Error::RankOutOfRange { rank: 4, max: 3 })
        ));
    }

    #[test]
    fn cond_minimizer_is_local_min() {
        let g = BlockGaussian::example_2d();
        let a = minimizer_cond(&g, None).unwrap();
        let f0 = cond_loss_closed(&a, &g).unwrap();
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            let d = rng.normal_matrix(1, 1) * 1e-3;
            assert!(f0 <= cond_loss_closed(&(&a + d), &g).unwrap());
        }
    }

    #[test]
    fn quadratic_on_example() {
        let g = BlockGaussian::example_2d();
        let q = minimizer_quadratic_onesided(&g, None, &SolverConfig::default()).unwrap();
        assert!((scalar(&q.a) - 0.8).abs() < 1e-14);
        assert!((scalar(&q.b) - 8.0 / 15.0).abs() < 1e-14);
        let p_inv = 1.0 / (scalar(&q.b) + 1.0 / 1.5);
        assert!((p_inv - 5.0 / 6.0).abs() < 1e-14);
        assert!((p_inv * scalar(&q.a) - 2.0 / 3.0).abs() < 1e-14);

        let qr = minimizer_quadratic_onesided(&g, Some(1), &SolverConfig::default()).unwrap();
        assert!((scalar(&qr.b) - 8.0 / 15.0).abs() < 1e-4);
        assert!((scalar(&qr.a) - 0.8).abs() < 1e-4);
    }

    #[test]
    fn quadratic_solver_finds_feasible_optimum_from_perturbed_start() {
        let mut rng = SeededRng::new(4);
        let g = random_block(&mut rng, 2, 3);
        let q = minimizer_quadratic_onesided(&g, None, &SolverConfig::default()).unwrap();
        let obj = QuadObjective::new(&g, 2).unwrap();
        let mut gm = sym_sqrt(&(&q.b + Matrix::identity(2, 2) * 1e-9)).unwrap() + rng.normal_matrix(2, 2) * 0.1;
        let b = solve_factor(&obj, &mut gm, &SolverConfig::default()).unwrap();
        assert!((b - &q.b).amax() < 1e-4);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(5);
        let g = random_block(&mut rng, 3, 3);
        let obj = QuadObjective::new(&g, 2).unwrap();
        let gm = rng.normal_matrix(2, 3) * 0.5;
        let (_, grad) = obj.eval(&gm).unwrap();
        let h = 1e-6;
        for i in 0..gm.len() {
            let mut p = gm.clone();
            p[i] += h;
            let mut m = gm.clone();
            m[i] -= h;
            let fd = (obj.eval(&p).unwrap().0 - obj.eval(&m).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn quadratic_rank_constrained_beats_truncated_start() {
        let mut rng = SeededRng::new(6);
        let g = random_block(&mut rng, 3, 3);
        let obj = QuadObjective::new(&g, 1).unwrap();
        let q = minimizer_quadratic_onesided(&g, None, &SolverConfig::default()).unwrap();
        let start = factor_truncated(&q.b, 1);
        let f_start = obj.eval(&start).unwrap().0;
        let qr = minimizer_quadratic_onesided(&g, Some(1), &SolverConfig::default()).unwrap();
        let gm = factor_truncated(&qr.b, 1);
        let (f_end, grad) = obj.eval(&gm).unwrap();
        assert!(f_end <= f_start + 1e-12);
        assert!(grad.norm() < 1e-6);
    }

    #[test]
    fn h_values() {
        assert!((shrinkage_h(1.0).unwrap() - 0.5 * (5f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((shrinkage_h(2.0 / 3.0).unwrap() - 0.5).abs() < 1e-15);
        let r = shrinkage_h(1e-4).unwrap() / 1e-4;
        assert!((1.0 - 1e-6..=1.0).contains(&r));
        assert_eq!(shrinkage_h(0.0).unwrap(), 0.0);
        assert!(shrinkage_h(1.5).is_err());
        assert!(shrinkage_h(-0.1).is_err());
    }

    #[test]
    fn h_shrinks_whitened_spectrum() {
        let mut rng = SeededRng::new(7);
        let g = random_block(&mut rng, 3, 2);
        let w = svd(&g.whitened_cross().unwrap()).singular_values;
        let iu_inv = sym_sqrt(g.c_uu()).unwrap();
        let iv_inv = sym_sqrt(g.c_vv()).unwrap();
        let aj = minimizer_joint(&g, None).unwrap();
        let d = svd(&(&iu_inv * aj * &iv_inv)).singular_values;
        for k in 0..2 {
            assert!(d[k] < w[k]);
        }
    }

    #[test]
    fn model_conditionals_on_example() {
        let g = BlockGaussian::example_2d();
        let a = minimizer_cond(&g, None).unwrap();
        let c = model_conditional(&ModelTilting::CosineLinear(a), Side::UGivenV, &g).unwrap();
        assert!((scalar(&c.gain) - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(scalar(c.cov.as_matrix()), 1.5);

        let q = minimizer_quadratic_onesided(&g, None, &SolverConfig::default()).unwrap();
        let c = model_conditional(&ModelTilting::Quadratic(q), Side::UGivenV, &g).unwrap();
        assert!((scalar(&c.gain) - 2.0 / 3.0).abs() < 1e-12);
        assert!((scalar(c.cov.as_matrix()) - 5.0 / 6.0).abs() < 1e-12);

        let c = model_conditional(&ModelTilting::CosineLinear(Matrix::zeros(1, 1)), Side::VGivenU, &g).unwrap();
        assert_eq!(scalar(&c.gain), 0.0);
        assert_eq!(scalar(c.cov.as_matrix()), 1.5);
    }

    #[test]
    fn marginals_on_example() {
        let g = BlockGaussian::example_2d();
        let m = |a: Matrix| scalar(model_marginal_u(&a, &g).unwrap().as_matrix());
        assert_eq!(m(Matrix::zeros(1, 1)), 1.5);
        assert!((m(minimizer_cond(&g, None).unwrap()) - 2.7).abs() < 1e-12);
        assert!((m(minimizer_joint(&g, None).unwrap()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let z = Vector::zeros(2);
        let i = Matrix::identity(2, 2);
        assert!(kl_gaussians(&z, &i, &z, &i).unwrap().abs() < 1e-15);
        let m0 = Vector::from_element(1, 0.0);
        let m1 = Vector::from_element(1, 1.0);
        let one = Matrix::identity(1, 1);
        assert!((kl_gaussians(&m0, &one, &m1, &one).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exp_quadratic_examples() {
        let z = Vector::zeros(2);
        let lam = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = exp_quadratic_expectation(&z, &lam, &Matrix::zeros(2, 2), &z).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let one = Vector::zeros(1);
        let v =
            exp_quadratic_expectation(&one, &Matrix::identity(1, 1), &Matrix::from_element(1, 1, 0.5), &one).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-14);
        assert!(matches!(
            exp_quadratic_expectation(&one, &Matrix::identity(1, 1), &Matrix::identity(1, 1), &one),
            Err(Error::DivergentNormalizer(_))
        ));
    }

    #[test]
    fn exp_quadratic_linear_term_matches_mgf() {
        // With B = 0 the expectation is the Gaussian MGF exp(cᵀm + ½cᵀΛc).
        let m = Vector::from_vec(vec![0.3, -1.0]);
        let lam = Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let c = Vector::from_vec(vec![0.7, 0.4]);
        let want = (c.dot(&m) + 0.5 * (c.transpose() * &lam * &c)[(0, 0)]).exp();
        let got = exp_quadratic_expectation(&m, &lam, &Matrix::zeros(2, 2), &c).unwrap();
        assert!((got / want - 1.0).abs() < 1e-13);
    }

    #[test]
    fn recover_examples() {
        let q = QuadraticTiltingParams {
            a: Matrix::identity(2, 2),
            b: Matrix::identity(2, 2),
            c: Matrix::zeros(2, 2),
        };
        let (gm, h) = recover_encoders(&q).unwrap();
        assert!((gm - Matrix::identity(2, 2)).amax() < 1e-15);
        assert!((h - Matrix::identity(2, 2)).amax() < 1e-15);

        let q = QuadraticTiltingParams {
            a: Matrix::from_element(1, 1, 0.8),
            b: Matrix::from_element(1, 1, 8.0 / 15.0),
            c: Matrix::zeros(1, 1),
        };
        let (gm, h) = recover_encoders(&q).unwrap();
        let s = (8.0f64 / 15.0).sqrt();
        assert!((scalar(&gm) - s).abs() < 1e-15);
        assert!((scalar(&h) - 0.8 / s).abs() < 1e-14);
    }

    #[test]
    fn recover_round_trip() {
        let mut rng = SeededRng::new(8);
        for _ in 0..20 {
            let x = rng.normal_matrix(3, 3);
            let b = &x * x.transpose() + Matrix::identity(3, 3) * 0.1;
            let a = rng.normal_matrix(3, 5);
            let q = QuadraticTiltingParams {
                a: a.clone(),
                b: b.clone(),
                c: Matrix::zeros(5, 5),
            };
            let (gm, h) = recover_encoders(&q).unwrap();
            assert!((gm.transpose() * &h - a).amax() < 1e-10);
            assert!((gm.transpose() * &gm - b).amax() < 1e-10);
        }
    }

    #[test]
    fn empirical_blocks_converge() {
        let g = BlockGaussian::example_2d();
        let data = crate::datagen::sample_block_gaussian(&g, 100_000, &mut SeededRng::new(9)).unwrap();
        let e = empirical_block_gaussian(&data).unwrap();
        assert!(((e.full() - g.full()).amax() / 1.5) < 0.03);
        let a = scalar(&minimizer_cond(&e, None).unwrap());
        assert!((a / (4.0 / 9.0) - 1.0).abs() < 0.05);

        let one = crate::datagen::sample_block_gaussian(&g, 1, &mut SeededRng::new(9)).unwrap();
        assert!(empirical_block_gaussian(&one).is_err());
    }
}
