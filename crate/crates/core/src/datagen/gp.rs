//! Gaussian-process modality pair: noisy point values of a random field
//! against the leading coefficients of its Karhunen-Loève expansion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, PairedDataset};
use crate::error::{Error, Result};
use crate::gaussian::BlockGaussian;
use crate::linalg::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    /// Inverse length scale τ in `λ_j = (j²π² + τ²)^{-α}`.
    pub tau_inv_length: f64,
    pub alpha: f64,
    pub n_modes: usize,
    /// Number of grid points `n_x`, placed at cell centers `(i + ½)/n_x`.
    pub grid_points: usize,
    /// Number of returned coefficients `n_y`.
    pub n_coeffs: usize,
    pub noise_sigma: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            tau_inv_length: 3.0,
            alpha: 2.0,
            n_modes: 1000,
            grid_points: 12,
            n_coeffs: 5,
            noise_sigma: 0.05,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_inv_length > 0.0 && self.alpha > 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("GP τ and α must be positive and σ nonnegative"));
        }
        if self.grid_points == 0 || self.n_coeffs == 0 || self.n_modes < self.n_coeffs {
            return Err(Error::invalid(format!(
                "GP needs grid_points >= 1 and n_modes ({}) >= n_coeffs ({}) >= 1",
                self.n_modes, self.n_coeffs
            )));
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let t2 = self.tau_inv_length * self.tau_inv_length;
        (1..=self.n_modes)
            .map(|j| {
                let j = j as f64;
                (j * j * PI * PI + t2).powf(-self.alpha)
            })
            .collect()
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points as f64;
        (0..self.grid_points).map(|i| (i as f64 + 0.5) / n).collect()
    }

    /// `Φ[i][j] = √λ_j cos(jπ x_i)`, the map from `ξ` to grid values.
    fn feature_map(&self) -> Matrix {
        let lam = self.eigenvalues();
        let grid = self.grid();
        Matrix::from_fn(self.grid_points, self.n_modes, |i, j| {
            lam[j].sqrt() * ((j + 1) as f64 * PI * grid[i]).cos()
        })
    }
}

/// Draws `n` pairs: `u` = field values on the grid plus noise, `v` = raw
/// `ξ_1..ξ_{n_y}` (no basis-norm rescaling).
pub fn gp_modality_pair(cfg: &GpConfig, n: usize, rng: &mut SeededRng) -> Result<PairedDataset> {
    cfg.validate()?;
    let phi = cfg.feature_map();
    let (nx, ny, m) = (cfg.grid_points, cfg.n_coeffs, cfg.n_modes);
    let mut u = Matrix::zeros(n, nx);
    let mut v = Matrix::zeros(n, ny);
    let mut xi = vec![0.0; m];
    for s in 0..n {
        let mut r = rng.fork(s as u64);
        for x in xi.iter_mut() {
            *x = r.normal();
        }
        for i in 0..nx {
            let w: f64 = phi.row(i).iter().zip(&xi).map(|(a, b)| a * b).sum();
            u[(s, i)] = w + cfg.noise_sigma * r.normal();
        }
        for j in 0..ny {
            v[(s, j)] = xi[j];
        }
    }
    PairedDataset::new(
        u,
        v,
        DatasetMeta {
            generator: "gaussian-process".into(),
            params: serde_json::json!({ "config": cfg, "n": n, "basis": "cos(j pi x), unnormalized" }),
            seed: rng.seed(),
        },
    )
}

/// Exact covariance blocks of the generator: `C_uu = ΦΦᵀ + σ²I`,
/// `C_uv = Φ[:, :n_y]`, `C_vv = I`.
pub fn gp_analytic_block(cfg: &GpConfig) -> Result<BlockGaussian> {
    cfg.validate()?;
    let phi = cfg.feature_map();
    let nx = cfg.grid_points;
    let c_uu = &phi * phi.transpose() + Matrix::identity(nx, nx) * cfg.noise_sigma.powi(2);
    let c_uv = phi.columns(0, cfg.n_coeffs).into_owned();
    BlockGaussian::new(
        crate::linalg::symmetrize(&c_uu),
        c_uv,
        Matrix::identity(cfg.n_coeffs, cfg.n_coeffs),
    )
}
