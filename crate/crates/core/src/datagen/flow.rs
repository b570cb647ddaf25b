//! Incompressible flow on the unit torus from a random streamfunction, and
//! particle trajectories advected through it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, PairedDataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng, Vector};

/// Streamfunction `ψ(x,t) = Re Σ_k ψ_k exp(iω_k t) exp(2πi k·x)` over
/// `k ∈ {−m..m}²`, and the integration settings for its trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub wavenumber_bound: i32,
    pub n_freqs: usize,
    pub omega: Vec<f64>,
    pub x0: [f64; 2],
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
}

impl FlowConfig {
    /// `K = (2m+1)²` modes with frequencies uniform on `[0, 20π/T]`.
    pub fn with_random_frequencies(
        wavenumber_bound: i32,
        dt: f64,
        t_final: f64,
        record_stride: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if wavenumber_bound < 0 {
            return Err(Error::invalid("wavenumber bound must be nonnegative"));
        }
        let side = (2 * wavenumber_bound + 1) as usize;
        let k = side * side;
        let hi = 2.0 * PI / t_final * 10.0;
        let omega = (0..k).map(|_| rng.uniform_range(0.0, hi)).collect();
        let cfg = FlowConfig {
            wavenumber_bound,
            n_freqs: k,
            omega,
            x0: [0.75, 0.75],
            dt,
            t_final,
            record_stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let side = (2 * self.wavenumber_bound.max(0) + 1) as usize;
        if self.wavenumber_bound < 0 || self.n_freqs != side * side || self.omega.len() != self.n_freqs {
            return Err(Error::invalid(format!(
                "flow needs (2m+1)^2 = {} modes and as many frequencies, got K = {} and {} frequencies",
                side * side,
                self.n_freqs,
                self.omega.len()
            )));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0) || self.record_stride == 0 {
            return Err(Error::invalid("flow needs dt > 0, t_final > 0 and record_stride >= 1"));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::invalid(format!("t_final / dt = {steps} is not an integer")));
        }
        if self.x0.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(Error::invalid("x0 must lie in [0, 1)^2"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Number of recorded positions `J_v`.
    pub fn n_records(&self) -> usize {
        self.n_steps() / self.record_stride
    }

    fn wavevectors(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let m = self.wavenumber_bound;
        (-m..=m).flat_map(move |a| (-m..=m).map(move |b| (a as f64, b as f64)))
    }
}

/// Velocity `w = J∇ψ = (−∂₂ψ, ∂₁ψ)`. `coeffs` holds `(Re ψ_k, Im ψ_k)` pairs.
pub fn velocity_eval(coeffs: &[f64], cfg: &FlowConfig, t: f64, x: [f64; 2]) -> [f64; 2] {
    let mut grad = [0.0; 2];
    for (idx, (k1, k2)) in cfg.wavevectors().enumerate() {
        let (re, im) = (coeffs[2 * idx], coeffs[2 * idx + 1]);
        if re == 0.0 && im == 0.0 {
            continue;
        }
        let phase = cfg.omega[idx] * t + 2.0 * PI * (k1 * x[0] + k2 * x[1]);
        let (s, c) = phase.sin_cos();
        // Re[(re + i im)(cos + i sin) · 2πi k] = −2π k (re sin + im cos)
        let common = -2.0 * PI * (re * s + im * c);
        grad[0] += common * k1;
        grad[1] += common * k2;
    }
    [-grad[1], grad[0]]
}

fn rk4_step(coeffs: &[f64], cfg: &FlowConfig, t: f64, x: [f64; 2], h: f64) -> [f64; 2] {
    let add = |x: [f64; 2], k: [f64; 2], s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
    let k1 = velocity_eval(coeffs, cfg, t, x);
    let k2 = velocity_eval(coeffs, cfg, t + 0.5 * h, add(x, k1, 0.5 * h));
    let k3 = velocity_eval(coeffs, cfg, t + 0.5 * h, add(x, k2, 0.5 * h));
    let k4 = velocity_eval(coeffs, cfg, t + h, add(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Integrates a trajectory for the given coefficients without wrapping
/// (used to compare step sizes) or with wrapping.
pub(crate) fn integrate(coeffs: &[f64], cfg: &FlowConfig, wrap_each_step: bool) -> Result<Matrix> {
    let steps = cfg.n_steps();
    let mut out = Matrix::zeros(cfg.n_records(), 2);
    let mut x = cfg.x0;
    for n in 0..steps {
        x = rk4_step(coeffs, cfg, n as f64 * cfg.dt, x, cfg.dt);
        if wrap_each_step {
            x = [wrap(x[0]), wrap(x[1])];
        }
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::invalid(format!("trajectory left finite range at step {n}")));
        }
        if (n + 1) % cfg.record_stride == 0 && (n + 1) / cfg.record_stride <= out.nrows() {
            let j = (n + 1) / cfg.record_stride - 1;
            out[(j, 0)] = x[0];
            out[(j, 1)] = x[1];
        }
    }
    Ok(out)
}

/// Standard complex normal coefficients, conjugate-symmetrized over `k ↔ −k`.
pub(crate) fn draw_coefficients(cfg: &FlowConfig, rng: &mut SeededRng) -> Vector {
    let k = cfg.n_freqs;
    let sd = std::f64::consts::FRAC_1_SQRT_2;
    let raw: Vec<(f64, f64)> = (0..k).map(|_| (sd * rng.normal(), sd * rng.normal())).collect();
    let mut out = Vector::zeros(2 * k);
    for idx in 0..k {
        // The wavevector grid is symmetric, so −k sits at the mirrored index.
        let mirror = k - 1 - idx;
        out[2 * idx] = 0.5 * (raw[idx].0 + raw[mirror].0);
        out[2 * idx + 1] = 0.5 * (raw[idx].1 - raw[mirror].1);
    }
    out
}

/// One Eulerian/Lagrangian pair: coefficients and the `J_v × 2` wrapped trajectory.
pub fn lagrangian_pair(cfg: &FlowConfig, rng: &mut SeededRng) -> Result<(Vector, Matrix)> {
    cfg.validate()?;
    let coeffs = draw_coefficients(cfg, rng);
    let traj = integrate(coeffs.as_slice(), cfg, true)?;
    Ok((coeffs, traj))
}

/// `n` pairs; `u` = coefficients (2K columns), `v` = trajectories flattened
/// time-major (`x_1, y_1, x_2, y_2, …`).
pub fn lagrangian_dataset(cfg: &FlowConfig, n: usize, rng: &mut SeededRng) -> Result<PairedDataset> {
    cfg.validate()?;
    let jv = cfg.n_records();
    let mut u = Matrix::zeros(n, 2 * cfg.n_freqs);
    let mut v = Matrix::zeros(n, 2 * jv);
    for s in 0..n {
        let mut r = rng.fork(s as u64);
        let (c, traj) = lagrangian_pair(cfg, &mut r)?;
        u.set_row(s, &c.transpose());
        for j in 0..jv {
            v[(s, 2 * j)] = traj[(j, 0)];
            v[(s, 2 * j + 1)] = traj[(j, 1)];
        }
    }
    PairedDataset::new(
        u,
        v,
        DatasetMeta {
            generator: "lagrangian".into(),
            params: serde_json::json!({ "config": cfg, "n": n }),
            seed: rng.seed(),
        },
    )
}
