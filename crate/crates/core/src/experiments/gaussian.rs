//! Closed-form tables, the bivariate Gaussian study and the Gaussian-process sweep.

use rand::RngCore;
use serde_json::{json, Map, Value};

use super::{point_rng, Artifacts, ExperimentConfig};
use crate::datagen::{gp_analytic_block, gp_modality_pair, sample_block_gaussian, GpConfig};
use crate::encoders::{EncoderFamily, EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::gaussian::{
    cond_loss_closed, conditional_u_given_v, conditional_v_given_u, empirical_block_gaussian, joint_loss_closed,
    minimizer_cond, minimizer_joint, minimizer_quadratic_onesided, model_conditional, model_marginal_u, shrinkage_h,
    BlockGaussian, ModelTilting, QuadraticTiltingParams, Side,
};
use crate::io::{Cell, CsvTable};
use crate::linalg::{inv_pd, logdet_pd, svd, Matrix};
use crate::losses::LossKind;
use crate::training::{train, LrSchedule, TrainConfig, TrainHistory};

fn block(cfg: &ExperimentConfig) -> Result<BlockGaussian> {
    match (&cfg.covariance, cfg.n_x) {
        (Some(rows), Some(nx)) => BlockGaussian::from_joint(&crate::linalg::from_rows(rows), nx),
        _ => Ok(BlockGaussian::example_2d()),
    }
}

fn push_matrix(rows: &mut Vec<(String, f64)>, name: &str, m: &Matrix) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rows.push((format!("{name}_{i}_{j}"), m[(i, j)]));
        }
    }
}

fn table_of(rows: &[(String, f64)]) -> (CsvTable, Map<String, Value>) {
    let mut t = CsvTable::new(["quantity", "value"]);
    let mut map = Map::new();
    for (k, v) in rows {
        t.push(vec![k.as_str().into(), (*v).into()]);
        map.insert(k.clone(), json!(v));
    }
    (t, map)
}

pub(super) fn closed_form(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<Value>, Map<String, Value>)> {
    let g = block(cfg)?;
    let mut rows = Vec::new();
    let a_cond = minimizer_cond(&g, None)?;
    let quad = minimizer_quadratic_onesided(&g, None, &cfg.solver)?;
    let a_joint = minimizer_joint(&g, None)?;
    push_matrix(&mut rows, "a_cond", &a_cond);
    push_matrix(&mut rows, "a_quad", &quad.a);
    push_matrix(&mut rows, "b_quad", &quad.b);
    push_matrix(&mut rows, "a_joint", &a_joint);
    for (i, s) in svd(&g.whitened_cross()?).singular_values.iter().enumerate() {
        rows.push((format!("sigma_{i}"), *s));
        rows.push((format!("h_sigma_{i}"), shrinkage_h(*s)?));
    }
    let cu = conditional_u_given_v(&g);
    push_matrix(&mut rows, "true_gain_u_given_v", &cu.gain);
    push_matrix(&mut rows, "true_cov_u_given_v", cu.cov.as_matrix());
    let mq = model_conditional(&ModelTilting::Quadratic(quad.clone()), Side::UGivenV, &g)?;
    push_matrix(&mut rows, "quad_gain_u_given_v", &mq.gain);
    push_matrix(&mut rows, "quad_cov_u_given_v", mq.cov.as_matrix());
    push_matrix(&mut rows, "true_marginal_u", g.c_uu());
    push_matrix(
        &mut rows,
        "joint_model_marginal_u",
        model_marginal_u(&a_joint, &g)?.as_matrix(),
    );
    push_matrix(
        &mut rows,
        "cond_model_marginal_u",
        model_marginal_u(&a_cond, &g)?.as_matrix(),
    );
    rows.push(("cond_loss_at_a_cond".into(), cond_loss_closed(&a_cond, &g)?));
    rows.push(("joint_loss_at_a_joint".into(), joint_loss_closed(&a_joint, &g)?));
    let full = g.n_x().min(g.n_y());
    for &r in cfg.sweep.embedding_dims.iter().filter(|&&r| r < full) {
        push_matrix(&mut rows, &format!("a_cond_rank{r}"), &minimizer_cond(&g, Some(r))?);
        push_matrix(&mut rows, &format!("a_joint_rank{r}"), &minimizer_joint(&g, Some(r))?);
    }
    let (t, map) = table_of(&rows);
    out.csv("closed_form", &t)?;
    Ok((Vec::new(), map))
}

/// Log density of `N(0, cov)` at `z`.
fn log_normal(z: &[f64], prec: &Matrix, logdet_cov: f64) -> f64 {
    let d = z.len();
    let zv = Matrix::from_column_slice(d, 1, z);
    let q = (zv.transpose() * prec * &zv)[(0, 0)];
    -0.5 * (q + logdet_cov + d as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Joint precision of the tilted model `exp(uᵀAv − ½uᵀBu − ½vᵀCv) μ_u ⊗ μ_v`.
fn model_precision(g: &BlockGaussian, q: &QuadraticTiltingParams) -> Result<Matrix> {
    let (nx, ny) = (g.n_x(), g.n_y());
    let mut p = Matrix::zeros(nx + ny, nx + ny);
    p.view_mut((0, 0), (nx, nx)).copy_from(&(inv_pd(g.c_uu())? + &q.b));
    p.view_mut((nx, nx), (ny, ny)).copy_from(&(inv_pd(g.c_vv())? + &q.c));
    p.view_mut((0, nx), (nx, ny)).copy_from(&(-&q.a));
    p.view_mut((nx, 0), (ny, nx)).copy_from(&(-q.a.transpose()));
    Ok(p)
}

fn bilinear(a: &Matrix, g: &BlockGaussian) -> QuadraticTiltingParams {
    QuadraticTiltingParams {
        a: a.clone(),
        b: Matrix::zeros(g.n_x(), g.n_x()),
        c: Matrix::zeros(g.n_y(), g.n_y()),
    }
}

fn closed_target(loss: &LossKind, a_cond: &Matrix, a_joint: &Matrix) -> Option<Matrix> {
    match loss {
        LossKind::Clip | LossKind::Cond { .. } => Some(a_cond.clone()),
        LossKind::Joint => Some(a_joint.clone()),
        _ => None,
    }
}

fn linear_pair(n_x: usize, n_y: usize, n_e: usize) -> (EncoderSpec, EncoderSpec) {
    (
        EncoderSpec::new(EncoderFamily::Linear { n_in: n_x, n_e }),
        EncoderSpec::new(EncoderFamily::Linear { n_in: n_y, n_e }),
    )
}

/// `A = W_uᵀ W_v` for linear encoders `e = W x`.
fn bilinear_of(pu: &EncoderParams, pv: &EncoderParams) -> Matrix {
    pu.block(0).transpose() * pv.block(0)
}

fn point_train_config(base: &TrainConfig, batch: usize, seed: u64, index: usize) -> TrainConfig {
    let mut t = base.clone();
    t.batch_size = batch;
    t.seed = point_rng(seed, index, 3).next_u64();
    t
}

fn history_rows(t: &mut CsvTable, point: usize, h: &TrainHistory) {
    for (e, l) in h.loss.iter().enumerate() {
        t.push(vec![point.into(), (e + 1).into(), (*l).into()]);
    }
}

pub(super) fn gaussian2d(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<Value>, Map<String, Value>)> {
    let g = block(cfg)?;
    let a_cond = minimizer_cond(&g, None)?;
    let a_joint = minimizer_joint(&g, None)?;
    let quad = minimizer_quadratic_onesided(&g, None, &cfg.solver)?;
    let variants: Vec<(&str, ModelTilting)> = vec![
        ("cond", ModelTilting::CosineLinear(a_cond.clone())),
        ("quad", ModelTilting::Quadratic(quad.clone())),
        ("joint", ModelTilting::CosineLinear(a_joint.clone())),
    ];

    let mut t = CsvTable::new(["variant", "side", "quantity", "i", "j", "value"]);
    let mut emit = |variant: &str, side: &str, gain: &Matrix, cov: &Matrix| {
        for (name, m) in [("gain", gain), ("cov", cov)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    t.push(vec![
                        variant.into(),
                        side.into(),
                        name.into(),
                        i.into(),
                        j.into(),
                        m[(i, j)].into(),
                    ]);
                }
            }
        }
    };
    let tu = conditional_u_given_v(&g);
    let tv = conditional_v_given_u(&g);
    emit("true", "u|v", &tu.gain, tu.cov.as_matrix());
    emit("true", "v|u", &tv.gain, tv.cov.as_matrix());
    for (name, tilt) in &variants {
        for (side, label) in [(Side::UGivenV, "u|v"), (Side::VGivenU, "v|u")] {
            let m = model_conditional(tilt, side, &g)?;
            emit(name, label, &m.gain, m.cov.as_matrix());
        }
    }
    out.csv("model_conditionals", &t)?;

    if g.n_x() == 1 && g.n_y() == 1 {
        let models = [
            ("true", inv_pd(&g.full())?),
            ("cond", model_precision(&g, &bilinear(&a_cond, &g))?),
            ("quad", model_precision(&g, &quad)?),
            ("joint", model_precision(&g, &bilinear(&a_joint, &g))?),
        ];
        let mut dens = CsvTable::new(["u", "v", "true", "cond", "quad", "joint"]);
        let logdets: Vec<f64> = models
            .iter()
            .map(|(_, p)| logdet_pd(p).map(|x| -x))
            .collect::<Result<_>>()?;
        let n = 61;
        for i in 0..n {
            for j in 0..n {
                let u = -4.0 + 8.0 * i as f64 / (n - 1) as f64;
                let v = -4.0 + 8.0 * j as f64 / (n - 1) as f64;
                let mut row: Vec<Cell> = vec![u.into(), v.into()];
                for ((_, p), ld) in models.iter().zip(&logdets) {
                    row.push(log_normal(&[u, v], p, *ld).exp().into());
                }
                dens.push(row);
            }
        }
        out.csv("density_grid", &dens)?;
    }

    let mut points = Vec::new();
    if let Some(base) = &cfg.train {
        let target = closed_target(&base.loss, &a_cond, &a_joint);
        let mut sweep = CsvTable::new([
            "n_e",
            "batch_size",
            "n_samples",
            "i",
            "j",
            "trained_a",
            "closed_form_a",
            "abs_err",
        ]);
        let mut hist = CsvTable::new(["point", "epoch", "loss"]);
        for (idx, (n_e, batch, n)) in cfg.sweep.points().into_iter().enumerate() {
            let data = sample_block_gaussian(&g, n, &mut point_rng(cfg.seed, idx, 0))?;
            let (su, sv) = linear_pair(g.n_x(), g.n_y(), n_e);
            let mut init = point_rng(cfg.seed, idx, 2);
            let (iu, iv) = (su.init(&mut init)?, sv.init(&mut init)?);
            let tc = point_train_config(base, batch, cfg.seed, idx);
            let (pu, pv, h) = train(&tc, &data, &su, &sv, &iu, &iv)?;
            let a = bilinear_of(&pu, &pv);
            let mut max_err = f64::NAN;
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    let want = target.as_ref().map_or(f64::NAN, |m| m[(i, j)]);
                    let err = (a[(i, j)] - want).abs();
                    max_err = if max_err.is_nan() { err } else { max_err.max(err) };
                    sweep.push(vec![
                        n_e.into(),
                        batch.into(),
                        n.into(),
                        i.into(),
                        j.into(),
                        a[(i, j)].into(),
                        want.into(),
                        err.into(),
                    ]);
                }
            }
            history_rows(&mut hist, idx, &h);
            points.push(json!({
                "n_e": n_e, "batch_size": batch, "n_samples": n,
                "max_abs_err_vs_closed_form": max_err,
                "first_epoch_loss": h.loss.first(), "final_epoch_loss": h.loss.last(),
            }));
        }
        out.csv("trained_vs_closed_form", &sweep)?;
        out.csv("loss_history", &hist)?;
    }
    Ok((points, Map::new()))
}

/// Metrics of one GP sweep point.
#[derive(Debug, Clone)]
pub struct GpPoint {
    pub n_e: usize,
    pub batch_size: usize,
    pub n_samples: usize,
    /// Trained `A = GᵀH`.
    pub a_trained: Matrix,
    /// Rank-`min(n_e, n_y)` conditional-loss minimizer for the empirical blocks.
    pub a_optimum: Matrix,
    pub mse_u_given_v: f64,
    pub mse_v_given_u: f64,
    pub optimum_mse_u_given_v: f64,
    pub optimum_mse_v_given_u: f64,
    pub rel_err_to_optimum: f64,
    pub history: TrainHistory,
    /// First held-out draw with truth and model conditional means, both sides.
    pub example: Vec<(String, usize, f64, f64)>,
}

/// Mean over rows `x_k` of `|D x_k|²`.
fn mean_sq(d: &Matrix, x: &Matrix) -> f64 {
    let r = x * d.transpose();
    r.norm_squared() / x.nrows() as f64
}

/// Trains linear encoders on one GP sample and scores the learned conditional means.
pub fn gp_sweep_point(
    gp: &GpConfig,
    base: &TrainConfig,
    (n_e, batch, n): (usize, usize, usize),
    n_test: usize,
    seed: u64,
    index: usize,
) -> Result<GpPoint> {
    let data = gp_modality_pair(gp, n, &mut point_rng(seed, index, 0))?;
    let test = gp_modality_pair(gp, n_test, &mut point_rng(seed, index, 1))?;
    let truth = gp_analytic_block(gp)?;
    let (su, sv) = linear_pair(gp.grid_points, gp.n_coeffs, n_e);
    let mut init = point_rng(seed, index, 2);
    let (iu, iv) = (su.init(&mut init)?, sv.init(&mut init)?);
    let tc = point_train_config(base, batch, seed, index);
    let (pu, pv, history) = train(&tc, &data, &su, &sv, &iu, &iv)?;
    let a = bilinear_of(&pu, &pv);

    let rank = n_e.min(gp.grid_points).min(gp.n_coeffs);
    let emp = empirical_block_gaussian(&data)?;
    let a_opt = minimizer_cond(&emp, Some(rank))?;
    let gu = conditional_u_given_v(&truth).gain;
    let gv = conditional_v_given_u(&truth).gain;
    let err_u = |a: &Matrix| truth.c_uu() * a - &gu;
    let err_v = |a: &Matrix| truth.c_vv() * a.transpose() - &gv;
    let opt_norm = a_opt.norm();
    if opt_norm == 0.0 {
        return Err(Error::invalid("rank-constrained optimum vanished"));
    }

    let mut example = Vec::new();
    let v0 = test.v.row(0).transpose();
    let u0 = test.u.row(0).transpose();
    let (mu_true, mu_model) = (&gu * &v0, truth.c_uu() * &a * &v0);
    for k in 0..mu_true.len() {
        example.push(("u|v".to_string(), k, mu_true[k], mu_model[k]));
    }
    let (mv_true, mv_model) = (&gv * &u0, truth.c_vv() * a.transpose() * &u0);
    for k in 0..mv_true.len() {
        example.push(("v|u".to_string(), k, mv_true[k], mv_model[k]));
    }

    Ok(GpPoint {
        n_e,
        batch_size: batch,
        n_samples: n,
        mse_u_given_v: mean_sq(&err_u(&a), &test.v),
        mse_v_given_u: mean_sq(&err_v(&a), &test.u),
        optimum_mse_u_given_v: mean_sq(&err_u(&a_opt), &test.v),
        optimum_mse_v_given_u: mean_sq(&err_v(&a_opt), &test.u),
        rel_err_to_optimum: (&a - &a_opt).norm() / opt_norm,
        a_trained: a,
        a_optimum: a_opt,
        history,
        example,
    })
}

/// Training defaults for the GP sweep when the config has no `train` section.
pub(super) fn gp_default_train() -> TrainConfig {
    let mut t = TrainConfig::new(LossKind::Cond {
        lambda_u: 1.0,
        lambda_v: 1.0,
    });
    t.epochs = 200;
    t.learning_rate = 1e-2;
    t.lr_schedule = LrSchedule::Cosine;
    t
}

pub(super) fn gaussian_gp(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<Value>, Map<String, Value>)> {
    let base = cfg.train.clone().unwrap_or_else(gp_default_train);
    let mut sweep = CsvTable::new([
        "n_e",
        "batch_size",
        "n_samples",
        "mse_u_given_v",
        "mse_v_given_u",
        "optimum_mse_u_given_v",
        "optimum_mse_v_given_u",
        "rel_err_to_rank_optimum",
        "first_epoch_loss",
        "final_epoch_loss",
    ]);
    let mut means = CsvTable::new(["point", "side", "index", "true_mean", "model_mean"]);
    let mut hist = CsvTable::new(["point", "epoch", "loss"]);
    let mut points = Vec::new();
    for (idx, p) in cfg.sweep.points().into_iter().enumerate() {
        let r = gp_sweep_point(&cfg.gp, &base, p, cfg.n_test, cfg.seed, idx)?;
        let first = r.history.loss.first().copied().unwrap_or(f64::NAN);
        let last = r.history.loss.last().copied().unwrap_or(f64::NAN);
        sweep.push(vec![
            r.n_e.into(),
            r.batch_size.into(),
            r.n_samples.into(),
            r.mse_u_given_v.into(),
            r.mse_v_given_u.into(),
            r.optimum_mse_u_given_v.into(),
            r.optimum_mse_v_given_u.into(),
            r.rel_err_to_optimum.into(),
            first.into(),
            last.into(),
        ]);
        for (side, k, t, m) in &r.example {
            means.push(vec![
                idx.into(),
                side.as_str().into(),
                (*k).into(),
                (*t).into(),
                (*m).into(),
            ]);
        }
        history_rows(&mut hist, idx, &r.history);
        points.push(json!({
            "n_e": r.n_e, "batch_size": r.batch_size, "n_samples": r.n_samples,
            "mse_u_given_v": r.mse_u_given_v, "mse_v_given_u": r.mse_v_given_u,
            "rel_err_to_rank_optimum": r.rel_err_to_optimum,
            "first_epoch_loss": first, "final_epoch_loss": last,
        }));
    }
    out.csv("gp_sweep", &sweep)?;
    out.csv("conditional_means", &means)?;
    out.csv("loss_history", &hist)?;
    Ok((points, Map::new()))
}
