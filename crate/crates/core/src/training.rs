//! Minibatch Adam training of a pair of encoders under any contrastive loss.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::PairedDataset;
use crate::encoders::{encode, encode_vjp, similarity_matrix_in, similarity_vjp, EncoderParams, EncoderSpec, Tilting};
use crate::error::{Error, Result};
use crate::io::{Cell, CsvTable};
use crate::linalg::{select_rows, Matrix, SeededRng};
use crate::losses::{loss_grad_scores_in, LossKind, Samples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub loss: LossKind,
    pub tilting: Tilting,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub lr_schedule: LrSchedule,
}

/// Learning rate as a function of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` to zero over all steps.
    Cosine,
}

impl LrSchedule {
    /// Multiplier at `step` of `total` steps.
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(LossKind::Cond {
            lambda_u: 1.0,
            lambda_v: 1.0,
        })
    }
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            seed: 0,
            epochs: 1,
            batch_size: 512,
            learning_rate: 1e-3,
            tau: 1.0,
            loss,
            tilting: Tilting::InnerProduct,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            lr_schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.loss.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. The gradient is checked for
/// finiteness before anything is touched; the error carries zero context,
/// which `train` fills in.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::dims(
            "adam_step",
            params.len(),
            format!("grad {}, state {}", grad.len(), state.m.len()),
        ));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { epoch: 0, step: 0 });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    /// Probe results per epoch as `(name, value)` pairs, same names every epoch.
    pub metrics: Vec<Vec<(String, f64)>>,
    /// Seconds per epoch. Kept out of the CSV so outputs stay reproducible.
    pub wall_clock: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.loss.len()
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut header = vec!["epoch".to_string(), "loss".to_string()];
        if let Some(first) = self.metrics.first() {
            header.extend(first.iter().map(|(k, _)| k.clone()));
        }
        let mut t = CsvTable::new(header);
        for (e, l) in self.loss.iter().enumerate() {
            let mut row: Vec<Cell> = vec![(e + 1).into(), (*l).into()];
            if let Some(m) = self.metrics.get(e) {
                row.extend(m.iter().map(|(_, x)| Cell::from(*x)));
            }
            t.push(row);
        }
        t
    }
}

/// Loss of one batch and its gradients with respect to each trainable
/// parameter vector (`None` for frozen encoders).
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub grad_u: Option<Vec<f64>>,
    pub grad_v: Option<Vec<f64>>,
}

/// Forward and backward pass for one aligned batch `(u^i, v^i)`.
pub fn batch_gradients(
    loss: &LossKind,
    tilting: Tilting,
    tau: f64,
    u: (&EncoderSpec, &EncoderParams, &Matrix),
    v: (&EncoderSpec, &EncoderParams, &Matrix),
) -> Result<BatchGradients> {
    batch_gradients_in(&mut Workspace::default(), loss, tilting, tau, u, v)
}

/// Batch-sized buffers kept across steps; fresh multi-megabyte
/// allocations every step cost as much as the loss itself.
#[derive(Default)]
struct Workspace {
    scores: Vec<f64>,
    grad: Vec<f64>,
}

fn batch_gradients_in(
    ws: &mut Workspace,
    loss: &LossKind,
    tilting: Tilting,
    tau: f64,
    (spec_u, pu, bu): (&EncoderSpec, &EncoderParams, &Matrix),
    (spec_v, pv, bv): (&EncoderSpec, &EncoderParams, &Matrix),
) -> Result<BatchGradients> {
    let eu = encode(spec_u, pu, bu)?;
    let ev = encode(spec_v, pv, bv)?;
    let sim = similarity_matrix_in(&eu, &ev, tilting, tau, std::mem::take(&mut ws.scores))?;
    let samples = loss.needs_samples().then_some(Samples { u: bu, v: bv });
    let (value, ds) = loss_grad_scores_in(loss, &sim, samples, std::mem::take(&mut ws.grad))?;
    let (du, dv) = similarity_vjp(&eu, &ev, tilting, tau, &ds)?;
    ws.scores = sim.s.data.into();
    ws.grad = ds.data.into();
    let grad_u = if spec_u.trainable() {
        Some(encode_vjp(spec_u, pu, bu, &du)?)
    } else {
        None
    };
    let grad_v = if spec_v.trainable() {
        Some(encode_vjp(spec_v, pv, bv, &dv)?)
    } else {
        None
    };
    Ok(BatchGradients {
        loss: value,
        grad_u,
        grad_v,
    })
}

/// Called after every epoch with the current parameters.
pub type Probe<'a> = dyn FnMut(usize, &EncoderParams, &EncoderParams) -> Result<Vec<(String, f64)>> + 'a;

pub fn train(
    cfg: &TrainConfig,
    data: &PairedDataset,
    spec_u: &EncoderSpec,
    spec_v: &EncoderSpec,
    init_u: &EncoderParams,
    init_v: &EncoderParams,
) -> Result<(EncoderParams, EncoderParams, TrainHistory)> {
    train_with_probe(cfg, data, spec_u, spec_v, init_u, init_v, None)
}

pub fn train_with_probe(
    cfg: &TrainConfig,
    data: &PairedDataset,
    spec_u: &EncoderSpec,
    spec_v: &EncoderSpec,
    init_u: &EncoderParams,
    init_v: &EncoderParams,
    mut probe: Option<&mut Probe>,
) -> Result<(EncoderParams, EncoderParams, TrainHistory)> {
    cfg.validate()?;
    spec_u.validate()?;
    spec_v.validate()?;
    if data.u.ncols() != spec_u.input_dim() || data.v.ncols() != spec_v.input_dim() {
        return Err(Error::dims(
            "training data width",
            format!("{} and {}", spec_u.input_dim(), spec_v.input_dim()),
            format!("{} and {}", data.u.ncols(), data.v.ncols()),
        ));
    }
    if spec_u.output_dim() != spec_v.output_dim() {
        return Err(Error::dims("embedding width", spec_u.output_dim(), spec_v.output_dim()));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid("training needs at least two pairs"));
    }
    let mut adam = cfg.adam();
    let mut ws = Workspace::default();
    let mut pu = init_u.clone();
    let mut pv = init_v.clone();
    let mut su = AdamState::new(pu.len());
    let mut sv = AdamState::new(pv.len());
    let root = SeededRng::new(cfg.seed);
    let bs = cfg.batch_size.min(n);
    let mut hist = TrainHistory::default();
    let per_epoch = n / bs + usize::from(n % bs >= 2);
    let total_steps = per_epoch * cfg.epochs;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = root.fork(epoch as u64).permutation(n);
        let mut total = 0.0;
        let mut steps = 0usize;
        for (step, idx) in order.chunks(bs).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let ctx = |e: Error| match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { epoch, step },
                e => e,
            };
            adam.learning_rate = cfg.learning_rate * cfg.lr_schedule.factor(epoch * per_epoch + steps, total_steps);
            let bu = select_rows(&data.u, idx);
            let bv = select_rows(&data.v, idx);
            let g = batch_gradients_in(
                &mut ws,
                &cfg.loss,
                cfg.tilting,
                cfg.tau,
                (spec_u, &pu, &bu),
                (spec_v, &pv, &bv),
            )?;
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteGradient { epoch, step });
            }
            if let Some(gu) = &g.grad_u {
                adam_step(pu.as_mut_slice(), gu, &mut su, &adam).map_err(ctx)?;
            }
            if let Some(gv) = &g.grad_v {
                adam_step(pv.as_mut_slice(), gv, &mut sv, &adam).map_err(ctx)?;
            }
            total += g.loss;
            steps += 1;
        }
        hist.loss.push(total / steps as f64);
        if let Some(p) = probe.as_mut() {
            hist.metrics.push(p(epoch, &pu, &pv)?);
        }
        hist.wall_clock.push(start.elapsed().as_secs_f64());
    }
    Ok((pu, pv, hist))
}
