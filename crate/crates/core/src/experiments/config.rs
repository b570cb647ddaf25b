use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::GpConfig;
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::gaussian::SolverConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Gaussian2d,
    GaussianGp,
    Mnist,
    Lagrangian,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub embedding_dims: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub sample_sizes: Vec<usize>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            embedding_dims: vec![5],
            batch_sizes: vec![512],
            sample_sizes: vec![10_000],
        }
    }
}

impl Sweep {
    /// All `(n_e, batch, N)` combinations, embedding dimension outermost.
    pub fn points(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &e in &self.embedding_dims {
            for &b in &self.batch_sizes {
                for &n in &self.sample_sizes {
                    out.push((e, b, n));
                }
            }
        }
        out
    }
}

/// Settings of the particle-trajectory retrieval experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    /// `m` in `k ∈ {−m..m}²`; `K = (2m+1)²` modes.
    pub wavenumber_bound: i32,
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub n_test: usize,
    /// Hidden widths of the default trajectory MLP.
    pub hidden: Vec<usize>,
    /// Overrides the default encoders; input widths must match the data.
    pub u_encoder: Option<EncoderSpec>,
    pub v_encoder: Option<EncoderSpec>,
    /// Number of training pairs used for the per-epoch training recall.
    pub train_probe: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            wavenumber_bound: 1,
            dt: 1e-5,
            t_final: 0.1,
            record_stride: 100,
            n_test: 500,
            hidden: vec![256],
            u_encoder: None,
            v_encoder: None,
            train_probe: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSettings {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Sweep,
    /// Training settings; `seed` and `batch_size` are replaced per sweep point.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Joint covariance for the Gaussian experiments, with `n_x` the size of `u`.
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub n_x: Option<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub gp: GpConfig,
    /// Held-out conditioning draws for error estimates.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub flow: FlowSettings,
    #[serde(default)]
    pub mnist: Option<MnistSettings>,
}

fn default_n_test() -> usize {
    1000
}

impl ExperimentConfig {
    /// Checks cross-field constraints. Errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.validate_keyed().map_err(|(_, e)| e)
    }

    fn validate_keyed(&self) -> std::result::Result<(), (&'static str, Error)> {
        let s = &self.sweep;
        for (key, list) in [
            ("embedding_dims", &s.embedding_dims),
            ("batch_sizes", &s.batch_sizes),
            ("sample_sizes", &s.sample_sizes),
        ] {
            if list.is_empty() {
                return Err((key, Error::invalid(format!("sweep list {key} must not be empty"))));
            }
            if list.contains(&0) {
                return Err((
                    key,
                    Error::invalid(format!("sweep list {key} must hold positive values")),
                ));
            }
        }
        if s.batch_sizes.iter().any(|&b| b < 2) {
            return Err(("batch_sizes", Error::invalid("batch sizes must be at least 2")));
        }
        if let Some(t) = &self.train {
            let mut probe = t.clone();
            probe.batch_size = probe.batch_size.max(2);
            probe.validate().map_err(|e| ("train", e))?;
        }
        if let Some(c) = &self.covariance {
            if c.is_empty() || c.iter().any(|r| r.len() != c.len()) {
                return Err(("covariance", Error::invalid("covariance must be a square list of rows")));
            }
            match self.n_x {
                Some(nx) if nx >= 1 && nx < c.len() => {}
                _ => {
                    return Err((
                        "n_x",
                        Error::invalid("n_x must split the covariance into two nonempty blocks"),
                    ))
                }
            }
        }
        if self.n_test == 0 {
            return Err(("n_test", Error::invalid("n_test must be positive")));
        }
        match self.experiment {
            ExperimentKind::GaussianGp => self.gp.validate().map_err(|e| ("gp", e))?,
            ExperimentKind::Mnist if self.mnist.is_none() => {
                return Err((
                    "experiment",
                    Error::invalid("the mnist experiment needs an \"mnist\" section with IDX paths"),
                ));
            }
            ExperimentKind::Lagrangian => {
                let f = &self.flow;
                if f.wavenumber_bound < 0
                    || !(f.dt > 0.0)
                    || !(f.t_final > f.dt)
                    || f.record_stride == 0
                    || f.n_test < 2
                {
                    return Err((
                        "flow",
                        Error::invalid("flow needs m >= 0, 0 < dt < t_final, record_stride >= 1, n_test >= 2"),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// 1-based line and column of byte offset `at`.
fn line_col(text: &str, at: usize) -> (usize, usize) {
    let before = &text[..at.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

/// Drops serde_json's trailing " at line L column C", which we report separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(p) => msg[..p].to_string(),
        None => msg.to_string(),
    }
}

/// Parses and validates a JSON config. Errors carry the line and column of
/// the problem: the parser's position, or the offending key for semantic
/// errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
        message: strip_position(&e.to_string()),
        line: e.line(),
        column: e.column(),
    })?;
    if let Err((key, e)) = cfg.validate_keyed() {
        let at = text.find(&format!("\"{key}\"")).unwrap_or(0);
        let (line, column) = line_col(text, at);
        return Err(Error::Config {
            message: e.to_string(),
            line,
            column,
        });
    }
    Ok(cfg)
}
