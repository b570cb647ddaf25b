//! Config-driven experiment runs that emit plot-ready CSV and a JSON report.

mod config;
mod gaussian;
mod tasks;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::CsvTable;
use crate::linalg::SeededRng;

pub use config::{parse_config, ExperimentConfig, ExperimentKind, FlowSettings, MnistSettings, Sweep};
pub use gaussian::{gp_sweep_point, GpPoint};
pub use tasks::{lagrangian_run, mnist_specs, LagrangianOutcome, RecallRow};
pub use verify::{verify, verify_with, CheckOutcome, VerifyHooks};

/// Summary written to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// One object per sweep point, in sweep order.
    pub points: Vec<serde_json::Value>,
    /// Scalar results that do not belong to a sweep point.
    pub summary: serde_json::Map<String, serde_json::Value>,
    /// Artifact file names relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Output directory writer that records artifacts and their provenance.
pub(crate) struct Artifacts {
    dir: PathBuf,
    config_hash: String,
    experiment: ExperimentKind,
    seed: u64,
    names: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path, cfg: &ExperimentConfig, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            experiment: cfg.experiment,
            seed: cfg.seed,
            names: Vec::new(),
        })
    }

    /// Writes `<name>.csv` and its sibling `<name>.meta.json`.
    pub(crate) fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        let file = format!("{name}.csv");
        table.write(&self.dir.join(&file))?;
        let meta = serde_json::json!({
            "file": file,
            "config_hash": self.config_hash,
            "experiment": self.experiment,
            "seed": self.seed,
            "columns": table.header(),
        });
        fs::write(
            self.dir.join(format!("{name}.meta.json")),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
        self.names.push(file);
        self.names.push(format!("{name}.meta.json"));
        Ok(())
    }

    pub(crate) fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let file = format!("{name}.json");
        fs::write(self.dir.join(&file), serde_json::to_string_pretty(value)? + "\n")?;
        self.names.push(file);
        Ok(())
    }
}

/// SHA-256 of the config's canonical JSON serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Independent generator for sweep point `index` and a purpose tag.
pub(crate) fn point_rng(seed: u64, index: usize, purpose: u64) -> SeededRng {
    SeededRng::new(seed).fork(((index as u64) << 8) | purpose)
}

/// Runs a validated config, writing everything under `output_dir`.
pub fn run(cfg: &ExperimentConfig, output_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let mut out = Artifacts::new(output_dir, cfg, &hash)?;
    let (points, summary) = match cfg.experiment {
        ExperimentKind::ClosedForm => gaussian::closed_form(cfg, &mut out)?,
        ExperimentKind::Gaussian2d => gaussian::gaussian2d(cfg, &mut out)?,
        ExperimentKind::GaussianGp => gaussian::gaussian_gp(cfg, &mut out)?,
        ExperimentKind::Mnist => tasks::mnist(cfg, &mut out)?,
        ExperimentKind::Lagrangian => tasks::lagrangian(cfg, &mut out)?,
    };
    let mut report = RunReport {
        experiment: cfg.experiment,
        config_hash: hash,
        config: cfg.clone(),
        points,
        summary,
        artifacts: Vec::new(),
    };
    report.artifacts = out.names.clone();
    report.artifacts.push("report.json".into());
    out.json("report", &report)?;
    Ok(report)
}

/// Reads, parses and runs a config file. `seed` and `output_dir` override the file.
pub fn run_file(path: &Path, seed: Option<u64>, output_dir: Option<&Path>) -> Result<RunReport> {
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = match (output_dir, &cfg.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => PathBuf::from("output"),
    };
    run(&cfg, &dir)
}
