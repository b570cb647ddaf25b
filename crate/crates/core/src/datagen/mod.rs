//! Paired-sample generators and dataset persistence.

mod flow;
mod gp;
mod mnist;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::BlockGaussian;
use crate::io::{matrix_from_csv, matrix_to_csv};
use crate::linalg::{chol_sample, select_rows, Matrix, SeededRng, Vector};

pub use flow::{lagrangian_dataset, lagrangian_pair, velocity_eval, FlowConfig};
pub use gp::{gp_analytic_block, gp_modality_pair, GpConfig};
pub use mnist::{mnist_load, MnistData};

/// Where a dataset came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

/// `N` aligned `(u, v)` pairs.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub u: Matrix,
    pub v: Matrix,
    pub meta: DatasetMeta,
}

impl PairedDataset {
    pub fn new(u: Matrix, v: Matrix, meta: DatasetMeta) -> Result<Self> {
        if u.nrows() != v.nrows() {
            return Err(Error::dims("PairedDataset", u.nrows(), v.nrows()));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("dataset entries must be finite"));
        }
        Ok(PairedDataset { u, v, meta })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> PairedDataset {
        PairedDataset {
            u: select_rows(&self.u, idx),
            v: select_rows(&self.v, idx),
            meta: self.meta.clone(),
        }
    }

    /// First `n` pairs and the rest.
    pub fn split_at(&self, n: usize) -> (PairedDataset, PairedDataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Writes `meta.json`, `u.csv` and `v.csv` (headerless, one sample per row).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        fs::write(dir.join("u.csv"), matrix_to_csv(&self.u))?;
        fs::write(dir.join("v.csv"), matrix_to_csv(&self.v))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let up = dir.join("u.csv");
        let vp = dir.join("v.csv");
        let u = matrix_from_csv(&fs::read_to_string(&up)?, &up)?;
        let v = matrix_from_csv(&fs::read_to_string(&vp)?, &vp)?;
        Self::new(u, v, meta)
    }
}

/// `n` joint draws from `g`, split into the `u` and `v` blocks.
pub fn sample_block_gaussian(g: &BlockGaussian, n: usize, rng: &mut SeededRng) -> Result<PairedDataset> {
    let nx = g.n_x();
    let z = chol_sample(&Vector::zeros(nx + g.n_y()), &g.full(), n, rng)?;
    PairedDataset::new(
        z.columns(0, nx).into_owned(),
        z.columns(nx, g.n_y()).into_owned(),
        DatasetMeta {
            generator: "block-gaussian".into(),
            params: serde_json::json!({
                "covariance": crate::linalg::MatrixJson::from(&g.full()),
                "n_x": nx,
                "n": n,
            }),
            seed: rng.seed(),
        },
    )
}
