//! Retrieval, zero-shot classification and label-head fine-tuning on top of
//! trained encoders.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::PairedDataset;
use crate::encoders::{encode, EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::linalg::{matrix_serde, select_rows, Matrix, SeededRng, Vector};
use crate::training::{adam_step, AdamConfig, AdamState, TrainConfig};

/// Searchable set of item embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub ids: Vec<String>,
    #[serde(with = "matrix_serde")]
    pub matrix: Matrix,
    pub normalized: bool,
}

impl EmbeddingIndex {
    /// Normalizes rows first when `normalized` is set.
    pub fn build(ids: Vec<String>, embeddings: Matrix, normalized: bool) -> Result<Self> {
        if ids.len() != embeddings.nrows() {
            return Err(Error::dims("index ids", embeddings.nrows(), ids.len()));
        }
        let mut matrix = embeddings;
        if normalized {
            for (i, mut row) in matrix.row_iter_mut().enumerate() {
                let n = row.norm();
                if n == 0.0 {
                    return Err(Error::ZeroNormRow { row: i });
                }
                row /= n;
            }
        }
        Ok(EmbeddingIndex {
            ids,
            matrix,
            normalized,
        })
    }

    /// Ids `"0"`, `"1"`, … for each row.
    pub fn with_row_ids(embeddings: Matrix, normalized: bool) -> Result<Self> {
        let ids = (0..embeddings.nrows()).map(|i| i.to_string()).collect();
        Self::build(ids, embeddings, normalized)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let idx: EmbeddingIndex = serde_json::from_str(text)?;
        if idx.ids.len() != idx.matrix.nrows() {
            return Err(Error::dims("index ids", idx.matrix.nrows(), idx.ids.len()));
        }
        Ok(idx)
    }
}

/// Row indices and scores of the `k` best rows, best first, ties to the lower row.
pub fn retrieve_scored(query: &[f64], index: &EmbeddingIndex, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > index.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", index.len())));
    }
    if query.len() != index.matrix.ncols() {
        return Err(Error::dims("query width", index.matrix.ncols(), query.len()));
    }
    let q = Vector::from_column_slice(query);
    let scores = &index.matrix * q;
    let mut order: Vec<usize> = (0..index.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order.into_iter().take(k).map(|i| (i, scores[i])).collect())
}

pub fn retrieve(query: &[f64], index: &EmbeddingIndex, k: usize) -> Result<Vec<String>> {
    Ok(retrieve_scored(query, index, k)?
        .into_iter()
        .map(|(i, _)| index.ids[i].clone())
        .collect())
}

/// Fraction of queries whose true id is among their top `k`.
pub fn recall_at_k(queries: &Matrix, truth: &[String], index: &EmbeddingIndex, k: usize) -> Result<f64> {
    if queries.nrows() != truth.len() {
        return Err(Error::dims("recall truth ids", queries.nrows(), truth.len()));
    }
    if queries.nrows() == 0 {
        return Ok(0.0);
    }
    let k = k.min(index.len());
    let mut hits = 0usize;
    for (i, t) in truth.iter().enumerate() {
        let q: Vec<f64> = queries.row(i).iter().copied().collect();
        if retrieve_scored(&q, index, k)?.iter().any(|&(r, _)| &index.ids[r] == t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// CSV with columns `query_id, rank, item_id, score`.
pub fn retrieval_csv(query_ids: &[String], queries: &Matrix, index: &EmbeddingIndex, k: usize) -> Result<CsvTable> {
    let mut t = CsvTable::new(["query_id", "rank", "item_id", "score"]);
    for (i, qid) in query_ids.iter().enumerate() {
        let q: Vec<f64> = queries.row(i).iter().copied().collect();
        for (rank, (r, s)) in retrieve_scored(&q, index, k)?.into_iter().enumerate() {
            t.push(vec![
                qid.as_str().into(),
                (rank + 1).into(),
                index.ids[r].as_str().into(),
                s.into(),
            ]);
        }
    }
    Ok(t)
}

pub fn write_retrieval_csv(
    path: &Path,
    query_ids: &[String],
    queries: &Matrix,
    index: &EmbeddingIndex,
    k: usize,
) -> Result<()> {
    retrieval_csv(query_ids, queries, index, k)?.write(path)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Zero-shot label choice by cosine score against each label embedding (rows
/// of `labels`). Zero vectors score 0.
pub fn classify(u_embedding: &[f64], labels: &Matrix, tau: f64) -> (usize, Vec<f64>) {
    let u = Vector::from_column_slice(u_embedding);
    let un = u.norm();
    let scores: Vec<f64> = labels
        .row_iter()
        .map(|l| {
            let d = l.norm() * un;
            if d == 0.0 {
                0.0
            } else {
                l.transpose().dot(&u) / d
            }
        })
        .collect();
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    (argmax(&scores), softmax(&scaled))
}

/// Label table `G` (column `i` embeds label `i`) and log-prior offsets `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    #[serde(with = "matrix_serde")]
    pub g_table: Matrix,
    pub f_bias: Vec<f64>,
    pub tau: f64,
}

impl ClassifierHead {
    pub fn n_classes(&self) -> usize {
        self.f_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_bias.is_empty() || self.g_table.ncols() != self.f_bias.len() {
            return Err(Error::dims("classifier head", self.f_bias.len(), self.g_table.ncols()));
        }
        if !(self.tau > 0.0) || self.g_table.iter().chain(&self.f_bias).any(|x| !x.is_finite()) {
            return Err(Error::invalid("classifier head must be finite with positive tau"));
        }
        Ok(())
    }

    /// `z[i][c] = ⟨G_c, e_i⟩/τ + F_c`.
    pub fn logits(&self, e_u: &Matrix) -> Matrix {
        let mut z = e_u * &self.g_table / self.tau;
        for mut row in z.row_iter_mut() {
            for (c, f) in self.f_bias.iter().enumerate() {
                row[c] += f;
            }
        }
        z
    }
}

/// Reads class indices from one-hot rows.
pub fn labels_from_one_hot(v: &Matrix) -> Result<Vec<usize>> {
    v.row_iter()
        .enumerate()
        .map(|(i, r)| {
            let ones: Vec<usize> = (0..r.len()).filter(|&c| r[c] == 1.0).collect();
            if ones.len() == 1 && r.iter().filter(|&&x| x != 0.0).count() == 1 {
                Ok(ones[0])
            } else {
                Err(Error::invalid(format!("row {i} of the label block is not one-hot")))
            }
        })
        .collect()
}

/// Fine-tuning objective and its gradient wrt the logits. The normalizer runs
/// over the empirical label marginal of the batch.
fn fine_tune_loss(z: &Matrix, y: &[usize]) -> (f64, Matrix) {
    let (m, k) = z.shape();
    let mut freq = vec![0.0; k];
    for &c in y {
        freq[c] += 1.0 / m as f64;
    }
    let mut value = 0.0;
    let mut g = Matrix::zeros(m, k);
    for i in 0..m {
        let mx = (0..k)
            .filter(|&c| freq[c] > 0.0)
            .map(|c| z[(i, c)])
            .fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = (0..k).map(|c| freq[c] * (z[(i, c)] - mx).exp()).collect();
        let zsum: f64 = w.iter().sum();
        value += -z[(i, y[i])] + mx + zsum.ln();
        for c in 0..k {
            g[(i, c)] = w[c] / zsum / m as f64;
        }
        g[(i, y[i])] -= 1.0 / m as f64;
    }
    (value / m as f64, g)
}

/// Loss of a head on a labeled set, for inspection and tests.
pub fn fine_tune_objective(head: &ClassifierHead, e_u: &Matrix, labels: &[usize]) -> f64 {
    fine_tune_loss(&head.logits(e_u), labels).0
}

/// Fits `(G, F)` for a frozen input encoder. `data.v` holds one-hot labels
/// over `K` classes; `init_g` (n_e×K) seeds the table, zeros otherwise.
pub fn fine_tune(
    u_spec: &EncoderSpec,
    u_params: &EncoderParams,
    data: &PairedDataset,
    init_g: Option<&Matrix>,
    cfg: &TrainConfig,
) -> Result<ClassifierHead> {
    cfg.validate()?;
    let k = data.v.ncols();
    let labels = labels_from_one_hot(&data.v)?;
    if data.len() < k {
        return Err(Error::invalid(format!(
            "fine-tuning needs at least K = {k} samples, got {}",
            data.len()
        )));
    }
    let e_u = encode(u_spec, u_params, &data.u)?;
    let n_e = e_u.ncols();
    let g0 = match init_g {
        Some(g) if g.shape() != (n_e, k) => {
            return Err(Error::dims(
                "initial label table",
                format!("{n_e}x{k}"),
                format!("{}x{}", g.nrows(), g.ncols()),
            ))
        }
        Some(g) => g.clone(),
        None => Matrix::zeros(n_e, k),
    };
    let mut head = ClassifierHead {
        g_table: g0,
        f_bias: vec![0.0; k],
        tau: cfg.tau,
    };
    let mut flat: Vec<f64> = head
        .g_table
        .iter()
        .copied()
        .chain(head.f_bias.iter().copied())
        .collect();
    let mut state = AdamState::new(flat.len());
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_betas.0,
        beta2: cfg.adam_betas.1,
        eps: cfg.adam_eps,
    };
    let root = SeededRng::new(cfg.seed);
    let bs = cfg.batch_size.min(data.len());
    for epoch in 0..cfg.epochs {
        let order = root.fork(epoch as u64).permutation(data.len());
        for (step, idx) in order.chunks(bs).enumerate() {
            if idx.len() < 2 && data.len() >= 2 {
                continue;
            }
            let eb = select_rows(&e_u, idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (_, gz) = fine_tune_loss(&head.logits(&eb), &yb);
            let gg = eb.transpose() * &gz / head.tau;
            let gf = gz.row_sum();
            let grad: Vec<f64> = gg.iter().copied().chain(gf.iter().copied()).collect();
            adam_step(&mut flat, &grad, &mut state, &adam).map_err(|_| Error::NonFiniteGradient { epoch, step })?;
            head.g_table.copy_from_slice(&flat[..n_e * k]);
            head.f_bias.copy_from_slice(&flat[n_e * k..]);
        }
    }
    Ok(head)
}

/// Most likely label under the fine-tuned head, ties to the lower index.
pub fn classify_finetuned(
    u: &[f64],
    u_spec: &EncoderSpec,
    u_params: &EncoderParams,
    head: &ClassifierHead,
) -> Result<usize> {
    head.validate()?;
    let e = encode(u_spec, u_params, &Matrix::from_row_slice(1, u.len(), u))?;
    let z = head.logits(&e);
    let row: Vec<f64> = z.row(0).iter().copied().collect();
    Ok(argmax(&row))
}
