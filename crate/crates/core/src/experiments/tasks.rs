//! Label-classification and trajectory-retrieval experiments.

use rand::RngCore;
use serde_json::{json, Map, Value};

use super::{point_rng, Artifacts, ExperimentConfig, FlowSettings, MnistSettings};
use crate::crossmodal::{recall_at_k, retrieval_csv, retrieve_scored, EmbeddingIndex};
use crate::datagen::{lagrangian_dataset, mnist_load, DatasetMeta, FlowConfig, PairedDataset};
use crate::encoders::{encode, Activation, EncoderFamily, EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::linalg::Matrix;
use crate::losses::LossKind;
use crate::training::{train_with_probe, TrainConfig, TrainHistory};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Retrieval scores of one direction on one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallRow {
    pub r1: f64,
    pub r5: f64,
}

fn recalls(eq: &Matrix, ei: &Matrix) -> Result<RecallRow> {
    let index = EmbeddingIndex::with_row_ids(ei.clone(), false)?;
    let truth = ids(eq.nrows());
    Ok(RecallRow {
        r1: recall_at_k(eq, &truth, &index, 1)?,
        r5: recall_at_k(eq, &truth, &index, 5)?,
    })
}

/// Result of one trajectory-retrieval training run.
#[derive(Debug, Clone)]
pub struct LagrangianOutcome {
    /// Per-epoch loss with recall probes named `{split}_r{k}_{dir}`,
    /// `dir` ∈ {`u2v`, `v2u`}.
    pub history: TrainHistory,
    pub test_u2v: RecallRow,
    pub test_v2u: RecallRow,
    pub first_test_u2v: RecallRow,
    pub first_test_v2u: RecallRow,
    pub spec_u: EncoderSpec,
    pub spec_v: EncoderSpec,
    pub params_u: EncoderParams,
    pub params_v: EncoderParams,
    pub test: PairedDataset,
}

fn metric(h: &TrainHistory, epoch: usize, name: &str) -> f64 {
    h.metrics[epoch]
        .iter()
        .find(|(k, _)| k == name)
        .map_or(f64::NAN, |(_, v)| *v)
}

/// Default encoders: a linear map of the Fourier coefficients and an MLP
/// over the flattened trajectory, both row-normalized.
fn flow_specs(s: &FlowSettings, n_u: usize, n_v: usize, n_e: usize) -> (EncoderSpec, EncoderSpec) {
    let su = s
        .u_encoder
        .clone()
        .unwrap_or_else(|| EncoderSpec::new(EncoderFamily::Linear { n_in: n_u, n_e }).normalized(true));
    let sv = s.v_encoder.clone().unwrap_or_else(|| {
        let mut layers = vec![n_v];
        layers.extend(&s.hidden);
        layers.push(n_e);
        EncoderSpec::new(EncoderFamily::Mlp {
            layer_sizes: layers,
            activation: Activation::Tanh,
        })
        .normalized(true)
    });
    (su, sv)
}

/// Generates trajectories for one random flow, trains both encoders and
/// tracks retrieval recall on held-out pairs after every epoch.
pub fn lagrangian_run(
    s: &FlowSettings,
    base: &TrainConfig,
    (n_e, batch, n): (usize, usize, usize),
    seed: u64,
    index: usize,
) -> Result<LagrangianOutcome> {
    let flow = FlowConfig::with_random_frequencies(
        s.wavenumber_bound,
        s.dt,
        s.t_final,
        s.record_stride,
        &mut point_rng(seed, index, 4),
    )?;
    let all = lagrangian_dataset(&flow, n + s.n_test, &mut point_rng(seed, index, 0))?;
    let (data, test) = all.split_at(n);
    let (su, sv) = flow_specs(s, data.u.ncols(), data.v.ncols(), n_e);
    let mut init = point_rng(seed, index, 2);
    let (iu, iv) = (su.init(&mut init)?, sv.init(&mut init)?);
    let mut tc = base.clone();
    tc.batch_size = batch;
    tc.seed = point_rng(seed, index, 3).next_u64();

    let probe_n = s.train_probe.min(n);
    let train_probe = data.subset(&(0..probe_n).collect::<Vec<_>>());
    let mut probe = |_: usize, pu: &EncoderParams, pv: &EncoderParams| -> Result<Vec<(String, f64)>> {
        let mut m = Vec::new();
        for (split, d) in [("train", &train_probe), ("test", &test)] {
            let eu = encode(&su, pu, &d.u)?;
            let ev = encode(&sv, pv, &d.v)?;
            let a = recalls(&eu, &ev)?;
            let b = recalls(&ev, &eu)?;
            m.push((format!("{split}_r1_u2v"), a.r1));
            m.push((format!("{split}_r5_u2v"), a.r5));
            m.push((format!("{split}_r1_v2u"), b.r1));
            m.push((format!("{split}_r5_v2u"), b.r5));
        }
        Ok(m)
    };
    let (pu, pv, history) = train_with_probe(&tc, &data, &su, &sv, &iu, &iv, Some(&mut probe))?;
    if history.epochs() == 0 {
        return Err(Error::invalid("the trajectory experiment needs at least one epoch"));
    }
    let last = history.epochs() - 1;
    let row = |e: usize, dir: &str| RecallRow {
        r1: metric(&history, e, &format!("test_r1_{dir}")),
        r5: metric(&history, e, &format!("test_r5_{dir}")),
    };
    Ok(LagrangianOutcome {
        test_u2v: row(last, "u2v"),
        test_v2u: row(last, "v2u"),
        first_test_u2v: row(0, "u2v"),
        first_test_v2u: row(0, "v2u"),
        history,
        spec_u: su,
        spec_v: sv,
        params_u: pu,
        params_v: pv,
        test,
    })
}

pub(super) fn lagrangian_default_train() -> TrainConfig {
    let mut t = TrainConfig::new(LossKind::Cond {
        lambda_u: 1.0,
        lambda_v: 1.0,
    });
    t.epochs = 20;
    t.tau = 0.1;
    t
}

pub(super) fn lagrangian(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<Value>, Map<String, Value>)> {
    let base = cfg.train.clone().unwrap_or_else(lagrangian_default_train);
    let mut points = Vec::new();
    let mut curves: Option<CsvTable> = None;
    for (idx, p) in cfg.sweep.points().into_iter().enumerate() {
        let r = lagrangian_run(&cfg.flow, &base, p, cfg.seed, idx)?;
        let h = r.history.to_csv();
        let t = curves.get_or_insert_with(|| {
            let mut header = vec!["point".to_string()];
            header.extend(h.header().iter().cloned());
            CsvTable::new(header)
        });
        for (e, l) in r.history.loss.iter().enumerate() {
            let mut row = vec![idx.into(), (e + 1).into(), (*l).into()];
            row.extend(r.history.metrics[e].iter().map(|(_, x)| (*x).into()));
            t.push(row);
        }
        let eu = encode(&r.spec_u, &r.params_u, &r.test.u)?;
        let ev = encode(&r.spec_v, &r.params_v, &r.test.v)?;
        let index = EmbeddingIndex::with_row_ids(ev, false)?;
        out.csv(
            &format!("retrieval_u2v_point{idx}"),
            &retrieval_csv(&ids(eu.nrows()), &eu, &index, 5)?,
        )?;
        points.push(json!({
            "n_e": p.0, "batch_size": p.1, "n_samples": p.2,
            "test_r1_u2v": r.test_u2v.r1, "test_r5_u2v": r.test_u2v.r5,
            "test_r1_v2u": r.test_v2u.r1, "test_r5_v2u": r.test_v2u.r5,
            "first_epoch_loss": r.history.loss.first(), "final_epoch_loss": r.history.loss.last(),
        }));
    }
    if let Some(t) = curves {
        out.csv("recall_vs_epoch", &t)?;
    }
    Ok((points, Map::new()))
}

fn label_column(labels: &[u8]) -> Matrix {
    Matrix::from_fn(labels.len(), 1, |i, _| labels[i] as f64)
}

pub(super) fn mnist_default_train() -> TrainConfig {
    let mut t = TrainConfig::new(LossKind::Cond {
        lambda_u: 0.0,
        lambda_v: 2.0,
    });
    t.epochs = 10;
    t
}

/// Image encoder `784 → hidden → 10` and the fixed one-hot label encoder.
pub fn mnist_specs(n_pixels: usize, hidden: usize) -> (EncoderSpec, EncoderSpec) {
    (
        EncoderSpec::new(EncoderFamily::Mlp {
            layer_sizes: vec![n_pixels, hidden, 10],
            activation: Activation::Relu,
        }),
        EncoderSpec::new(EncoderFamily::OneHot { n_classes: 10 }),
    )
}

fn accuracy(logits: &Matrix, labels: &[u8]) -> f64 {
    let hits = logits
        .row_iter()
        .zip(labels)
        .filter(|(r, &y)| {
            let mut best = 0;
            for c in 1..r.len() {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best == y as usize
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub(super) fn mnist(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(Vec<Value>, Map<String, Value>)> {
    let m: &MnistSettings = cfg
        .mnist
        .as_ref()
        .ok_or_else(|| Error::invalid("missing mnist section"))?;
    let train_set = mnist_load(&m.train_images, &m.train_labels)?;
    let test_set = mnist_load(&m.test_images, &m.test_labels)?;
    let base = cfg.train.clone().unwrap_or_else(mnist_default_train);
    let (su, sv) = mnist_specs(train_set.images.ncols(), m.hidden);
    let mut points = Vec::new();
    let mut curves = CsvTable::new(["point", "epoch", "loss", "test_accuracy"]);
    for (idx, (_, batch, n)) in cfg.sweep.points().into_iter().enumerate() {
        let n = n.min(train_set.images.nrows());
        let data = PairedDataset::new(
            train_set.images.rows(0, n).into_owned(),
            label_column(&train_set.labels[..n]),
            DatasetMeta {
                generator: "mnist".into(),
                params: json!({ "n": n }),
                seed: cfg.seed,
            },
        )?;
        let mut init = point_rng(cfg.seed, idx, 2);
        let (iu, iv) = (su.init(&mut init)?, sv.init(&mut init)?);
        let mut tc = base.clone();
        tc.batch_size = batch;
        tc.seed = point_rng(cfg.seed, idx, 3).next_u64();
        let mut probe = |_: usize, pu: &EncoderParams, _: &EncoderParams| -> Result<Vec<(String, f64)>> {
            let z = encode(&su, pu, &test_set.images)?;
            Ok(vec![("test_accuracy".to_string(), accuracy(&z, &test_set.labels))])
        };
        let (pu, _, h) = train_with_probe(&tc, &data, &su, &sv, &iu, &iv, Some(&mut probe))?;
        for (e, l) in h.loss.iter().enumerate() {
            curves.push(vec![idx.into(), (e + 1).into(), (*l).into(), h.metrics[e][0].1.into()]);
        }

        let z = encode(&su, &pu, &test_set.images)? / tc.tau;
        let mut probs = CsvTable::new(["image", "true_label", "label", "probability"]);
        for i in 0..z.nrows().min(20) {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let zs: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            for (c, x) in row.iter().enumerate() {
                probs.push(vec![
                    i.into(),
                    (test_set.labels[i] as usize).into(),
                    c.into(),
                    ((x - mx).exp() / zs).into(),
                ]);
            }
        }
        out.csv(&format!("label_probabilities_point{idx}"), &probs)?;

        // Images weighted by the model conditional of an image given each label.
        let index = EmbeddingIndex::with_row_ids(z.clone(), false)?;
        let mut weighted = CsvTable::new(["label", "rank", "image", "weight"]);
        for c in 0..10 {
            let col: Vec<f64> = z.column(c).iter().copied().collect();
            let mx = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let zs: f64 = col.iter().map(|x| (x - mx).exp()).sum();
            let mut q = vec![0.0; 10];
            q[c] = 1.0;
            for (rank, (row, s)) in retrieve_scored(&q, &index, 5.min(index.len()))?.into_iter().enumerate() {
                weighted.push(vec![
                    c.into(),
                    (rank + 1).into(),
                    row.into(),
                    ((s - mx).exp() / zs).into(),
                ]);
            }
        }
        out.csv(&format!("weighted_images_point{idx}"), &weighted)?;
        points.push(json!({
            "batch_size": batch, "n_samples": n,
            "test_accuracy": h.metrics.last().map(|m| m[0].1),
            "first_epoch_loss": h.loss.first(), "final_epoch_loss": h.loss.last(),
        }));
    }
    out.csv("accuracy_vs_epoch", &curves)?;
    Ok((points, Map::new()))
}
