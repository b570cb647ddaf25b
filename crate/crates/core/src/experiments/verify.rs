//! Fast analytic self-checks across every module.

use crate::crossmodal::{retrieve, EmbeddingIndex};
use crate::datagen::{sample_block_gaussian, velocity_eval, FlowConfig};
use crate::encoders::{
    similarity_matrix, Activation, EncoderFamily, EncoderParams, EncoderSpec, SimilarityBatch, Tilting,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    cond_loss_closed, exp_quadratic_expectation, joint_loss_closed, minimizer_cond, minimizer_joint,
    minimizer_quadratic_onesided, model_conditional, model_marginal_u, shrinkage_h, BlockGaussian, ModelTilting, Side,
    SolverConfig,
};
use crate::linalg::{Matrix, SeededRng, Vector};
use crate::losses::{loss_clip, loss_cond, loss_grad_scores, loss_joint, mmd_unbiased, Kernel, LossKind, Samples};
use crate::training::{adam_step, batch_gradients, train, AdamConfig, AdamState, TrainConfig};

/// Replaceable pieces, so that the suite can be shown to catch a defect.
pub struct VerifyHooks {
    pub shrinkage_h: Box<dyn Fn(f64) -> Result<f64>>,
}

impl Default for VerifyHooks {
    fn default() -> Self {
        VerifyHooks {
            shrinkage_h: Box::new(shrinkage_h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn batch(s: Matrix) -> SimilarityBatch {
    SimilarityBatch {
        s,
        tilting: Tilting::InnerProduct,
        tau: 1.0,
    }
}

fn clip_cond_log_n() -> Check {
    let mut rng = SeededRng::new(11);
    let mut worst: f64 = 0.0;
    for n in [2, 8, 64] {
        let s = batch(rng.normal_matrix(n, n) * 2.0);
        let d = loss_clip(&s).map_err(e2s)? - loss_cond(&s, 1.0, 1.0).map_err(e2s)? - (n as f64).ln();
        worst = worst.max(d.abs());
    }
    ensure(worst < 1e-12, || format!("deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn cond_symmetries() -> Check {
    let mut rng = SeededRng::new(12);
    for _ in 0..20 {
        let s = rng.normal_matrix(6, 6);
        let b = batch(s.clone());
        let halves = 0.5 * loss_cond(&b, 2.0, 0.0).map_err(e2s)? + 0.5 * loss_cond(&b, 0.0, 2.0).map_err(e2s)?;
        ensure((loss_cond(&b, 1.0, 1.0).map_err(e2s)? - halves).abs() < 1e-12, || {
            "half-split".into()
        })?;
        let t = batch(s.transpose());
        ensure(
            (loss_cond(&t, 0.2, 1.1).map_err(e2s)? - loss_cond(&b, 1.1, 0.2).map_err(e2s)?).abs() < 1e-12,
            || "transpose swaps weights".into(),
        )?;
        let sh = batch(s.add_scalar(3.7));
        ensure(
            (loss_clip(&sh).map_err(e2s)? - loss_clip(&b).map_err(e2s)?).abs() < 1e-12,
            || "shift".into(),
        )?;
        let pos: Vec<f64> = s.diagonal().iter().copied().collect();
        ensure(
            loss_cond(&b, 1.0, 1.0).map_err(e2s)? <= loss_joint(&pos, &s).map_err(e2s)? + 1e-12,
            || "cond above joint".into(),
        )?;
    }
    Ok("20 batches".into())
}

fn score_gradients() -> Check {
    let mut rng = SeededRng::new(13);
    let n = 4;
    let u = rng.normal_matrix(n, 2);
    let v = rng.normal_matrix(n, 2);
    let kinds = [
        LossKind::Clip,
        LossKind::Cond {
            lambda_u: 1.0,
            lambda_v: 0.5,
        },
        LossKind::Joint,
        LossKind::CondMmd {
            kernel: Kernel::default(),
            lambda_u: 1.0,
            lambda_v: 1.0,
        },
        LossKind::JointMmd {
            kernel: Kernel::Polynomial { degree: 2, offset: 1.0 },
        },
    ];
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let s = rng.normal_matrix(n, n);
        let smp = Some(Samples { u: &u, v: &v });
        let (_, g) = loss_grad_scores(&kind, &batch(s.clone()), smp).map_err(e2s)?;
        for k in 0..s.len() {
            let (mut p, mut m) = (s.clone(), s.clone());
            p[k] += 1e-5;
            m[k] -= 1e-5;
            let fp = loss_grad_scores(&kind, &batch(p), smp).map_err(e2s)?.0;
            let fm = loss_grad_scores(&kind, &batch(m), smp).map_err(e2s)?.0;
            let fd = (fp - fm) / 2e-5;
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1e-3));
        }
    }
    ensure(worst < 1e-5, || format!("relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn parameter_gradients() -> Check {
    let mut rng = SeededRng::new(14);
    let specs = [
        EncoderSpec::new(EncoderFamily::Affine { n_in: 3, n_e: 2 }).normalized(true),
        EncoderSpec::new(EncoderFamily::Mlp {
            layer_sizes: vec![3, 4, 2],
            activation: Activation::Tanh,
        }),
    ];
    let bu = rng.normal_matrix(5, 3);
    let bv = rng.normal_matrix(5, 3);
    let mut worst: f64 = 0.0;
    for tilting in [Tilting::InnerProduct, Tilting::L2Distance] {
        for (su, sv) in [(&specs[0], &specs[1]), (&specs[1], &specs[0])] {
            let pu = su.init(&mut rng).map_err(e2s)?;
            let pv = sv.init(&mut rng).map_err(e2s)?;
            let loss = LossKind::Cond {
                lambda_u: 1.0,
                lambda_v: 1.0,
            };
            let f = |pu: &EncoderParams| -> Result<f64> {
                Ok(batch_gradients(&loss, tilting, 0.5, (su, pu, &bu), (sv, &pv, &bv))?.loss)
            };
            let g = batch_gradients(&loss, tilting, 0.5, (su, &pu, &bu), (sv, &pv, &bv))
                .map_err(e2s)?
                .grad_u
                .ok_or("u encoder should be trainable")?;
            for k in 0..pu.len() {
                let (mut p, mut m) = (pu.clone(), pu.clone());
                p.as_mut_slice()[k] += 1e-5;
                m.as_mut_slice()[k] -= 1e-5;
                let fd = (f(&p).map_err(e2s)? - f(&m).map_err(e2s)?) / 2e-5;
                worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1e-3));
            }
        }
    }
    ensure(worst < 1e-5, || format!("relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn closed_form_minimizers() -> Check {
    let g = BlockGaussian::example_2d();
    let a_cond = minimizer_cond(&g, None).map_err(e2s)?[(0, 0)];
    let a_joint = minimizer_joint(&g, None).map_err(e2s)?[(0, 0)];
    let q = minimizer_quadratic_onesided(&g, None, &SolverConfig::default()).map_err(e2s)?;
    let m = model_conditional(&ModelTilting::Quadratic(q.clone()), Side::UGivenV, &g).map_err(e2s)?;
    for (name, got, want) in [
        ("A_cond", a_cond, 4.0 / 9.0),
        ("A_joint", a_joint, 1.0 / 3.0),
        ("A_quad", q.a[(0, 0)], 0.8),
        ("B_quad", q.b[(0, 0)], 8.0 / 15.0),
        ("quad gain", m.gain[(0, 0)], 2.0 / 3.0),
        ("quad cov", m.cov.as_matrix()[(0, 0)], 5.0 / 6.0),
    ] {
        ensure((got - want).abs() < 1e-10, || {
            format!("{name} = {got}, expected {want}")
        })?;
    }
    Ok("A_cond 4/9, A_quad (0.8, 8/15), A_joint 1/3".into())
}

fn shrinkage(hooks: &VerifyHooks) -> Check {
    let h = |s: f64| (hooks.shrinkage_h)(s).map_err(e2s);
    ensure((h(2.0 / 3.0)? - 0.5).abs() < 1e-12, || {
        format!("h(2/3) = {}", h(2.0 / 3.0).unwrap_or(f64::NAN))
    })?;
    for k in 1..=50 {
        let s = k as f64 / 50.0;
        let x = h(s)?;
        // h is the positive root of σh² + h − σ = 0.
        ensure((s * x * x + x - s).abs() < 1e-12 && x > 0.0 && x < s, || {
            format!("h({s}) = {x}")
        })?;
    }
    Ok("h(2/3) = 1/2".into())
}

fn marginal_ordering() -> Check {
    let g = BlockGaussian::example_2d();
    let joint = model_marginal_u(&minimizer_joint(&g, None).map_err(e2s)?, &g)
        .map_err(e2s)?
        .as_matrix()[(0, 0)];
    let cond = model_marginal_u(&minimizer_cond(&g, None).map_err(e2s)?, &g)
        .map_err(e2s)?
        .as_matrix()[(0, 0)];
    ensure((joint - 2.0).abs() < 1e-9 && (cond - 2.7).abs() < 1e-9, || {
        format!("joint {joint}, cond {cond}")
    })?;
    Ok("1.5 < 2.0 < 2.7".into())
}

fn random_block(rng: &mut SeededRng, nx: usize, ny: usize) -> Result<BlockGaussian> {
    let d = nx + ny;
    let w = rng.normal_matrix(d, d);
    let c = &w * w.transpose() + Matrix::identity(d, d) * 0.3;
    BlockGaussian::from_joint(&c, nx)
}

fn closed_cond_below_joint() -> Check {
    let mut rng = SeededRng::new(15);
    let mut tested = 0;
    for _ in 0..200 {
        let nx = 1 + (rng.uniform() * 3.0) as usize;
        let ny = 1 + (rng.uniform() * 3.0) as usize;
        let g = random_block(&mut rng, nx, ny).map_err(e2s)?;
        let a = rng.normal_matrix(nx, ny) * 0.05;
        let j = match joint_loss_closed(&a, &g) {
            Ok(j) => j,
            Err(Error::DivergentNormalizer(_)) => continue,
            Err(e) => return Err(e.to_string()),
        };
        let c = cond_loss_closed(&a, &g).map_err(e2s)?;
        ensure(c <= j + 1e-9, || format!("cond {c} > joint {j}"))?;
        tested += 1;
    }
    ensure(tested > 100, || format!("only {tested} finite cases"))?;
    Ok(format!("{tested} cases"))
}

fn exp_quadratic_mc() -> Check {
    let mut rng = SeededRng::new(16);
    let m = Vector::from_vec(vec![0.2, -0.1]);
    let lam = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
    let b = Matrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, -0.2]);
    let c = Vector::from_vec(vec![0.1, 0.3]);
    let exact = exp_quadratic_expectation(&m, &lam, &b, &c).map_err(e2s)?;
    let l = lam.clone().cholesky().ok_or("Λ not PD")?.l();
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let z = &m + &l * Vector::from_vec(vec![rng.normal(), rng.normal()]);
        acc += (0.5 * (z.transpose() * &b * &z)[(0, 0)] + c.dot(&z)).exp();
    }
    let rel = (acc / n as f64 / exact - 1.0).abs();
    ensure(rel < 0.02, || format!("relative error {rel:.3e}"))?;
    Ok(format!("relative error {rel:.1e}"))
}

fn mmd_sanity() -> Check {
    let mut rng = SeededRng::new(17);
    let x = rng.normal_matrix(100, 2);
    let zero = mmd_unbiased(&x, &x, &Kernel::default()).map_err(e2s)?;
    ensure(zero.abs() < 1e-12, || format!("identical samples give {zero}"))?;
    let y = rng.normal_matrix(100, 2).add_scalar(5.0);
    let z = rng.normal_matrix(100, 2);
    let far = mmd_unbiased(&x, &y, &Kernel::default()).map_err(e2s)?;
    let near = mmd_unbiased(&x, &z, &Kernel::default()).map_err(e2s)?;
    ensure(far > near, || format!("shifted {far} <= unshifted {near}"))?;
    Ok(format!("shifted {far:.3}, unshifted {near:.1e}"))
}

fn retrieval_mode() -> Check {
    let mut rng = SeededRng::new(18);
    for _ in 0..100 {
        let index = EmbeddingIndex::with_row_ids(rng.normal_matrix(15, 3), true).map_err(e2s)?;
        let q: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let s = &index.matrix * Vector::from_column_slice(&q);
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        let w: Vec<f64> = s.iter().map(|x| x.exp() / z).collect();
        let mode = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
        ensure(retrieve(&q, &index, 1).map_err(e2s)?[0] == mode.to_string(), || {
            "top-1 differs from mode".into()
        })?;
    }
    Ok("100 cases".into())
}

fn adam_quadratic() -> Check {
    let mut x = [1.0];
    let mut s = AdamState::new(1);
    for _ in 0..500 {
        let g = [2.0 * x[0]];
        adam_step(&mut x, &g, &mut s, &AdamConfig::new(0.1)).map_err(e2s)?;
    }
    ensure(x[0].abs() < 1e-3, || format!("x = {}", x[0]))?;
    Ok(format!("|x| = {:.1e}", x[0].abs()))
}

fn flow_divergence() -> Check {
    let mut rng = SeededRng::new(19);
    let cfg = FlowConfig::with_random_frequencies(1, 1e-4, 0.1, 10, &mut rng).map_err(e2s)?;
    let c: Vec<f64> = (0..2 * cfg.n_freqs).map(|_| rng.normal()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = [rng.uniform(), rng.uniform()];
        let t = rng.uniform() * 0.1;
        let dx = (velocity_eval(&c, &cfg, t, [x[0] + h, x[1]])[0] - velocity_eval(&c, &cfg, t, [x[0] - h, x[1]])[0])
            / (2.0 * h);
        let dy = (velocity_eval(&c, &cfg, t, [x[0], x[1] + h])[1] - velocity_eval(&c, &cfg, t, [x[0], x[1] - h])[1])
            / (2.0 * h);
        worst = worst.max((dx + dy).abs());
    }
    ensure(worst < 1e-4, || format!("divergence {worst:.3e}"))?;
    Ok(format!("max divergence {worst:.1e}"))
}

fn short_training() -> Check {
    let g = BlockGaussian::example_2d();
    let data = sample_block_gaussian(&g, 4000, &mut SeededRng::new(20)).map_err(e2s)?;
    let spec = EncoderSpec::new(EncoderFamily::Linear { n_in: 1, n_e: 1 });
    let mut rng = SeededRng::new(21);
    let (iu, iv) = (spec.init(&mut rng).map_err(e2s)?, spec.init(&mut rng).map_err(e2s)?);
    let mut cfg = TrainConfig::new(LossKind::Cond {
        lambda_u: 1.0,
        lambda_v: 1.0,
    });
    cfg.epochs = 40;
    cfg.batch_size = 256;
    cfg.learning_rate = 1e-2;
    let (pu, pv, h) = train(&cfg, &data, &spec, &spec, &iu, &iv).map_err(e2s)?;
    let (pu2, pv2, h2) = train(&cfg, &data, &spec, &spec, &iu, &iv).map_err(e2s)?;
    ensure(pu == pu2 && pv == pv2 && h.loss == h2.loss, || {
        "training is not deterministic".into()
    })?;
    let a = pu.as_slice()[0] * pv.as_slice()[0];
    ensure((a - 4.0 / 9.0).abs() < 0.06, || format!("trained A = {a}"))?;
    ensure(h.loss.last() <= h.loss.first(), || "loss increased".into())?;
    Ok(format!("trained A = {a:.4}"))
}

fn similarity_shapes() -> Check {
    let mut rng = SeededRng::new(22);
    let eu = rng.normal_matrix(3, 2);
    let ev = rng.normal_matrix(3, 2);
    let a = similarity_matrix(&eu, &ev, Tilting::L2Distance, 1.0).map_err(e2s)?;
    ensure(a.s.iter().all(|x| *x <= 0.0), || {
        "L2 tilting must be nonpositive".into()
    })?;
    Ok("ok".into())
}

/// Runs every check, calling `report` as each finishes.
pub fn verify_with(hooks: &VerifyHooks, mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let checks: Vec<(&'static str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("clip_cond_log_n", Box::new(clip_cond_log_n)),
        ("cond_loss_symmetries", Box::new(cond_symmetries)),
        ("score_gradients", Box::new(score_gradients)),
        ("parameter_gradients", Box::new(parameter_gradients)),
        ("similarity_tiltings", Box::new(similarity_shapes)),
        ("closed_form_minimizers", Box::new(closed_form_minimizers)),
        ("shrinkage_h", Box::new(|| shrinkage(hooks))),
        ("model_marginal_ordering", Box::new(marginal_ordering)),
        ("closed_cond_below_joint", Box::new(closed_cond_below_joint)),
        ("exp_quadratic_monte_carlo", Box::new(exp_quadratic_mc)),
        ("mmd_sanity", Box::new(mmd_sanity)),
        ("retrieval_mode", Box::new(retrieval_mode)),
        ("adam_quadratic", Box::new(adam_quadratic)),
        ("flow_divergence_free", Box::new(flow_divergence)),
        ("short_training_run", Box::new(short_training)),
    ];
    let mut out = Vec::new();
    for (name, f) in checks {
        let (passed, detail) = match f() {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let o = CheckOutcome { name, passed, detail };
        report(&o);
        out.push(o);
    }
    out
}

pub fn verify() -> Vec<CheckOutcome> {
    verify_with(&VerifyHooks::default(), |_| {})
}
