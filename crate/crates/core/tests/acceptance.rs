//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Built without the libtest harness so the lines are always shown.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use hieb_core::checkpoint::{decode_checkpoint, encode_checkpoint};
use hieb_core::data::{
    gen_synthetic, holdout_split, parse_idx, read_hebd, write_hebd, write_idx, IdxHeader, LabeledDataset, SyntheticSpec,
};
use hieb_core::diffcore::{Activation, AdamConfig, Grads, Init, ParamStore};
use hieb_core::ebm::{prior_grad, LatentStack, NegEnergy, QuadraticTilt};
use hieb_core::eval::{
    auprc, auroc, energy_profile, flip_rate, mig_scores, probe_layer, recon_mse, score_dataset, ProbeConfig,
    ScoredExample,
};
use hieb_core::generator::GeneratorSpec;
use hieb_core::inference::{draw_noise, reparam_sample, InferenceSpec};
use hieb_core::langevin::langevin_sample;
use hieb_core::rng::{self, seeded};
use hieb_core::trainer::{
    elbo_estimate, elbo_with_noise, fit, loss_report, posterior_noise, train_step, ElboVariant, LrSchedule,
};
use hieb_core::{EnergyNet, GeneratorNet, InferenceNet, Model, ModelSpec, TrainConfig, TrainState};
use num_rational::Ratio;
use rand::Rng;

type R<T> = Result<T, String>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> R<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------- 1

/// Largest entrywise `|a − n| / max(|a|, |n|, FLOOR)`.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-6;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

const H: f64 = 1e-5;

/// Central differences of `f` over every entry of `store`.
fn fd_params(store: &mut ParamStore<f64>, f: &mut dyn FnMut(&ParamStore<f64>) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for idx in 0..store.len() {
        for j in 0..store.value(idx).len() {
            let orig = store.value(idx)[j];
            store.value_mut(idx)[j] = orig + H;
            let up = f(store);
            store.value_mut(idx)[j] = orig - H;
            let down = f(store);
            store.value_mut(idx)[j] = orig;
            out.push((up - down) / (2.0 * H));
        }
    }
    out
}

fn fd_vec(x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(&x);
            x[i] = orig - H;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_dims(r: &mut impl Rng) -> Vec<usize> {
    let l = r.random_range(1..=3);
    (0..l).map(|_| r.random_range(1..=4)).collect()
}

fn criterion_1() -> R<Outcome> {
    let mut r = seeded(101);
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let dims = random_dims(&mut r);
        let d: usize = dims.iter().sum();
        let obs = r.random_range(2..=32);
        let hidden = r.random_range(3..=10);

        // Energy: f(z) w.r.t. α and z.
        let mut net = EnergyNet::<f64>::new(&dims, r.random_range(2..=12), Init::ScaledUniform, &mut r).map_err(e)?;
        let z: Vec<f64> = rng::normal_vec(&mut r, d);
        let mut g = Grads::zeros_like(net.params());
        net.accumulate_param_grad(&z, 1.0, &mut g).map_err(e)?;
        let (_, gz) = net.value_and_grad(&z).map_err(e)?;
        let zc = z.clone();
        let frozen = net.clone();
        let num = fd_params(net.params_mut(), &mut |p| {
            let mut n = frozen.clone();
            *n.params_mut() = p.clone();
            n.value(&zc).unwrap()
        });
        worst = worst.max(rel_err(&g.flat(), &num));
        worst = worst.max(rel_err(&gz, &fd_vec(&z, &mut |v| net.value(v).unwrap())));

        // Generator: log p(x|z) w.r.t. β and each latent layer.
        let mut gs = GeneratorSpec::<f64>::new(&dims, obs, hidden);
        gs.sigma = 0.3 + trial as f64 * 0.1;
        let mut gen = GeneratorNet::new(gs, Init::ScaledUniform, &mut r).map_err(e)?;
        let x: Vec<f64> = rng::normal_vec(&mut r, obs);
        let zs = LatentStack::from_flat(&dims, &z).map_err(e)?;
        let mut g = Grads::zeros_like(gen.params());
        let (_, dz) = gen.log_likelihood_grads(&x, &zs, Some(&mut g)).map_err(e)?;
        let frozen = gen.clone();
        let num = fd_params(gen.params_mut(), &mut |p| {
            let mut n = frozen.clone();
            *n.params_mut() = p.clone();
            n.log_likelihood(&x, &zs).unwrap()
        });
        worst = worst.max(rel_err(&g.flat(), &num));
        let num = fd_vec(&z, &mut |v| gen.log_likelihood(&x, &LatentStack::from_flat(&dims, v).unwrap()).unwrap());
        worst = worst.max(rel_err(&dz.concat(), &num));

        // Inference: a random linear functional of (μ, log σ²) w.r.t. φ and x.
        let is = InferenceSpec::new(obs, &dims, hidden);
        let mut inf = InferenceNet::<f64>::new(is, Init::ScaledUniform, &mut r).map_err(e)?;
        let wm: Vec<Vec<f64>> = dims.iter().map(|&k| rng::normal_vec(&mut r, k)).collect();
        let wv: Vec<Vec<f64>> = dims.iter().map(|&k| rng::normal_vec(&mut r, k)).collect();
        let objective = |n: &InferenceNet<f64>, x: &[f64]| {
            let pp = n.infer(x).unwrap();
            let mut acc = 0.0;
            for i in 0..dims.len() {
                for j in 0..dims[i] {
                    acc += wm[i][j] * pp.means[i][j] + wv[i][j] * pp.logvars[i][j];
                }
            }
            acc
        };
        let trace = inf.infer_traced(&x).map_err(e)?;
        let mut g = Grads::zeros_like(inf.params());
        let dx = inf.backward(&trace, &wm, &wv, &mut g).map_err(e)?;
        let frozen = inf.clone();
        let num = fd_params(inf.params_mut(), &mut |p| {
            let mut n = frozen.clone();
            *n.params_mut() = p.clone();
            objective(&n, &x)
        });
        worst = worst.max(rel_err(&g.flat(), &num));
        worst = worst.max(rel_err(&dx, &fd_vec(&x, &mut |v| objective(&inf, v))));
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 6 random instances of each network"))
}

// ---------------------------------------------------------------- 2

/// Variance of `p(z) ∝ exp(a z² − z²/2)` by trapezoidal quadrature.
fn quadrature_variance(a: f64) -> f64 {
    let (lo, hi, n) = (-40.0, 40.0, 400_000);
    let h = (hi - lo) / n as f64;
    let (mut z0, mut z2) = (0.0, 0.0);
    for i in 0..=n {
        let z: f64 = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let p = (a * z * z - 0.5 * z * z).exp() * w;
        z0 += p;
        z2 += p * z * z;
    }
    z2 / z0
}

fn moments(samples: &[LatentStack<f64>]) -> (f64, f64) {
    let v: Vec<f64> = samples.iter().map(|s| s.layer(0)[0]).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

fn criterion_2() -> R<Outcome> {
    let closed: f64 = 1.0 / (1.0 - 2.0 * 0.25);
    let quad = quadrature_variance(0.25);
    let cfg = hieb_core::LangevinConfig::new(2000, 0.05, 10_000, 2024);
    let tilt = QuadraticTilt { dim: 1, a: 0.25 };
    let (_, var) = moments(&langevin_sample(&tilt, &[1], &cfg).map_err(e)?);
    let flat = QuadraticTilt { dim: 1, a: 0.0 };
    let (m0, v0) = moments(&langevin_sample(&flat, &[1], &cfg).map_err(e)?);
    let pass = (closed - 2.0).abs() < 1e-15
        && (quad - 2.0).abs() < 1e-9
        && (1.90..=2.10).contains(&var)
        && (0.95..=1.05).contains(&v0)
        && m0.abs() < 0.05;
    outcome(
        pass,
        format!("oracle 2.0 (quadrature {quad:.10}); tilted sample variance {var:.4}; control mean {m0:.4}, variance {v0:.4}"),
    )
}

// ---------------------------------------------------------------- 3

fn small_model(seed: u64) -> R<(Model<f64>, Vec<Vec<f64>>)> {
    let mut spec = ModelSpec::<f64>::new(&[2, 3], 6, 8);
    spec.nef = 8;
    let model = Model::new(&spec, seed).map_err(e)?;
    let mut r = seeded(seed + 1);
    let data = (0..5).map(|_| rng::normal_vec::<f64, _>(&mut r, 6).iter().map(|v| v.tanh()).collect()).collect();
    Ok((model, data))
}

/// Per-example bound `log p(x|z) + f(z) − KL(q‖p_0)` written out from the
/// network outputs alone.
fn hand_elbo(model: &Model<f64>, x: &[f64], eps: &LatentStack<f64>) -> f64 {
    let pp = model.inference.infer(x).unwrap();
    let mut z = Vec::new();
    let mut kl = 0.0;
    for (i, (m, v)) in pp.means.iter().zip(&pp.logvars).enumerate() {
        for j in 0..m.len() {
            z.push(m[j] + (0.5 * v[j]).exp() * eps.layer(i)[j]);
            kl += 0.5 * (v[j].exp() + m[j] * m[j] - 1.0 - v[j]);
        }
    }
    let dims = pp.dims();
    let mean = model.generator.decode(&LatentStack::from_flat(&dims, &z).unwrap()).unwrap();
    let s2 = model.generator.sigma().powi(2);
    let sq: f64 = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let loglik = -sq / (2.0 * s2) - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * s2).ln();
    loglik + model.energy.value(&z).unwrap() - kl
}

fn criterion_3() -> R<Outcome> {
    let (model, data) = small_model(31)?;
    let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
    let dims = model.latent_dims().to_vec();
    let state = TrainState::new(model.clone(), 77);
    let mut cfg = TrainConfig::<f64>::new(10, batch.len(), 77);
    cfg.langevin.steps = 3;
    let report = loss_report(&state, &batch, &cfg).map_err(e)?;
    let noise: Vec<Vec<LatentStack<f64>>> =
        (0..batch.len()).map(|i| vec![posterior_noise(77, 0, i, &dims)]).collect();
    let estimate = elbo_with_noise(&model, &batch, &noise, ElboVariant::AnalyticKl).map_err(e)?;
    let by_hand: f64 = batch.iter().zip(&noise).map(|(x, n)| hand_elbo(&model, x, &n[0])).sum::<f64>() / batch.len() as f64;
    let identity = (report.elbo_unnorm - estimate).abs().max((estimate - by_hand).abs());

    // ∇_φ and ∇_β of the per-batch loss through frozen noise.
    let eps: Vec<LatentStack<f64>> = noise.iter().map(|n| n[0].clone()).collect();
    let pairs: Vec<(&[f64], &LatentStack<f64>)> = batch.iter().copied().zip(&eps).collect();
    let g_phi = model.inference.inf_grad(&model.energy, &model.generator, &pairs).map_err(e)?;
    let loss_phi = |inf: &InferenceNet<f64>| {
        batch
            .iter()
            .zip(&eps)
            .map(|(x, n)| inf.example_terms(&model.energy, &model.generator, x, n).unwrap().loss())
            .sum::<f64>()
            / batch.len() as f64
    };
    let mut inf = model.inference.clone();
    let frozen = inf.clone();
    let num_phi = fd_params(inf.params_mut(), &mut |p| {
        let mut n = frozen.clone();
        *n.params_mut() = p.clone();
        loss_phi(&n)
    });
    let zs: Vec<LatentStack<f64>> = batch
        .iter()
        .zip(&eps)
        .map(|(x, n)| reparam_sample(&model.inference.infer(x).unwrap(), n).unwrap())
        .collect();
    let zpairs: Vec<(&[f64], &LatentStack<f64>)> = batch.iter().copied().zip(&zs).collect();
    let mut g_beta = model.generator.gen_grad(&zpairs).map_err(e)?;
    g_beta.scale(-1.0);
    let mut gen = model.generator.clone();
    let frozen = gen.clone();
    let num_beta = fd_params(gen.params_mut(), &mut |p| {
        let mut n = frozen.clone();
        *n.params_mut() = p.clone();
        -zpairs.iter().map(|(x, z)| n.log_likelihood(x, z).unwrap()).sum::<f64>() / zpairs.len() as f64
    });
    let (rp, rb) = (rel_err(&g_phi.flat(), &num_phi), rel_err(&g_beta.flat(), &num_beta));
    outcome(
        identity < 1e-10 && rp < 1e-4 && rb < 1e-4,
        format!("decomposition vs estimate {identity:.1e}; grad rel error phi {rp:.2e}, beta {rb:.2e}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> R<Outcome> {
    let dims = [2, 2];
    let mut net = EnergyNet::<f64>::new(&dims, 16, Init::ScaledUniform, &mut seeded(4)).map_err(e)?;
    let mut r = seeded(5);
    let batch = |r: &mut rand_chacha::ChaCha8Rng, shift: f64| -> Vec<LatentStack<f64>> {
        (0..32)
            .map(|_| draw_noise::<f64, _>(&dims, r))
            .map(|z| LatentStack::from_flat(&dims, &z.concat().iter().map(|v| v + shift).collect::<Vec<_>>()).unwrap())
            .collect()
    };
    let same = batch(&mut r, 0.0);
    let g0 = prior_grad(&net, &same, &same).map_err(e)?;
    let exact_zero = g0.flat().iter().all(|&v| v == 0.0);

    let pos = batch(&mut r, 0.7);
    let neg = batch(&mut r, -0.3);
    let gap = |n: &EnergyNet<f64>| {
        let m = |b: &[LatentStack<f64>]| b.iter().map(|z| n.value(&z.concat()).unwrap()).sum::<f64>() / b.len() as f64;
        m(&pos) - m(&neg)
    };
    let before = gap(&net);
    let mut g = prior_grad(&net, &pos, &neg).map_err(e)?;
    g.scale(-1.0);
    net.params_mut().set_grads(&g, 1.0).map_err(e)?;
    net.params_mut().adam_step(&AdamConfig::with_lr(1e-4)).map_err(e)?;
    let after = gap(&net);
    outcome(
        exact_zero && after > before,
        format!("identical batches give an all-zero gradient: {exact_zero}; gap {before:.6} -> {after:.6}"),
    )
}

// ---------------------------------------------------------------- 5

/// Closed-form posterior mean of `z ~ N(0, I)`, `x = W z + b + N(0, σ² I)`.
fn conjugate_mean(w: &[Vec<f64>], b: &[f64], s2: f64, x: &[f64]) -> Vec<f64> {
    let d = w[0].len();
    // Precision I + WᵀW/σ² (2×2 here) and its inverse.
    let mut p = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            p[i][j] = if i == j { 1.0 } else { 0.0 } + w.iter().map(|row| row[i] * row[j]).sum::<f64>() / s2;
        }
    }
    let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    let inv = [[p[1][1] / det, -p[0][1] / det], [-p[1][0] / det, p[0][0] / det]];
    let rhs: Vec<f64> = (0..d).map(|j| w.iter().zip(x).zip(b).map(|((row, xi), bi)| row[j] * (xi - bi)).sum::<f64>() / s2).collect();
    (0..d).map(|i| (0..d).map(|j| inv[i][j] * rhs[j]).sum()).collect()
}

fn criterion_5() -> R<Outcome> {
    let (latent, obs) = (2, 4);
    let mut spec = ModelSpec::<f64>::new(&[latent], obs, 8);
    spec.nef = 0;
    spec.generator.hidden_layers = 0;
    spec.generator.output_activation = Activation::Identity;
    spec.generator.sigma = 0.5;
    spec.inference.hidden_layers = 0;
    spec.inference.feature_dims = vec![8];
    spec.inference.activation = Activation::Identity;
    let model = Model::new(&spec, 55).map_err(e)?;

    // Read W and b off the decoder.
    let b = model.generator.decode(&LatentStack::zeros(&[latent])).map_err(e)?;
    let mut w = vec![vec![0.0; latent]; obs];
    for j in 0..latent {
        let mut unit = vec![0.0; latent];
        unit[j] = 1.0;
        let col = model.generator.decode(&LatentStack::new(vec![unit]).map_err(e)?).map_err(e)?;
        for i in 0..obs {
            w[i][j] = col[i] - b[i];
        }
    }
    let mut r = seeded(56);
    let n = 512;
    let mut rows = Vec::with_capacity(n * obs);
    for _ in 0..n {
        let z: Vec<f64> = rng::normal_vec(&mut r, latent);
        for i in 0..obs {
            rows.push(b[i] + (0..latent).map(|j| w[i][j] * z[j]).sum::<f64>() + 0.5 * rng::normal::<f64, _>(&mut r));
        }
    }
    let ds = LabeledDataset::new(obs, rows, vec![0; n], 1).map_err(e)?;

    let steps = 20_000;
    let mut state = TrainState::new(model, 57);
    let mut cfg = TrainConfig::<f64>::new(steps, 32, 57);
    cfg.lr_prior = 0.0;
    cfg.lr_gen = 0.0;
    cfg.lr_inf = 3e-3;
    cfg.langevin.steps = 1;
    cfg.schedule = LrSchedule::LinearDecay;
    fit(&mut state, &ds, &cfg, |_, _| Ok(())).map_err(e)?;

    let (mut err2, mut ref2) = (0.0, 0.0);
    for x in ds.rows() {
        let exact = conjugate_mean(&w, &b, 0.25, x);
        let got = &state.model.inference.infer(x).map_err(e)?.means[0];
        for (g, t) in got.iter().zip(&exact) {
            err2 += (g - t).powi(2);
            ref2 += t * t;
        }
    }
    let rel = (err2 / ref2).sqrt();
    outcome(rel < 0.02, format!("relative error of inferred means {:.3}% after {steps} steps", rel * 100.0))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> R<Outcome> {
    // Documented budget: 4000 iterations, batch 64, K = 40 at s = 0.4.
    let spec = SyntheticSpec {
        n_classes: 3,
        levels: 2,
        n_samples: 3000,
        noise_std: 0.1,
        seed: 0,
        amplitudes: (0.25, 0.6, 0.15),
        style_bend: 3.0,
        ..Default::default()
    };
    let (ds, templates) = gen_synthetic::<f64>(&spec).map_err(e)?;
    let oracle = templates.oracle();
    let mut ms = ModelSpec::<f64>::new(&[2, 2], 64, 64);
    ms.generator.feature_dims = vec![32];
    ms.nef = 50;
    let mut state = TrainState::new(Model::new(&ms, 0).map_err(e)?, 0);
    let mut cfg = TrainConfig::<f64>::new(4000, 64, 0);
    cfg.lr_gen = 1e-4;
    cfg.lr_inf = 1e-4;
    cfg.lr_prior = 5e-5;
    cfg.langevin.steps = 40;
    cfg.langevin.step_size = 0.4;
    fit(&mut state, &ds, &cfg, |_, _| Ok(())).map_err(e)?;
    let model = &state.model;

    let pc = ProbeConfig { epochs: 10, ..Default::default() };
    let p0 = probe_layer(model, &ds, 0, &pc).map_err(e)?;
    let p1 = probe_layer(model, &ds, 1, &pc).map_err(e)?;
    let rows: Vec<&[f64]> = (0..100).map(|i| ds.row(i)).collect();
    let lc = hieb_core::LangevinConfig::new(40, 0.4, 1, 7);
    let f0 = flip_rate(model, &oracle, &rows, 0, 5, &lc).map_err(e)?;
    let f1 = flip_rate(model, &oracle, &rows, 1, 5, &lc).map_err(e)?;
    let mse = recon_mse(model, &ds).map_err(e)?;
    let ratio = mse / ds.variance();
    TRAINED_RATIO.with(|c| c.set(Some(ratio)));
    outcome(
        p1 - p0 >= 0.15 && f1 - f0 >= 0.3,
        format!("probe bottom {p0:.3} top {p1:.3}; flip rate bottom {f0:.2} top {f1:.2}"),
    )
}

thread_local! {
    static TRAINED_RATIO: std::cell::Cell<Option<f64>> = const { std::cell::Cell::new(None) };
    static ANOMALY_MODEL: std::cell::RefCell<Option<Model<f64>>> = const { std::cell::RefCell::new(None) };
}

// ---------------------------------------------------------------- 7

fn synthetic_config(iterations: u64, nef: usize, seed: u64) -> (ModelSpec<f64>, TrainConfig<f64>) {
    let mut ms = ModelSpec::<f64>::new(&[2, 2], 64, 64);
    ms.generator.feature_dims = vec![32];
    ms.nef = nef;
    let mut cfg = TrainConfig::<f64>::new(iterations, 64, seed);
    cfg.lr_gen = 1e-4;
    cfg.lr_inf = 1e-4;
    cfg.lr_prior = 5e-5;
    cfg.langevin.step_size = 0.4;
    (ms, cfg)
}

fn criterion_7() -> R<Outcome> {
    let spec = SyntheticSpec { n_samples: 3000, seed: 7, ..Default::default() };
    let (ds, _) = gen_synthetic::<f64>(&spec).map_err(e)?;
    let (train, test) = ds.split(0.8, 70).map_err(e)?;
    let split = holdout_split(&train, 1).map_err(e)?;
    let flags: Vec<bool> = test.labels.iter().map(|&l| l == 1).collect();
    let (ms, cfg) = synthetic_config(2000, 50, 7);
    let mut state = TrainState::new(Model::new(&ms, 7).map_err(e)?, 7);
    let mut history = Vec::new();
    fit(&mut state, &split.train, &cfg, |st, _| {
        if st.t > 1000 && st.t % 100 == 0 {
            let scored = score_dataset(&st.model, &test, &flags, 4, st.t)?;
            history.push(auprc(&scored)?);
        }
        Ok(())
    })
    .map_err(e)?;
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let sd = (history.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let chance = flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64;
    ANOMALY_MODEL.with(|m| *m.borrow_mut() = Some(state.model.clone()));
    outcome(
        mean >= 0.8,
        format!("AUPRC {mean:.3} ± {sd:.3} over the last {} evaluations (chance {chance:.3})", history.len()),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> R<Outcome> {
    let model = ANOMALY_MODEL
        .with(|m| m.borrow().clone())
        .ok_or("criterion 7 did not leave a trained model")?;
    let cfg = hieb_core::LangevinConfig::new(2500, 0.4, 16, 88);
    let profile = energy_profile(&model.energy, model.latent_dims(), None, &cfg, 100).map_err(e)?;
    let finite = profile.per_chain.iter().flatten().all(|v| v.is_finite());
    let (slope, se) = profile.last_quartile_slope();
    outcome(
        finite && slope.abs() <= 2.0 * se,
        format!("last-quartile slope {slope:.2e} (se {se:.2e}) over 16 chains; all finite: {finite}"),
    )
}

// ---------------------------------------------------------------- 9

fn oracle_rank_metrics(scores: &[u8], labels: &[bool]) -> (Ratio<i64>, Ratio<i64>) {
    let pos = labels.iter().filter(|&&l| l).count() as i64;
    let neg = labels.len() as i64 - pos;
    // AUROC: probability a positive outranks a negative, ties counting half.
    let mut wins = Ratio::from_integer(0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                if scores[i] > scores[j] {
                    wins += Ratio::from_integer(1);
                } else if scores[i] == scores[j] {
                    wins += Ratio::new(1, 2);
                }
            }
        }
    }
    let roc = wins / Ratio::from_integer(pos * neg);
    // AUPRC: flag everything at or above each distinct threshold.
    let mut thresholds: Vec<u8> = scores.to_vec();
    thresholds.sort_unstable_by(|a, b| b.cmp(a));
    thresholds.dedup();
    let mut ap = Ratio::from_integer(0);
    let mut prev_recall = Ratio::from_integer(0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as i64;
        let flagged = scores.iter().filter(|&&s| s >= t).count() as i64;
        let recall = Ratio::new(tp, pos);
        ap += (recall - prev_recall) * Ratio::new(tp, flagged);
        prev_recall = recall;
    }
    (ap, roc)
}

fn to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn criterion_9() -> R<Outcome> {
    let mut cases = 0u64;
    let mut worst: f64 = 0.0;
    for n in 2..=8usize {
        // Scores from {0, 1, 2} so ties are common; every label pattern with
        // both classes present.
        let score_sets = 3usize.pow(n as u32);
        for code in 0..score_sets {
            let mut c = code;
            let scores: Vec<u8> = (0..n)
                .map(|_| {
                    let s = (c % 3) as u8;
                    c /= 3;
                    s
                })
                .collect();
            for mask in 1..(1u32 << n) - 1 {
                let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let ex: Vec<ScoredExample> = scores
                    .iter()
                    .zip(&labels)
                    .map(|(&s, &positive)| ScoredExample { score: s as f64, positive })
                    .collect();
                let (ap, roc) = oracle_rank_metrics(&scores, &labels);
                worst = worst.max((auprc(&ex).map_err(e)? - to_f64(ap)).abs());
                worst = worst.max((auroc(&ex).map_err(e)? - to_f64(roc)).abs());
                cases += 1;
            }
        }
    }
    outcome(
        worst <= 4.0 * f64::EPSILON,
        format!("{cases} labeled score sets of size 2..=8; largest deviation from the exact rational oracle {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> R<Outcome> {
    let spec = SyntheticSpec { n_samples: 256, seed: 10, ..Default::default() };
    let (ds, _) = gen_synthetic::<f64>(&spec).map_err(e)?;
    let run = || -> R<(Vec<String>, TrainState<f64>)> {
        let mut ms = ModelSpec::<f64>::new(&[2, 2], 64, 16);
        ms.nef = 16;
        let mut state = TrainState::new(Model::new(&ms, 10).map_err(e)?, 10);
        let mut cfg = TrainConfig::<f64>::new(40, 32, 10);
        cfg.langevin.steps = 10;
        cfg.langevin.step_size = 0.4;
        let mut rows = Vec::new();
        fit(&mut state, &ds, &cfg, |_, m| {
            rows.push(format!("{},{},{},{},{},{}", m.iter, m.recon_nll, m.kl_ref, m.e_pos, m.e_neg, m.elbo_unnorm));
            Ok(())
        })
        .map_err(e)?;
        Ok((rows, state))
    };
    let (a, sa) = run()?;
    let (b, _) = run()?;
    let metrics_identical = a.join("\n").into_bytes() == b.join("\n").into_bytes();

    let hash = [3u8; 32];
    let bytes = encode_checkpoint(&sa, &hash);
    let mut restored = decode_checkpoint(&bytes, Model::new(&ModelSpec { nef: 16, ..ModelSpec::new(&[2, 2], 64, 16) }, 99).map_err(e)?, Some(&hash))
        .map_err(e)?;
    let mut original = sa.clone();
    let batch: Vec<&[f64]> = (0..32).map(|i| ds.row(i)).collect();
    let mut cfg = TrainConfig::<f64>::new(100, 32, 10);
    cfg.langevin.steps = 10;
    cfg.langevin.step_size = 0.4;
    let mut resume_exact = restored == original;
    for _ in 0..5 {
        resume_exact &= train_step(&mut original, &batch, &cfg).map_err(e)? == train_step(&mut restored, &batch, &cfg).map_err(e)?;
    }
    resume_exact &= encode_checkpoint(&original, &hash) == encode_checkpoint(&restored, &hash);

    let pixels: Vec<u8> = (0..3 * 28 * 28).map(|i| (i * 131 % 256) as u8).collect();
    let header = IdxHeader::new(vec![3, 28, 28]).map_err(e)?;
    let idx = write_idx(&header, &pixels).map_err(e)?;
    let parsed = parse_idx(&idx).map_err(e)?;
    let idx_exact = parsed.payload == pixels && write_idx(&parsed.header, &parsed.payload).map_err(e)? == idx;
    let hebd = write_hebd(&ds);
    let back = read_hebd::<f64>(&hebd).map_err(e)?;
    let hebd_exact = write_hebd(&back) == hebd
        && back.raw().iter().zip(ds.raw()).all(|(x, y)| x.to_bits() == y.to_bits())
        && back.labels == ds.labels;
    outcome(
        metrics_identical && resume_exact && idx_exact && hebd_exact,
        format!(
            "repeated metrics identical: {metrics_identical}; resume bit-exact: {resume_exact}; IDX round trip: {idx_exact}; HEBD round trip: {hebd_exact}"
        ),
    )
}

// ---------------------------------------------------------------- 11

/// `I(a; b)` in nats from raw co-occurrence counts.
fn counted_mi<A: std::hash::Hash + Eq + Copy, B: std::hash::Hash + Eq + Copy>(a: &[A], b: &[B]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(A, B), f64> = HashMap::new();
    let mut pa: HashMap<A, f64> = HashMap::new();
    let mut pb: HashMap<B, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    joint.iter().map(|(&(x, y), &c)| c / n * (c * n / (pa[&x] * pb[&y])).ln()).sum()
}

fn criterion_11() -> R<Outcome> {
    let n = 600;
    let class: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let unit0: Vec<f64> = class.iter().map(|&c| c as f64).collect();
    let unit1: Vec<f64> = (0..n).map(|i| (i / 3) as f64).collect();
    let (mig, _) = mig_scores(&[unit0.clone(), unit1.clone()], &[class.clone()]).map_err(e)?;
    let to_key = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let h = counted_mi(&class, &class);
    let oracle_gap = (counted_mi(&to_key(&unit0), &class) - counted_mi(&to_key(&unit1), &class)) / h;

    let mut r = seeded(11);
    let m = 10_000;
    let noise: Vec<Vec<f64>> = (0..6).map(|_| rng::normal_vec(&mut r, m)).collect();
    let factors = vec![(0..m).map(|i| i % 3).collect(), (0..m).map(|i| (i / 3) % 10).collect()];
    let (noise_mig, _) = mig_scores(&noise, &factors).map_err(e)?;
    outcome(
        (mig - 1.0).abs() < 1e-12 && (oracle_gap - 1.0).abs() < 1e-12 && noise_mig < 0.05,
        format!("class-aligned unit gap {mig:.12} (counting oracle {oracle_gap:.12}); noise latents MIG {noise_mig:.4}"),
    )
}

// ---------------------------------------------------------------- extras

fn trained_reconstruction() -> R<Outcome> {
    let ratio = TRAINED_RATIO.with(|c| c.get()).ok_or("criterion 6 did not leave a trained model")?;
    outcome(ratio < 0.25, format!("hierarchy run reconstruction MSE / data variance {ratio:.3}"))
}

fn nef_direction() -> R<Outcome> {
    let spec = SyntheticSpec { n_samples: 2000, seed: 12, ..Default::default() };
    let (ds, _) = gen_synthetic::<f64>(&spec).map_err(e)?;
    let (train, test) = ds.split(0.8, 120).map_err(e)?;
    let rows: Vec<&[f64]> = test.rows().collect();
    let mut elbo = Vec::new();
    for nef in [0, 50] {
        let (ms, cfg) = synthetic_config(1500, nef, 12);
        let mut state = TrainState::new(Model::new(&ms, 12).map_err(e)?, 12);
        fit(&mut state, &train, &cfg, |_, _| Ok(())).map_err(e)?;
        elbo.push(elbo_estimate(&state.model, &rows, 8, 121, ElboVariant::MonteCarlo).map_err(e)?);
    }
    outcome(
        elbo[0] <= elbo[1],
        format!("test ELBO-unnorm after 1500 iterations: nef = 0 {:.3}, nef = 50 {:.3}", elbo[0], elbo[1]),
    )
}

fn main() {
    let criteria: Vec<(&str, &str, Duration, fn() -> R<Outcome>)> = vec![
        ("1", "gradient fidelity", Duration::from_secs(30), criterion_1),
        ("2", "sampler exactness", Duration::from_secs(60), criterion_2),
        ("3", "ELBO identity", Duration::MAX, criterion_3),
        ("4", "contrastive fixed point", Duration::MAX, criterion_4),
        ("5", "conjugate posterior", Duration::from_secs(300), criterion_5),
        ("6", "hierarchy trend", Duration::from_secs(900), criterion_6),
        ("7", "anomaly direction", Duration::from_secs(900), criterion_7),
        ("8", "energy plateau", Duration::MAX, criterion_8),
        ("9", "AUPRC/AUROC oracle", Duration::MAX, criterion_9),
        ("10", "determinism and persistence", Duration::MAX, criterion_10),
        ("11", "MIG sanity", Duration::MAX, criterion_11),
        ("extra", "trained reconstruction", Duration::MAX, trained_reconstruction),
        ("extra", "nef = 0 vs nef = 50", Duration::MAX, nef_direction),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && took <= budget, o.detail),
            Err(msg) => (false, format!("error: {msg}")),
        };
        if !pass {
            failed += 1;
        }
        let limit = if budget == Duration::MAX { String::new() } else { format!(", limit {}s", budget.as_secs()) };
        println!(
            "{} criterion {id} ({name}): {detail} [{:.1}s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
