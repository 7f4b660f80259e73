//! Joint training of prior, generator and inference networks.
//!
//! Each iteration draws `m` prior samples by short-run Langevin and `m`
//! posterior samples by reparameterisation, then updates α, β and φ in that
//! order. All three gradients are computed from the pre-step parameters and
//! the same positive set. The short-run sampler's own bias (the divergence
//! between its K-step marginal and the prior) is not a loss term and is not
//! estimated.

use crate::data::{batch_indices, LabeledDataset};
use crate::diffcore::{AdamConfig, Grads, ParamStore};
use crate::ebm::{prior_grad, LatentStack, NegEnergy};
use crate::error::{Error, Result};
use crate::inference::{draw_noise, kl_to_reference, log_q, log_reference, reparam_sample, PosteriorParams};
use crate::langevin::{langevin_sample, LangevinConfig};
use crate::model::Model;
use crate::rng::{self, stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// `η_t = η·(1 − t/T)`.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_prior: T,
    pub lr_gen: T,
    pub lr_inf: T,
    /// `chains` is overridden by `batch_size`; `seed` by the per-iteration
    /// stream.
    pub langevin: LangevinConfig<T>,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub schedule: LrSchedule,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(iterations: u64, batch_size: usize, seed: u64) -> Self {
        Self {
            iterations,
            batch_size,
            lr_prior: T::lit(5e-5),
            lr_gen: T::lit(1e-4),
            lr_inf: T::lit(1e-4),
            langevin: LangevinConfig::new(40, T::lit(0.1), batch_size, seed),
            seed,
            log_every: 100,
            checkpoint_every: 1000,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, lr) in [("lr_prior", self.lr_prior), ("lr_gen", self.lr_gen), ("lr_inf", self.lr_inf)] {
            if !(lr >= T::zero()) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {lr}")));
            }
        }
        if self.iterations > 0 && self.langevin.steps == 0 {
            return Err(Error::Config("training needs at least one Langevin step".into()));
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("log_every and checkpoint_every must be positive".into()));
        }
        self.langevin.validate()
    }

    fn rate(&self, lr: T, t: u64) -> T {
        match self.schedule {
            LrSchedule::Constant => lr,
            LrSchedule::LinearDecay => {
                let left = self.iterations.saturating_sub(t) as f64 / self.iterations as f64;
                lr * T::lit(left)
            }
        }
    }
}

/// Everything needed to continue training: the iteration counter, the
/// networks with their optimiser moments, and the base seed from which all
/// per-iteration streams are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub t: u64,
    pub model: Model<T>,
    pub seed: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: Model<T>, seed: u64) -> Self {
        Self { t: 0, model, seed }
    }
}

/// Per-iteration diagnostics. Energies are values of `f` (the negative
/// energy), averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics<T> {
    pub iter: u64,
    pub recon_nll: T,
    pub kl_ref: T,
    pub e_pos: T,
    pub e_neg: T,
    /// `−recon_nll − kl_ref + e_pos`, the bound without `−log Z`.
    pub elbo_unnorm: T,
    pub clamped: usize,
}

/// The sample sets drawn inside one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSamples<T> {
    pub negatives: Vec<LatentStack<T>>,
    pub positives: Vec<LatentStack<T>>,
    pub noise: Vec<LatentStack<T>>,
}

fn abort(iteration: u64, term: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { what } => Error::TrainingAborted { iteration, term: format!("{term} ({what})") },
        Error::Diverged { chain, step } => Error::TrainingAborted {
            iteration,
            term: format!("{term} (chain {chain} diverged at step {step})"),
        },
        other => other,
    }
}

/// Noise for the reparameterised positive of batch slot `i` at iteration `t`.
pub fn posterior_noise<T: Scalar>(seed: u64, t: u64, i: usize, dims: &[usize]) -> LatentStack<T> {
    draw_noise(dims, &mut rng::derived(seed, &[stream::POSTERIOR_NOISE, t, i as u64]))
}

fn prior_config<T: Scalar>(cfg: &TrainConfig<T>, seed: u64, t: u64, m: usize) -> LangevinConfig<T> {
    LangevinConfig {
        chains: m,
        seed: rng::derive(seed, &[stream::PRIOR_CHAIN, t]),
        ..cfg.langevin
    }
}

fn apply<T: Scalar>(store: &mut ParamStore<T>, g: &Grads<T>, lr: T) -> Result<()> {
    // every stored gradient is a descent direction
    store.set_grads(g, T::one())?;
    if lr == T::zero() {
        store.zero_grads();
        return Ok(());
    }
    store.adam_step(&AdamConfig::with_lr(lr))
}

/// One iteration on `batch`; see [`train_step_traced`].
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, batch: &[&[T]], cfg: &TrainConfig<T>) -> Result<StepMetrics<T>> {
    Ok(train_step_traced(state, batch, cfg)?.0)
}

/// One iteration, also returning the negatives and positives it used.
pub fn train_step_traced<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[&[T]],
    cfg: &TrainConfig<T>,
) -> Result<(StepMetrics<T>, StepSamples<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("train_step"));
    }
    let t = state.t;
    let m = batch.len();
    let dims = state.model.latent_dims().to_vec();
    let model = &state.model;

    let negatives = langevin_sample(&model.energy, &dims, &prior_config(cfg, state.seed, t, m))
        .map_err(abort(t, "prior sample"))?;

    let mut noise = Vec::with_capacity(m);
    let mut positives = Vec::with_capacity(m);
    let mut posteriors: Vec<PosteriorParams<T>> = Vec::with_capacity(m);
    for (i, x) in batch.iter().enumerate() {
        let pp = model.inference.infer(x).map_err(abort(t, "posterior"))?;
        let eps = posterior_noise(state.seed, t, i, &dims);
        positives.push(reparam_sample(&pp, &eps)?);
        noise.push(eps);
        posteriors.push(pp);
    }

    let metrics = step_metrics(model, batch, &posteriors, &positives, &negatives, t).map_err(abort(t, "loss"))?;
    if metrics.clamped > 0 {
        log::warn!("iteration {t}: {} posterior log-variances hit the clamp", metrics.clamped);
    }

    let mut g_alpha = prior_grad(&model.energy, &positives, &negatives).map_err(abort(t, "prior gradient"))?;
    g_alpha.scale(-T::one());
    let pairs: Vec<(&[T], &LatentStack<T>)> = batch.iter().copied().zip(&positives).collect();
    let mut g_beta = model.generator.gen_grad(&pairs).map_err(abort(t, "generator gradient"))?;
    g_beta.scale(-T::one());
    let eps_pairs: Vec<(&[T], &LatentStack<T>)> = batch.iter().copied().zip(&noise).collect();
    let g_phi = model
        .inference
        .inf_grad(&model.energy, &model.generator, &eps_pairs)
        .map_err(abort(t, "inference gradient"))?;

    let model = &mut state.model;
    apply(model.energy.params_mut(), &g_alpha, cfg.rate(cfg.lr_prior, t)).map_err(abort(t, "prior update"))?;
    apply(model.generator.params_mut(), &g_beta, cfg.rate(cfg.lr_gen, t)).map_err(abort(t, "generator update"))?;
    apply(model.inference.params_mut(), &g_phi, cfg.rate(cfg.lr_inf, t)).map_err(abort(t, "inference update"))?;
    state.t += 1;
    Ok((metrics, StepSamples { negatives, positives, noise }))
}

fn step_metrics<T: Scalar>(
    model: &Model<T>,
    batch: &[&[T]],
    posteriors: &[PosteriorParams<T>],
    positives: &[LatentStack<T>],
    negatives: &[LatentStack<T>],
    iter: u64,
) -> Result<StepMetrics<T>> {
    let mut recon = T::zero();
    let mut kl = T::zero();
    let mut e_pos = T::zero();
    let mut clamped = 0;
    for ((x, pp), z) in batch.iter().zip(posteriors).zip(positives) {
        recon -= model.generator.log_likelihood(x, z)?;
        kl += kl_to_reference(pp);
        e_pos += model.energy.value(&z.concat())?;
        clamped += pp.clamped;
    }
    let mut e_neg = T::zero();
    for z in negatives {
        e_neg += model.energy.value(&z.concat())?;
    }
    let m = T::from_usize_lossy(batch.len());
    let out = StepMetrics {
        iter,
        recon_nll: recon / m,
        kl_ref: kl / m,
        e_pos: e_pos / m,
        e_neg: e_neg / T::from_usize_lossy(negatives.len()),
        elbo_unnorm: (e_pos - recon - kl) / m,
        clamped,
    };
    for v in [out.recon_nll, out.kl_ref, out.e_pos, out.e_neg] {
        if !v.is_finite() {
            return Err(Error::non_finite("step metrics"));
        }
    }
    Ok(out)
}

/// Metrics for `batch` without updating anything: same sampling streams as
/// iteration `state.t` would use.
pub fn loss_report<T: Scalar>(state: &TrainState<T>, batch: &[&[T]], cfg: &TrainConfig<T>) -> Result<StepMetrics<T>> {
    let mut probe = TrainState { t: state.t, model: state.model.clone(), seed: state.seed };
    let frozen = TrainConfig { lr_prior: T::zero(), lr_gen: T::zero(), lr_inf: T::zero(), ..cfg.clone() };
    train_step(&mut probe, batch, &frozen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElboVariant {
    /// `log p(x|z) + log p_0(z) + f(z) − log q(z|x)` at each sample.
    MonteCarlo,
    /// `log p(x|z) + f(z)` at each sample, minus the closed-form `KL(q‖p_0)`.
    AnalyticKl,
}

/// The bound at explicit noise: `noise[b][k]` is the `k`-th draw for `batch[b]`.
pub fn elbo_with_noise<T: Scalar>(
    model: &Model<T>,
    batch: &[&[T]],
    noise: &[Vec<LatentStack<T>>],
    variant: ElboVariant,
) -> Result<T> {
    if batch.is_empty() || batch.len() != noise.len() {
        return Err(Error::EmptyBatch("elbo_estimate"));
    }
    let mut total = T::zero();
    for (x, draws) in batch.iter().zip(noise) {
        if draws.is_empty() {
            return Err(Error::EmptyBatch("elbo_estimate (samples)"));
        }
        let pp = model.inference.infer(x)?;
        let mut acc = T::zero();
        for eps in draws {
            let z = reparam_sample(&pp, eps)?;
            let mut term = model.generator.log_likelihood(x, &z)? + model.energy.value(&z.concat())?;
            if variant == ElboVariant::MonteCarlo {
                term += log_reference(&z) - log_q(&pp, &z)?;
            }
            acc += term;
        }
        acc /= T::from_usize_lossy(draws.len());
        if variant == ElboVariant::AnalyticKl {
            acc -= kl_to_reference(&pp);
        }
        total += acc;
    }
    Ok(total / T::from_usize_lossy(batch.len()))
}

/// Reparameterisation noise for [`elbo_estimate`].
pub fn elbo_noise<T: Scalar>(dims: &[usize], batch_len: usize, n_samples: usize, seed: u64) -> Vec<Vec<LatentStack<T>>> {
    (0..batch_len)
        .map(|b| {
            let mut r = rng::derived(seed, &[stream::ELBO_NOISE, b as u64]);
            (0..n_samples).map(|_| draw_noise(dims, &mut r)).collect()
        })
        .collect()
}

/// Monte Carlo estimate of `E_q[log p(x|z) + log p_0(z) + f(z) − log q(z|x)]`
/// averaged over `batch`: the evidence lower bound up to `−log Z`.
pub fn elbo_estimate<T: Scalar>(
    model: &Model<T>,
    batch: &[&[T]],
    n_samples: usize,
    seed: u64,
    variant: ElboVariant,
) -> Result<T> {
    let noise = elbo_noise(model.latent_dims(), batch.len(), n_samples, seed);
    elbo_with_noise(model, batch, &noise, variant)
}

/// Runs iterations until `state.t == cfg.iterations`, calling `on_step`
/// after each. Minibatches follow `data::batches` with `epoch = t / (N / m)`.
pub fn fit<T, F>(state: &mut TrainState<T>, data: &LabeledDataset<T>, cfg: &TrainConfig<T>, mut on_step: F) -> Result<()>
where
    T: Scalar,
    F: FnMut(&TrainState<T>, &StepMetrics<T>) -> Result<()>,
{
    cfg.validate()?;
    if cfg.batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            data.len()
        )));
    }
    let per_epoch = (data.len() / cfg.batch_size) as u64;
    let mut cached: Option<(u64, Vec<Vec<usize>>)> = None;
    while state.t < cfg.iterations {
        let epoch = state.t / per_epoch;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, batch_indices(data.len(), cfg.batch_size, cfg.seed, epoch)?));
        }
        let idx = &cached.as_ref().expect("filled above").1[(state.t % per_epoch) as usize];
        let batch: Vec<&[T]> = idx.iter().map(|&i| data.row(i)).collect();
        let metrics = train_step(state, &batch, cfg)?;
        log::debug!(
            "iter {} recon {:.4} kl {:.4} elbo {:.4}",
            metrics.iter,
            metrics.recon_nll,
            metrics.kl_ref,
            metrics.elbo_unnorm
        );
        on_step(state, &metrics)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn toy() -> (TrainState<f64>, Vec<Vec<f64>>, TrainConfig<f64>) {
        let mut spec = ModelSpec::<f64>::new(&[2, 2], 6, 8);
        spec.nef = 8;
        let model = Model::new(&spec, 3).unwrap();
        let data: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..6).map(|j| ((i * 6 + j) as f64 * 0.37).sin() * 0.8).collect())
            .collect();
        let mut cfg = TrainConfig::new(10, 4, 5);
        cfg.langevin.steps = 5;
        (TrainState::new(model, 5), data, cfg)
    }

    #[test]
    fn zero_learning_rates_leave_parameters_bit_identical() {
        let (mut state, data, mut cfg) = toy();
        cfg.lr_prior = 0.0;
        cfg.lr_gen = 0.0;
        cfg.lr_inf = 0.0;
        let before = state.model.clone();
        let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let m = train_step(&mut state, &batch, &cfg).unwrap();
        assert_eq!(state.model, before);
        assert_eq!(state.t, 1);
        assert!(m.recon_nll.is_finite() && m.e_neg.is_finite());
    }

    #[test]
    fn positives_come_from_pre_step_inference() {
        let (mut state, data, cfg) = toy();
        let before = state.clone();
        let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let (_, samples) = train_step_traced(&mut state, &batch, &cfg).unwrap();
        assert_ne!(state.model.inference, before.model.inference);
        for (i, x) in batch.iter().enumerate() {
            let eps = posterior_noise::<f64>(before.seed, 0, i, &[2, 2]);
            let z = reparam_sample(&before.model.inference.infer(x).unwrap(), &eps).unwrap();
            assert_eq!(samples.positives[i], z);
        }
        // the α update is Adam on the contrastive gradient from those sets
        let mut expected = before.model.energy.clone();
        let mut g = prior_grad(&expected, &samples.positives, &samples.negatives).unwrap();
        g.scale(-1.0);
        apply(expected.params_mut(), &g, cfg.lr_prior).unwrap();
        assert_eq!(expected, state.model.energy);
    }

    #[test]
    fn identical_seeds_give_identical_metric_streams() {
        let run = || {
            let (mut state, data, cfg) = toy();
            let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
            (0..3).map(|_| train_step(&mut state, &batch, &cfg).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn elbo_shifts_by_constant_added_to_f() {
        let (state, data, _) = toy();
        let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let a = elbo_estimate(&state.model, &batch, 4, 1, ElboVariant::MonteCarlo).unwrap();
        let mut shifted = state.model.clone();
        shifted.energy.shift_output(1.5).unwrap();
        let b = elbo_estimate(&shifted, &batch, 4, 1, ElboVariant::MonteCarlo).unwrap();
        assert!((b - a - 1.5).abs() < 1e-12);
    }

    #[test]
    fn loss_report_is_pure() {
        let (state, data, cfg) = toy();
        let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let a = loss_report(&state, &batch, &cfg).unwrap();
        let b = loss_report(&state, &batch, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.elbo_unnorm - (a.e_pos - a.recon_nll - a.kl_ref)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::<f64>::new(10, 4, 0);
        assert!(cfg.validate().is_ok());
        cfg.lr_gen = f64::NAN;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::<f64>::new(10, 4, 0);
        cfg.langevin.steps = 0;
        assert!(cfg.validate().is_err());
    }
}
