//! Short-run Langevin sampling from the latent prior.
//!
//! `z_{t+1} = z_t + (s²/2)·∇_z log p(z_t) + s·ε_t`, started from `N(0, I)`
//! and run for a fixed number of steps. Each chain draws from its own
//! streams keyed by `(seed, chain)`, so chains are independent of how many
//! siblings run alongside them.

use crate::ebm::{score_flat, LatentStack, NegEnergy};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::{sq_norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig<T> {
    /// Number of transitions `K`. Zero returns the initial states.
    pub steps: usize,
    pub step_size: T,
    pub chains: usize,
    pub seed: u64,
    /// Optional cap on the score norm, for diagnosing divergent runs.
    pub score_cap: Option<T>,
}

impl<T: Scalar> LangevinConfig<T> {
    pub fn new(steps: usize, step_size: T, chains: usize, seed: u64) -> Self {
        Self {
            steps,
            step_size,
            chains,
            seed,
            score_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "Langevin step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.chains == 0 {
            return Err(Error::Config("Langevin needs at least one chain".into()));
        }
        Ok(())
    }
}

impl Default for LangevinConfig<f64> {
    fn default() -> Self {
        Self::new(40, 0.1, 64, 0)
    }
}

/// How free coordinates are initialised before the transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeInit {
    /// Redraw from the `N(0, I)` reference.
    Noise,
    /// Continue from the supplied values.
    Keep,
}

pub fn init_stream(seed: u64, chain: usize) -> rng::Rng {
    rng::derived(seed, &[stream::PRIOR_CHAIN, chain as u64, 0])
}

pub fn step_stream(seed: u64, chain: usize) -> rng::Rng {
    rng::derived(seed, &[stream::PRIOR_CHAIN, chain as u64, 1])
}

/// One transition applied to the coordinates where `free` is true, with
/// explicit noise `eps`.
pub fn langevin_step<T: Scalar, E: NegEnergy<T> + ?Sized>(
    energy: &E,
    z: &mut [T],
    free: &[bool],
    step_size: T,
    eps: &[T],
    score_cap: Option<T>,
) -> Result<()> {
    let mut s = score_flat(energy, z)?;
    if let Some(cap) = score_cap {
        let n = sq_norm(&s).sqrt();
        if n > cap {
            let k = cap / n;
            s.iter_mut().for_each(|v| *v *= k);
        }
    }
    let drift = step_size * step_size * T::half();
    for i in 0..z.len() {
        if free[i] {
            z[i] = z[i] + drift * s[i] + step_size * eps[i];
        }
    }
    Ok(())
}

/// Runs one chain in place, calling `observe(step, z)` on the initial state
/// (step 0) and after every transition.
pub fn run_chain<T, E, F>(
    energy: &E,
    z: &mut [T],
    free: &[bool],
    cfg: &LangevinConfig<T>,
    chain: usize,
    mut observe: F,
) -> Result<()>
where
    T: Scalar,
    E: NegEnergy<T> + ?Sized,
    F: FnMut(usize, &[T]) -> Result<()>,
{
    let mut noise = step_stream(cfg.seed, chain);
    observe(0, z)?;
    for step in 1..=cfg.steps {
        let eps: Vec<T> = rng::normal_vec(&mut noise, z.len());
        langevin_step(energy, z, free, cfg.step_size, &eps, cfg.score_cap)
            .map_err(|_| Error::Diverged { chain, step })?;
        if !crate::scalar::all_finite(z) {
            return Err(Error::Diverged { chain, step });
        }
        observe(step, z)?;
    }
    Ok(())
}

/// Langevin over the layers not marked `fixed`, starting from `base`
/// (one chain per element). Fixed layers are returned bit-identical.
pub fn masked_langevin<T: Scalar, E: NegEnergy<T> + ?Sized>(
    energy: &E,
    fixed: &[bool],
    base: &[LatentStack<T>],
    init: FreeInit,
    cfg: &LangevinConfig<T>,
) -> Result<Vec<LatentStack<T>>> {
    cfg.validate()?;
    if fixed.iter().all(|&f| f) {
        return Err(Error::Config("every layer is fixed; nothing to sample".into()));
    }
    let mut out = Vec::with_capacity(base.len());
    for (chain, z0) in base.iter().enumerate() {
        let dims = z0.dims();
        if dims.len() != fixed.len() {
            return Err(Error::shape("layer mask", dims.len(), fixed.len()));
        }
        if z0.total_dim() != energy.latent_dim() {
            return Err(Error::shape("latent stack", energy.latent_dim(), z0.total_dim()));
        }
        let free: Vec<bool> = dims
            .iter()
            .zip(fixed)
            .flat_map(|(&d, &f)| std::iter::repeat(!f).take(d))
            .collect();
        let mut z = z0.concat();
        if init == FreeInit::Noise {
            let draw: Vec<T> = rng::normal_vec(&mut init_stream(cfg.seed, chain), z.len());
            for i in 0..z.len() {
                if free[i] {
                    z[i] = draw[i];
                }
            }
        }
        run_chain(energy, &mut z, &free, cfg, chain, |_, _| Ok(()))?;
        out.push(LatentStack::from_flat(&dims, &z)?);
    }
    Ok(out)
}

/// Noise-initialised prior samples, `cfg.chains` of them.
pub fn langevin_sample<T: Scalar, E: NegEnergy<T> + ?Sized>(
    energy: &E,
    dims: &[usize],
    cfg: &LangevinConfig<T>,
) -> Result<Vec<LatentStack<T>>> {
    let base = vec![LatentStack::zeros(dims); cfg.chains];
    masked_langevin(energy, &vec![false; dims.len()], &base, FreeInit::Noise, cfg)
}

/// Langevin restricted to the free layers, continuing from `init`.
pub fn conditional_langevin<T: Scalar, E: NegEnergy<T> + ?Sized>(
    energy: &E,
    fixed: &[bool],
    init: &[LatentStack<T>],
    cfg: &LangevinConfig<T>,
) -> Result<Vec<LatentStack<T>>> {
    masked_langevin(energy, fixed, init, FreeInit::Keep, cfg)
}
