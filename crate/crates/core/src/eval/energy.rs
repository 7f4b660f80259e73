//! Long-run diagnostics of the prior's Langevin chains.

use crate::ebm::{LatentStack, NegEnergy};
use crate::error::{Error, Result};
use crate::generator::GeneratorNet;
use crate::langevin::{init_stream, run_chain, LangevinConfig};
use crate::rng;
use crate::scalar::{sq_norm, Scalar};

/// Long chains from noise, recording `½‖z‖² − f(z)` after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile<T> {
    /// `per_chain[c][k]`: energy of chain `c` after `k` steps (`k = 0` is the
    /// initial state).
    pub per_chain: Vec<Vec<T>>,
    /// Decoded means of every chain at steps `0, every, 2·every, …`.
    pub snapshots: Vec<(usize, Vec<Vec<T>>)>,
}

impl<T: Scalar> EnergyProfile<T> {
    /// Chain-averaged energy per step.
    pub fn mean(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.per_chain.len());
        (0..self.per_chain[0].len())
            .map(|k| self.per_chain.iter().map(|c| c[k]).sum::<T>() / n)
            .collect()
    }

    /// Least-squares slope over the last quarter of the steps, averaged
    /// over chains, with the standard error of that average estimated from
    /// the spread of per-chain slopes (chains are independent).
    pub fn last_quartile_slope(&self) -> (f64, f64) {
        let slopes: Vec<f64> = self
            .per_chain
            .iter()
            .map(|c| {
                let start = c.len() - c.len() / 4;
                ols_slope(&c[start..].iter().map(|v| v.as_f64()).collect::<Vec<_>>())
            })
            .collect();
        let n = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / n;
        if slopes.len() < 2 {
            return (mean, f64::INFINITY);
        }
        let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

/// Slope of `y` against `0, 1, …, n−1`.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Runs `cfg.chains` noise-initialised chains for `cfg.steps` steps.
/// Snapshots are taken every `every` steps when a generator is supplied.
pub fn energy_profile<T: Scalar, E: NegEnergy<T> + ?Sized>(
    energy: &E,
    dims: &[usize],
    generator: Option<&GeneratorNet<T>>,
    cfg: &LangevinConfig<T>,
    every: usize,
) -> Result<EnergyProfile<T>> {
    cfg.validate()?;
    if every == 0 {
        return Err(Error::Config("snapshot interval must be positive".into()));
    }
    let d: usize = dims.iter().sum();
    let free = vec![true; d];
    let mut per_chain = Vec::with_capacity(cfg.chains);
    let n_snap = if generator.is_some() { cfg.steps / every + 1 } else { 0 };
    let mut snapshots: Vec<(usize, Vec<Vec<T>>)> = (0..n_snap).map(|k| (k * every, Vec::new())).collect();
    for chain in 0..cfg.chains {
        let mut z: Vec<T> = rng::normal_vec(&mut init_stream(cfg.seed, chain), d);
        let mut series = Vec::with_capacity(cfg.steps + 1);
        run_chain(energy, &mut z, &free, cfg, chain, |step, z| {
            let e = T::half() * sq_norm(z) - energy.value(z)?;
            if !e.is_finite() {
                return Err(Error::Diverged { chain, step });
            }
            series.push(e);
            if let Some(g) = generator {
                if step % every == 0 {
                    snapshots[step / every].1.push(g.decode(&LatentStack::from_flat(dims, z)?)?);
                }
            }
            Ok(())
        })?;
        per_chain.push(series);
    }
    Ok(EnergyProfile { per_chain, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebm::EnergyNet;

    #[test]
    fn slope_of_a_line() {
        assert!((ols_slope(&[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-12);
        assert_eq!(ols_slope(&[4.0, 4.0, 4.0]), 0.0);
    }

    #[test]
    fn gaussian_prior_settles_at_half_dimension() {
        let net = EnergyNet::<f64>::gaussian(&[2, 2]).unwrap();
        let cfg = LangevinConfig::new(400, 0.5, 200, 3);
        let p = energy_profile(&net, &[2, 2], None, &cfg, 100).unwrap();
        let mean = p.mean();
        assert_eq!(mean.len(), 401);
        let tail: f64 = mean[200..].iter().sum::<f64>() / 201.0;
        // ½‖z‖² of a unit Gaussian in 4 dimensions has mean 2 (sd 1 per chain);
        // the discretised chain's stationary variance is 1/(1 − s²/4)
        let expected = 2.0 / (1.0 - 0.25 / 4.0);
        assert!((tail - expected).abs() < 0.15, "{tail}");
    }

    #[test]
    fn profile_is_deterministic() {
        let net = EnergyNet::<f64>::gaussian(&[1]).unwrap();
        let cfg = LangevinConfig::new(20, 0.3, 3, 9);
        assert_eq!(
            energy_profile(&net, &[1], None, &cfg, 10).unwrap(),
            energy_profile(&net, &[1], None, &cfg, 10).unwrap()
        );
    }
}
