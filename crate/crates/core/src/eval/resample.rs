//! Layer-wise resampling and latent traversals.

use crate::data::NearestTemplate;
use crate::ebm::LatentStack;
use crate::error::{Error, Result};
use crate::langevin::{masked_langevin, FreeInit, LangevinConfig};
use crate::model::Model;
use crate::scalar::Scalar;

/// Decoded means of `n_variants` copies of `base` in which the layers marked
/// in `free` are redrawn by prior Langevin while the others stay fixed.
pub fn resample_layers<T: Scalar>(
    model: &Model<T>,
    base: &LatentStack<T>,
    free: &[bool],
    n_variants: usize,
    init: FreeInit,
    cfg: &LangevinConfig<T>,
) -> Result<Vec<Vec<T>>> {
    if free.len() != model.num_layers() {
        return Err(Error::shape("free-layer mask", model.num_layers(), free.len()));
    }
    let fixed: Vec<bool> = free.iter().map(|f| !f).collect();
    let bases = vec![base.clone(); n_variants];
    let cfg = LangevinConfig { chains: n_variants, ..*cfg };
    masked_langevin(&model.energy, &fixed, &bases, init, &cfg)?
        .iter()
        .map(|z| model.generator.decode(z))
        .collect()
}

/// One grid row: `n_variants` decodes with only layer `layer` redrawn.
pub fn hierarchical_resample<T: Scalar>(
    model: &Model<T>,
    base: &LatentStack<T>,
    layer: usize,
    n_variants: usize,
    init: FreeInit,
    cfg: &LangevinConfig<T>,
) -> Result<Vec<Vec<T>>> {
    if layer >= model.num_layers() {
        return Err(Error::Index(format!("layer {layer} of a {}-layer model", model.num_layers())));
    }
    let mut free = vec![false; model.num_layers()];
    free[layer] = true;
    resample_layers(model, base, &free, n_variants, init, cfg)
}

/// Fraction of variants, over the posterior means of `rows`, whose oracle
/// class differs from the oracle class of the unperturbed reconstruction.
pub fn flip_rate<T: Scalar>(
    model: &Model<T>,
    oracle: &NearestTemplate,
    rows: &[&[T]],
    layer: usize,
    n_variants: usize,
    cfg: &LangevinConfig<T>,
) -> Result<f64> {
    let mut flips = 0usize;
    let mut total = 0usize;
    for (r, x) in rows.iter().enumerate() {
        let base = model.inference.infer(x)?.mean_stack();
        let reference = oracle.predict(&model.generator.decode(&base)?);
        let cfg = LangevinConfig { seed: crate::rng::derive(cfg.seed, &[r as u64]), ..*cfg };
        for v in hierarchical_resample(model, &base, layer, n_variants, FreeInit::Noise, &cfg)? {
            total += 1;
            if oracle.predict(&v) != reference {
                flips += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyBatch("flip_rate"));
    }
    Ok(flips as f64 / total as f64)
}

/// Decodes of `x`'s posterior mean with unit `unit` of layer `layer` set to
/// each value of `sweep`.
pub fn traverse<T: Scalar>(model: &Model<T>, x: &[T], layer: usize, unit: usize, sweep: &[T]) -> Result<Vec<Vec<T>>> {
    let dims = model.latent_dims();
    if layer >= dims.len() || unit >= dims[layer] {
        return Err(Error::Index(format!("unit ({layer}, {unit}) outside latent dims {dims:?}")));
    }
    let base = model.inference.infer(x)?.mean_stack();
    sweep
        .iter()
        .map(|&v| {
            let mut z = base.clone();
            z.layer_mut(layer)[unit] = v;
            model.generator.decode(&z)
        })
        .collect()
}

/// `rows[layer][unit][k]`: decode at the `k`-th sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalGrid<T> {
    pub sweep: Vec<T>,
    pub rows: Vec<Vec<Vec<Vec<T>>>>,
}

pub fn traversal_grid<T: Scalar>(model: &Model<T>, x: &[T], sweep: &[T]) -> Result<TraversalGrid<T>> {
    let rows = model
        .latent_dims()
        .iter()
        .enumerate()
        .map(|(i, &d)| (0..d).map(|j| traverse(model, x, i, j, sweep)).collect())
        .collect::<Result<_>>()?;
    Ok(TraversalGrid { sweep: sweep.to_vec(), rows })
}

/// Evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1))
            .collect(),
    }
}
