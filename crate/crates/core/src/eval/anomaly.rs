//! Anomaly scores and reconstruction error.

use crate::data::LabeledDataset;
use crate::ebm::NegEnergy;
use crate::error::{Error, Result};
use crate::inference::{draw_noise, reparam_sample};
use crate::model::Model;
use crate::rng::{self, stream};
use crate::scalar::{sq_norm, Scalar};

use super::metrics::ScoredExample;

/// `log p(x|z) + f(z) − ½‖z‖²` averaged over `n_samples` draws
/// `z ~ q(z|x)`: the joint log-density with every additive constant
/// (`log Z`, Gaussian normalisers) dropped. Larger means more typical.
pub fn anomaly_score<T: Scalar>(model: &Model<T>, x: &[T], n_samples: usize, seed: u64) -> Result<T> {
    if n_samples == 0 {
        return Err(Error::EmptyBatch("anomaly_score"));
    }
    let pp = model.inference.infer(x)?;
    let mut r = rng::derived(seed, &[stream::EVAL, 0]);
    let mut total = T::zero();
    for _ in 0..n_samples {
        let z = reparam_sample(&pp, &draw_noise(model.latent_dims(), &mut r))?;
        total += joint_log_density(model, x, &z.concat())?;
    }
    Ok(total / T::from_usize_lossy(n_samples))
}

fn joint_log_density<T: Scalar>(model: &Model<T>, x: &[T], z: &[T]) -> Result<T> {
    let stack = crate::ebm::LatentStack::from_flat(model.latent_dims(), z)?;
    Ok(model.generator.log_likelihood(x, &stack)? + model.energy.value(z)? - T::half() * sq_norm(z))
}

/// Scores every row of `ds`, flagging rows whose flag in `anomalous` is set.
/// The reported score is the negated log-density so that larger means more
/// anomalous. Row `i` uses the stream `(seed, i)`.
pub fn score_dataset<T: Scalar>(
    model: &Model<T>,
    ds: &LabeledDataset<T>,
    anomalous: &[bool],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ScoredExample>> {
    if anomalous.len() != ds.len() {
        return Err(Error::shape("anomaly flags", ds.len(), anomalous.len()));
    }
    ds.rows()
        .zip(anomalous)
        .enumerate()
        .map(|(i, (x, &positive))| {
            let s = anomaly_score(model, x, n_samples, rng::derive(seed, &[i as u64]))?;
            if !s.is_finite() {
                return Err(Error::non_finite(format!("anomaly score of row {i}")));
            }
            Ok(ScoredExample { score: -s.as_f64(), positive })
        })
        .collect()
}

/// `‖x − g(μ(x))‖² / D` per row.
pub fn recon_errors<T: Scalar>(model: &Model<T>, ds: &LabeledDataset<T>) -> Result<Vec<T>> {
    ds.rows()
        .map(|x| {
            let mean = model.generator.decode(&model.inference.infer(x)?.mean_stack())?;
            Ok(crate::generator::mse(x, &mean))
        })
        .collect()
}

/// Mean of [`recon_errors`].
pub fn recon_mse<T: Scalar>(model: &Model<T>, ds: &LabeledDataset<T>) -> Result<T> {
    let errs = recon_errors(model, ds)?;
    Ok(errs.iter().copied().sum::<T>() / T::from_usize_lossy(errs.len()))
}
