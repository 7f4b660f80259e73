//! Mutual information gap between latent units and generative factors.
//!
//! Latent units are discretised into equal-mass bins (ties share a bin, so
//! the result depends only on ranks); continuous factors into equal-width
//! bins. MI is the plug-in estimate from joint counts, in nats.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;

pub const LATENT_BINS: usize = 20;
pub const FACTOR_BINS: usize = 10;

/// Bin of each value such that bins hold about `n / bins` values and equal
/// values always share a bin.
pub fn equal_mass_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut i = 0;
    while i < n {
        let first = i;
        while i < n && values[order[i]] == values[order[first]] {
            out[order[i]] = first * bins / n;
            i += 1;
        }
    }
    out
}

pub fn equal_width_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1))
        .collect()
}

fn counts(a: &[usize]) -> Vec<usize> {
    let mut c = vec![0; a.iter().max().map_or(0, |m| m + 1)];
    for &v in a {
        c[v] += 1;
    }
    c
}

pub fn entropy(a: &[usize]) -> f64 {
    let n = a.len() as f64;
    counts(a)
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (ca, cb) = (counts(a), counts(b));
    let mut joint = vec![0usize; ca.len() * cb.len()];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * cb.len() + y] += 1;
    }
    let mut mi = 0.0;
    for (k, &c) in joint.iter().enumerate() {
        if c > 0 {
            let (x, y) = (k / cb.len(), k % cb.len());
            let p = c as f64 / n;
            mi += p * (p * n * n / (ca[x] as f64 * cb[y] as f64)).ln();
        }
    }
    mi.max(0.0)
}

fn gap(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| b.total_cmp(a));
    v[0] - v.get(1).copied().unwrap_or(0.0)
}

/// `(MIG, MIG-sup)` for latent columns `latents[unit][row]` against discrete
/// factors `factors[k][row]`.
pub fn mig_scores(latents: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<(f64, f64)> {
    if latents.is_empty() || factors.is_empty() {
        return Err(Error::EmptyBatch("mig"));
    }
    let binned: Vec<Vec<usize>> = latents
        .iter()
        .enumerate()
        .map(|(j, col)| {
            if col.iter().all(|&v| v == col[0]) {
                log::warn!("latent unit {j} is constant; its mutual information is 0");
            }
            equal_mass_bins(col, LATENT_BINS)
        })
        .collect();
    let h: Vec<f64> = factors.iter().map(|f| entropy(f)).collect();
    let mi: Vec<Vec<f64>> = binned
        .iter()
        .map(|u| factors.iter().map(|f| mutual_information(u, f)).collect())
        .collect();
    let mut mig = 0.0;
    for k in 0..factors.len() {
        if h[k] > 0.0 {
            mig += gap(mi.iter().map(|row| row[k]).collect()) / h[k];
        }
    }
    mig /= factors.len() as f64;
    let mut sup = 0.0;
    for row in &mi {
        let top = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("factors");
        if h[top] > 0.0 {
            sup += gap(row.clone()) / h[top];
        }
    }
    sup /= mi.len() as f64;
    Ok((mig.clamp(0.0, 1.0), sup.clamp(0.0, 1.0)))
}

/// Discretised ground-truth factors of a synthetic dataset: class, then
/// style (and local factor when present) in equal-width bins.
pub fn dataset_factors<T: Scalar>(ds: &LabeledDataset<T>) -> Result<Vec<Vec<usize>>> {
    let styles = ds
        .styles
        .as_ref()
        .ok_or_else(|| Error::Data("dataset carries no style factor".into()))?;
    let mut out = vec![ds.labels.iter().map(|&l| l as usize).collect()];
    for f in [Some(styles), ds.locals.as_ref()].into_iter().flatten() {
        let v: Vec<f64> = f.iter().map(|x| x.as_f64()).collect();
        out.push(equal_width_bins(&v, FACTOR_BINS));
    }
    Ok(out)
}

/// MIG and MIG-sup of the posterior means of every latent unit.
pub fn mig_and_migsup<T: Scalar>(model: &Model<T>, ds: &LabeledDataset<T>) -> Result<(f64, f64)> {
    let factors = dataset_factors(ds)?;
    let d: usize = model.latent_dims().iter().sum();
    let mut cols = vec![Vec::with_capacity(ds.len()); d];
    for x in ds.rows() {
        for (j, v) in model.inference.infer(x)?.mean_stack().concat().into_iter().enumerate() {
            cols[j].push(v.as_f64());
        }
    }
    mig_scores(&cols, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_mass_bins_keep_ties_together() {
        let b = equal_mass_bins(&[3.0, 1.0, 1.0, 2.0], 2);
        assert_eq!(b, vec![1, 0, 0, 1]);
        let b = equal_mass_bins(&(0..100).map(f64::from).collect::<Vec<_>>(), 20);
        assert!(counts(&b).iter().all(|&c| c == 5));
    }

    #[test]
    fn mi_of_a_copy_is_entropy() {
        let f = vec![0, 1, 2, 0, 1, 2, 2, 2];
        assert!((mutual_information(&f, &f) - entropy(&f)).abs() < 1e-12);
        assert!(mutual_information(&f, &[0; 8]).abs() < 1e-15);
    }
}
