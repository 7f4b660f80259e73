use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::Scalar;

use super::LabeledDataset;

pub(crate) fn permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derived(seed, &[stream::SHUFFLE, epoch]));
    idx
}

/// Seeded per-epoch shuffle cut into `n / m` batches of exactly `m`; the
/// remainder is dropped.
pub fn batch_indices(n: usize, m: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > n {
        return Err(Error::Config(format!("batch size {m} must be in 1..={n}")));
    }
    let perm = permutation(n, seed, epoch);
    Ok(perm.chunks_exact(m).map(<[usize]>::to_vec).collect())
}

pub fn batches<'a, T: Scalar>(
    ds: &'a LabeledDataset<T>,
    m: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Vec<&'a [T]>> + 'a> {
    let idx = batch_indices(ds.len(), m, seed, epoch)?;
    Ok(idx.into_iter().map(move |b| b.iter().map(|&i| ds.row(i)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_is_a_permutation() {
        let b = batch_indices(7, 7, 3, 0).unwrap();
        assert_eq!(b.len(), 1);
        let mut v = b[0].clone();
        v.sort();
        assert_eq!(v, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_partitioning() {
        let a = batch_indices(23, 5, 9, 2).unwrap();
        assert_eq!(a, batch_indices(23, 5, 9, 2).unwrap());
        assert_ne!(a, batch_indices(23, 5, 9, 3).unwrap());
        let mut all: Vec<usize> = a.concat();
        assert_eq!(all.len(), 20);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 20);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        assert!(batch_indices(4, 5, 0, 0).is_err());
    }
}
