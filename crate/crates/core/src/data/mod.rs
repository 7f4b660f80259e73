//! Datasets: synthetic hierarchical factors, IDX image files, the HEBD
//! container, held-out-class splits and seeded minibatching.

mod batch;
mod hebd;
mod idx;
mod synthetic;

pub use batch::{batch_indices, batches};
pub use hebd::{read_hebd, write_hebd, HEBD_MAGIC, HEBD_VERSION};
pub use idx::{normalize_byte, IDX_IMAGES, IDX_LABELS, parse_idx, read_idx_file, write_idx, IdxData, IdxHeader};
pub use synthetic::{gen_synthetic, NearestTemplate, SyntheticSpec, SyntheticTemplates};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `N × D` observations in `[−1, 1]` with class labels and, for
/// synthetic data, the continuous factors that produced each row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    dim: usize,
    rows: Vec<T>,
    pub labels: Vec<u32>,
    pub n_classes: u32,
    pub styles: Option<Vec<T>>,
    pub locals: Option<Vec<T>>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(dim: usize, rows: Vec<T>, labels: Vec<u32>, n_classes: u32) -> Result<Self> {
        if dim == 0 || rows.is_empty() || rows.len() % dim != 0 {
            return Err(Error::Data(format!(
                "{} values cannot form rows of width {dim}",
                rows.len()
            )));
        }
        let n = rows.len() / dim;
        if labels.len() != n {
            return Err(Error::Data(format!("{n} rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {n_classes})")));
        }
        if !crate::scalar::all_finite(&rows) {
            return Err(Error::Data("non-finite observation".into()));
        }
        Ok(Self {
            dim,
            rows,
            labels,
            n_classes,
            styles: None,
            locals: None,
        })
    }

    pub fn with_styles(mut self, styles: Vec<T>) -> Result<Self> {
        if styles.len() != self.len() {
            return Err(Error::Data(format!("{} rows but {} styles", self.len(), styles.len())));
        }
        self.styles = Some(styles);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn raw(&self) -> &[T] {
        &self.rows
    }

    /// Rows at `idx`, in that order, with all per-row annotations.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Data("selection is empty".into()));
        }
        let mut rows = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            rows.extend_from_slice(self.row(i));
        }
        let pick = |v: &Option<Vec<T>>| v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect());
        Ok(Self {
            dim: self.dim,
            rows,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            styles: pick(&self.styles),
            locals: pick(&self.locals),
        })
    }

    /// Per-coordinate variance pooled over all coordinates.
    pub fn variance(&self) -> T {
        let n = T::from_usize_lossy(self.len());
        let mut total = T::zero();
        for j in 0..self.dim {
            let mean = self.rows().map(|r| r[j]).sum::<T>() / n;
            total += self.rows().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<T>() / n;
        }
        total / T::from_usize_lossy(self.dim)
    }

    /// First `ceil(frac·N)` rows (after a seeded shuffle) and the rest.
    pub fn split(&self, frac: f64, seed: u64) -> Result<(Self, Self)> {
        let n = self.len();
        let k = ((n as f64) * frac).ceil() as usize;
        if k == 0 || k >= n {
            return Err(Error::Data(format!("split fraction {frac} leaves an empty side of {n} rows")));
        }
        let perm = batch::permutation(n, seed, 0);
        Ok((self.select(&perm[..k])?, self.select(&perm[k..])?))
    }
}

/// Test rows tagged normal/anomalous by a held-out class.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSplit<T> {
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
    pub anomalous: Vec<bool>,
}

/// Rows whose label differs from `class`. Idempotent.
pub fn without_class<T: Scalar>(ds: &LabeledDataset<T>, class: u32) -> Result<LabeledDataset<T>> {
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] != class).collect();
    ds.select(&keep)
}

/// Removes `held_class` from the training side; the test side keeps every
/// row with its anomaly flag.
pub fn holdout_split<T: Scalar>(ds: &LabeledDataset<T>, held_class: u32) -> Result<HoldoutSplit<T>> {
    if !ds.labels.contains(&held_class) {
        return Err(Error::Data(format!("held-out class {held_class} is absent")));
    }
    Ok(HoldoutSplit {
        train: without_class(ds, held_class)?,
        test: ds.clone(),
        anomalous: ds.labels.iter().map(|&l| l == held_class).collect(),
    })
}
