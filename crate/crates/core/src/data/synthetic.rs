//! Synthetic observations with a known factor hierarchy: a discrete class
//! on top, a continuous style below it and, optionally, a local factor at
//! the bottom.
//!
//! `x = T_c + a(s)·W + b(s)·W' (+ u·U) + N(0, noise_std²)`, clamped to
//! `[−1, 1]`, where `(a, b) = (s, 0)` for a straight style deformation and
//! traces a circular arc when `style_bend > 0`. The
//! patterns are rows of a Sylvester–Hadamard matrix, mutually orthogonal
//! whenever `obs_dim` is a power of two. Classes stay linearly separable
//! from `x` while `noise_std` is well below the class amplitude (0.4 by
//! default).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::{dot, Scalar};

use super::LabeledDataset;

pub const TEMPLATE_AMPLITUDE: f64 = 0.4;
pub const STYLE_AMPLITUDE: f64 = 0.3;
pub const LOCAL_AMPLITUDE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: u32,
    /// 2 for (class, style); 3 adds the local factor.
    pub levels: usize,
    pub obs_dim: usize,
    pub noise_std: f64,
    pub style_range: (f64, f64),
    pub seed: u64,
    pub n_samples: usize,
    /// Peak magnitude of the class, style and local patterns.
    pub amplitudes: (f64, f64, f64),
    /// Curvature of the style path; 0 gives the straight deformation `s·W`.
    pub style_bend: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            levels: 2,
            obs_dim: 64,
            noise_std: 0.1,
            style_range: (-1.0, 1.0),
            seed: 0,
            n_samples: 3000,
            amplitudes: (TEMPLATE_AMPLITUDE, STYLE_AMPLITUDE, LOCAL_AMPLITUDE),
            style_bend: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        if !(2..=3).contains(&self.levels) {
            return Err(Error::Config(format!("levels must be 2 or 3, got {}", self.levels)));
        }
        let patterns = self.n_classes as usize + self.levels;
        if self.obs_dim < patterns + 1 {
            return Err(Error::Config(format!(
                "obs_dim {} too small for {patterns} orthogonal patterns",
                self.obs_dim
            )));
        }
        let (a, b, c) = self.amplitudes;
        if !(a > 0.0 && b >= 0.0 && c >= 0.0) {
            return Err(Error::Config("pattern amplitudes must be non-negative, class amplitude positive".into()));
        }
        if !self.style_bend.is_finite() {
            return Err(Error::Config("style_bend must be finite".into()));
        }
        if self.n_samples == 0 || !(self.style_range.0 < self.style_range.1) {
            return Err(Error::Config("need samples and a non-empty style range".into()));
        }
        Ok(())
    }
}

/// Fixed generating patterns of a [`SyntheticSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTemplates {
    pub classes: Vec<Vec<f64>>,
    pub style: Vec<f64>,
    /// Second style pattern, used when the deformation is bent.
    pub style_bend_dir: Vec<f64>,
    pub style_bend: f64,
    pub local: Option<Vec<f64>>,
    pub style_range: (f64, f64),
}

fn hadamard_row(row: usize, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |col| if (row & col).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
}

impl SyntheticTemplates {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let size = spec.obs_dim.next_power_of_two();
        let mut rows: Vec<usize> = (1..size).collect();
        rows.shuffle(&mut rng::derived(spec.seed, &[stream::DATA, 0]));
        let pattern = |r: usize, amp: f64| -> Vec<f64> {
            hadamard_row(r, size).take(spec.obs_dim).map(|v| v * amp).collect()
        };
        let c = spec.n_classes as usize;
        Ok(Self {
            classes: rows[..c].iter().map(|&r| pattern(r, spec.amplitudes.0)).collect(),
            style: pattern(rows[c], spec.amplitudes.1),
            style_bend_dir: pattern(rows[c + 1], spec.amplitudes.1),
            style_bend: spec.style_bend,
            local: (spec.levels == 3).then(|| pattern(rows[c + 2], spec.amplitudes.2)),
            style_range: spec.style_range,
        })
    }

    /// Coefficients of the two style patterns at style `s`: `(s, 0)` when
    /// unbent, otherwise a circular arc of curvature `b` through the origin,
    /// `(sin(bs)/b, (1 − cos(bs))/b)`.
    pub fn style_coords(&self, s: f64) -> (f64, f64) {
        let b = self.style_bend;
        if b == 0.0 {
            (s, 0.0)
        } else {
            ((b * s).sin() / b, (1.0 - (b * s).cos()) / b)
        }
    }

    pub fn render(&self, class: usize, style: f64, local: f64) -> Vec<f64> {
        let (a, b) = self.style_coords(style);
        let mut x: Vec<f64> = self.classes[class]
            .iter()
            .zip(&self.style)
            .zip(&self.style_bend_dir)
            .map(|((&t, &w), &w2)| t + a * w + b * w2)
            .collect();
        if let Some(u) = &self.local {
            for (v, &ui) in x.iter_mut().zip(u) {
                *v += local * ui;
            }
        }
        x
    }

    pub fn oracle(&self) -> NearestTemplate {
        NearestTemplate {
            templates: self.clone(),
        }
    }
}

const ORACLE_GRID: usize = 401;

/// Classifies an observation by the nearest noiseless rendering over every
/// class, a fine grid of in-range styles and (projected) local offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestTemplate {
    templates: SyntheticTemplates,
}

impl NearestTemplate {
    pub fn predict<T: Scalar>(&self, x: &[T]) -> u32 {
        let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        let t = &self.templates;
        let (lo, hi) = t.style_range;
        let mut best = (f64::INFINITY, 0u32);
        for c in 0..t.classes.len() {
            for k in 0..ORACLE_GRID {
                let s = lo + (hi - lo) * k as f64 / (ORACLE_GRID - 1) as f64;
                let mut r: Vec<f64> = x.iter().zip(t.render(c, s, 0.0)).map(|(a, b)| a - b).collect();
                if let Some(u) = &t.local {
                    let l = (dot(&r, u) / dot(u, u)).clamp(-1.0, 1.0);
                    r.iter_mut().zip(u).for_each(|(a, ui)| *a -= l * ui);
                }
                let d = dot(&r, &r);
                if d < best.0 {
                    best = (d, c as u32);
                }
            }
        }
        best.1
    }
}

/// Draws a labelled dataset with per-row style (and local) factors.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<(LabeledDataset<T>, SyntheticTemplates)> {
    let templates = SyntheticTemplates::new(spec)?;
    let mut rng = rng::derived(spec.seed, &[stream::DATA, 1]);
    let n = spec.n_samples;
    let mut rows = Vec::with_capacity(n * spec.obs_dim);
    let mut labels = Vec::with_capacity(n);
    let mut styles = Vec::with_capacity(n);
    let mut locals = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..spec.n_classes);
        let s = rng.random_range(spec.style_range.0..spec.style_range.1);
        let u = if spec.levels == 3 { rng.random_range(-1.0..1.0) } else { 0.0 };
        for v in templates.render(c as usize, s, u) {
            let noise: f64 = if spec.noise_std > 0.0 {
                spec.noise_std * rng::normal::<f64, _>(&mut rng)
            } else {
                0.0
            };
            rows.push(T::lit((v + noise).clamp(-1.0, 1.0)));
        }
        labels.push(c);
        styles.push(T::lit(s));
        locals.push(T::lit(u));
    }
    let mut ds = LabeledDataset::new(spec.obs_dim, rows, labels, spec.n_classes)?.with_styles(styles)?;
    if spec.levels == 3 {
        ds.locals = Some(locals);
    }
    Ok((ds, templates))
}
