//! Joint latent-space energy-based prior.
//!
//! The prior density is an exponential tilt of a unit Gaussian over the
//! concatenation of every latent layer:
//! `p(z) ∝ exp(f(z)) · N(z; 0, I)`, where `f` is the negative energy.

use rand::Rng;

use crate::diffcore::{Activation, Grads, Init, Mlp, MlpSpec, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::{sq_norm, Scalar};

/// Latent code partitioned into layers, bottom (data-near) first.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStack<T> {
    layers: Vec<Vec<T>>,
}

impl<T: Scalar> LatentStack<T> {
    pub fn new(layers: Vec<Vec<T>>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| l.is_empty()) {
            return Err(Error::Config("a latent stack needs L >= 1 non-empty layers".into()));
        }
        Ok(Self { layers })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.iter().map(|&d| vec![T::zero(); d]).collect(),
        }
    }

    /// Splits a concatenated vector according to `dims`.
    pub fn from_flat(dims: &[usize], flat: &[T]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if flat.len() != total {
            return Err(Error::shape("LatentStack::from_flat", total, flat.len()));
        }
        let mut layers = Vec::with_capacity(dims.len());
        let mut at = 0;
        for &d in dims {
            layers.push(flat[at..at + d].to_vec());
            at += d;
        }
        Self::new(layers)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn layer(&self, i: usize) -> &[T] {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.layers[i]
    }

    pub fn layers(&self) -> &[Vec<T>] {
        &self.layers
    }

    pub fn concat(&self) -> Vec<T> {
        self.layers.iter().flatten().copied().collect()
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.layers.len() != dims.len() {
            return Err(Error::shape("latent layer count", dims.len(), self.layers.len()));
        }
        for (l, &d) in self.layers.iter().zip(dims) {
            if l.len() != d {
                return Err(Error::shape("latent layer dim", d, l.len()));
            }
        }
        Ok(())
    }
}

/// Scalar negative energy over the concatenated latent vector.
pub trait NegEnergy<T: Scalar>: Sync {
    fn latent_dim(&self) -> usize;

    fn value(&self, z: &[T]) -> Result<T>;

    /// `(f(z), ∇_z f(z))`.
    fn value_and_grad(&self, z: &[T]) -> Result<(T, Vec<T>)>;
}

/// MLP negative energy: `d → nef → nef → 1`, leaky-ReLU hidden, linear
/// output. `nef = 0` gives `f ≡ 0`, i.e. a plain unit-Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyNet<T> {
    dims: Vec<usize>,
    nef: usize,
    mlp: Option<Mlp>,
    params: ParamStore<T>,
}

impl<T: Scalar> EnergyNet<T> {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], nef: usize, init: Init, rng: &mut R) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Config(format!("latent dims must be positive, got {dims:?}")));
        }
        let mut params = ParamStore::new();
        let mlp = if nef == 0 {
            None
        } else {
            let spec = MlpSpec {
                input_dim: dims.iter().sum(),
                hidden_dims: vec![nef, nef],
                output_dim: 1,
                activation: Activation::LeakyRelu,
                final_activation: Activation::Identity,
            };
            Some(Mlp::register(spec, &mut params, "energy", init, rng)?)
        };
        Ok(Self {
            dims: dims.to_vec(),
            nef,
            mlp,
            params,
        })
    }

    /// The `f ≡ 0` prior.
    pub fn gaussian(dims: &[usize]) -> Result<Self> {
        Self::new(dims, 0, Init::Zeros, &mut crate::rng::seeded(0))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nef(&self) -> usize {
        self.nef
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        self.mlp.as_ref()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Adds `c` to the output bias, shifting `f` by exactly `c`.
    pub fn shift_output(&mut self, c: T) -> Result<()> {
        let mlp = self
            .mlp
            .as_ref()
            .ok_or_else(|| Error::Config("cannot shift the f ≡ 0 energy".into()))?;
        let idx = mlp.bias_index(mlp.num_layers() - 1);
        self.params.value_mut(idx)[0] += c;
        Ok(())
    }

    /// `(f(z), ∇_α f(z))`, accumulated into `grads` with weight `scale`.
    pub fn accumulate_param_grad(&self, z: &[T], scale: T, grads: &mut Grads<T>) -> Result<T> {
        self.check(z)?;
        match &self.mlp {
            None => Ok(T::zero()),
            Some(mlp) => {
                let trace = mlp.forward_traced(&self.params, z)?;
                mlp.backward(&self.params, &trace, &[scale], Some(grads))?;
                Ok(trace.output()[0])
            }
        }
    }

    fn check(&self, z: &[T]) -> Result<()> {
        let d: usize = self.dims.iter().sum();
        if z.len() != d {
            return Err(Error::shape("energy input", d, z.len()));
        }
        Ok(())
    }
}

impl<T: Scalar> NegEnergy<T> for EnergyNet<T> {
    fn latent_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    fn value(&self, z: &[T]) -> Result<T> {
        self.check(z)?;
        match &self.mlp {
            None => Ok(T::zero()),
            Some(mlp) => Ok(mlp.forward(&self.params, z)?[0]),
        }
    }

    fn value_and_grad(&self, z: &[T]) -> Result<(T, Vec<T>)> {
        self.check(z)?;
        match &self.mlp {
            None => Ok((T::zero(), vec![T::zero(); z.len()])),
            Some(mlp) => {
                let trace = mlp.forward_traced(&self.params, z)?;
                let g = mlp.backward(&self.params, &trace, &[T::one()], None)?;
                Ok((trace.output()[0], g))
            }
        }
    }
}

/// Closed-form tilt `f(z) = a·‖z‖²`; its prior is `N(0, 1/(1-2a))` per
/// coordinate for `a < 1/2`. Used as a sampler calibration target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticTilt<T> {
    pub dim: usize,
    pub a: T,
}

impl<T: Scalar> QuadraticTilt<T> {
    pub fn stationary_variance(&self) -> T {
        T::one() / (T::one() - T::two() * self.a)
    }
}

impl<T: Scalar> NegEnergy<T> for QuadraticTilt<T> {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, z: &[T]) -> Result<T> {
        if z.len() != self.dim {
            return Err(Error::shape("energy input", self.dim, z.len()));
        }
        Ok(self.a * sq_norm(z))
    }

    fn value_and_grad(&self, z: &[T]) -> Result<(T, Vec<T>)> {
        let v = self.value(z)?;
        Ok((v, z.iter().map(|&x| T::two() * self.a * x).collect()))
    }
}

fn check_stack<T: Scalar, E: NegEnergy<T> + ?Sized>(net: &E, z: &LatentStack<T>) -> Result<()> {
    if z.total_dim() != net.latent_dim() {
        return Err(Error::shape("latent stack", net.latent_dim(), z.total_dim()));
    }
    Ok(())
}

/// `f([z_1, …, z_L])`.
pub fn energy<T: Scalar, E: NegEnergy<T> + ?Sized>(net: &E, z: &LatentStack<T>) -> Result<T> {
    check_stack(net, z)?;
    net.value(&z.concat())
}

/// `f(z) − ½‖z‖²`: the log prior with `log Z` and the Gaussian normaliser
/// dropped.
pub fn log_unnorm_prior<T: Scalar, E: NegEnergy<T> + ?Sized>(net: &E, z: &LatentStack<T>) -> Result<T> {
    check_stack(net, z)?;
    let flat = z.concat();
    Ok(net.value(&flat)? - T::half() * sq_norm(&flat))
}

/// Flat-vector form of [`log_unnorm_prior`].
pub fn log_unnorm_prior_flat<T: Scalar, E: NegEnergy<T> + ?Sized>(net: &E, z: &[T]) -> Result<T> {
    Ok(net.value(z)? - T::half() * sq_norm(z))
}

/// `∇_z f(z) − z` on a flat vector.
pub fn score_flat<T: Scalar, E: NegEnergy<T> + ?Sized>(net: &E, z: &[T]) -> Result<Vec<T>> {
    let (_, g) = net.value_and_grad(z)?;
    let s: Vec<T> = g.iter().zip(z).map(|(&gi, &zi)| gi - zi).collect();
    if !crate::scalar::all_finite(&s) {
        return Err(Error::non_finite("prior score"));
    }
    Ok(s)
}

/// Gradient of the log prior w.r.t. every latent coordinate.
pub fn score<T: Scalar, E: NegEnergy<T> + ?Sized>(net: &E, z: &LatentStack<T>) -> Result<LatentStack<T>> {
    check_stack(net, z)?;
    let s = score_flat(net, &z.concat())?;
    LatentStack::from_flat(&z.dims(), &s)
}

/// Contrastive learning direction for the prior parameters:
/// `mean_pos ∇_α f − mean_neg ∇_α f`. This is the ascent direction of the
/// log-likelihood; descent callers negate it.
pub fn prior_grad<T: Scalar>(
    net: &EnergyNet<T>,
    positive: &[LatentStack<T>],
    negative: &[LatentStack<T>],
) -> Result<Grads<T>> {
    if positive.is_empty() {
        return Err(Error::EmptyBatch("prior_grad (positive)"));
    }
    if negative.is_empty() {
        return Err(Error::EmptyBatch("prior_grad (negative)"));
    }
    let mean = |batch: &[LatentStack<T>]| -> Result<Grads<T>> {
        let mut g = Grads::zeros_like(&net.params);
        let w = T::one() / T::from_usize_lossy(batch.len());
        for z in batch {
            z.check_dims(&net.dims)?;
            net.accumulate_param_grad(&z.concat(), T::one(), &mut g)?;
        }
        g.scale(w);
        Ok(g)
    };
    let mut g = mean(positive)?;
    g.sub_assign(&mean(negative)?);
    if !g.is_finite() {
        return Err(Error::non_finite("prior gradient"));
    }
    Ok(g)
}
