//! Top-down hierarchical generator with a Gaussian observation model.
//!
//! `h_L = g_L(z_L)`, `h_i = g_i([z_i, h_{i+1}])`, `x ~ N(h_1, σ² I)`.

use rand::Rng;

use crate::diffcore::{Activation, Grads, Init, Mlp, MlpSpec, MlpTrace, ParamStore};
use crate::ebm::LatentStack;
use crate::error::{Error, Result};
use crate::scalar::{sq_norm, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec<T> {
    pub latent_dims: Vec<usize>,
    pub obs_dim: usize,
    /// Widths of `h_2 … h_L` (length `L − 1`); `h_1` always has `obs_dim`.
    pub feature_dims: Vec<usize>,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub output_activation: Activation,
    pub sigma: T,
}

impl<T: Scalar> GeneratorSpec<T> {
    /// Two leaky-ReLU hidden layers per `g_i`, tanh output, σ = 0.3 and a
    /// geometric feature taper that halves with each layer away from the data.
    pub fn new(latent_dims: &[usize], obs_dim: usize, hidden: usize) -> Self {
        Self {
            latent_dims: latent_dims.to_vec(),
            obs_dim,
            feature_dims: taper(obs_dim, latent_dims.len()),
            hidden,
            hidden_layers: 2,
            activation: Activation::LeakyRelu,
            output_activation: Activation::Tanh,
            sigma: T::lit(0.3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.latent_dims.len();
        if l == 0 || self.latent_dims.contains(&0) {
            return Err(Error::Config("generator needs L >= 1 positive latent dims".into()));
        }
        if self.feature_dims.len() + 1 != l {
            return Err(Error::Config(format!(
                "generator feature dims must list L-1 = {} widths, got {}",
                l - 1,
                self.feature_dims.len()
            )));
        }
        if self.obs_dim == 0 || self.feature_dims.contains(&0) {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        if self.hidden_layers > 0 && self.hidden == 0 {
            return Err(Error::Config("generator hidden width must be positive".into()));
        }
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(Error::Config("observation sigma must be positive".into()));
        }
        Ok(())
    }

    /// Output width of layer `i` (0-based, bottom first).
    fn out_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.obs_dim
        } else {
            self.feature_dims[i - 1]
        }
    }
}

/// Geometric taper `D/2, D/4, …` (floored at 4) for `h_2 … h_L`.
pub fn taper(obs_dim: usize, layers: usize) -> Vec<usize> {
    (1..layers)
        .map(|i| (obs_dim >> i).max(4))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet<T> {
    spec: GeneratorSpec<T>,
    layers: Vec<Mlp>,
    params: ParamStore<T>,
}

/// Per-layer traces from a decode, bottom first.
#[derive(Debug, Clone)]
pub struct DecodeTrace<T> {
    traces: Vec<MlpTrace<T>>,
}

impl<T: Scalar> DecodeTrace<T> {
    pub fn mean(&self) -> &[T] {
        self.traces[0].output()
    }

    /// Feature `h_i` (0-based layer index).
    pub fn feature(&self, i: usize) -> &[T] {
        self.traces[i].output()
    }
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec<T>, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let l = spec.latent_dims.len();
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(l);
        for i in 0..l {
            let input_dim = if i + 1 == l {
                spec.latent_dims[i]
            } else {
                spec.latent_dims[i] + spec.out_dim(i + 1)
            };
            let mlp_spec = MlpSpec {
                input_dim,
                hidden_dims: vec![spec.hidden; spec.hidden_layers],
                output_dim: spec.out_dim(i),
                activation: spec.activation,
                final_activation: if i == 0 {
                    spec.output_activation
                } else {
                    Activation::Identity
                },
            };
            layers.push(Mlp::register(mlp_spec, &mut params, &format!("gen.g{}", i + 1), init, rng)?);
        }
        Ok(Self { spec, layers, params })
    }

    pub fn spec(&self) -> &GeneratorSpec<T> {
        &self.spec
    }

    pub fn layer(&self, i: usize) -> &Mlp {
        &self.layers[i]
    }

    pub fn latent_dims(&self) -> &[usize] {
        &self.spec.latent_dims
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim
    }

    pub fn sigma(&self) -> T {
        self.spec.sigma
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn decode_traced(&self, z: &LatentStack<T>) -> Result<DecodeTrace<T>> {
        z.check_dims(&self.spec.latent_dims)?;
        let l = self.layers.len();
        let mut traces: Vec<Option<MlpTrace<T>>> = vec![None; l];
        let top = self.layers[l - 1].forward_traced(&self.params, z.layer(l - 1))?;
        let mut above = top.output().to_vec();
        traces[l - 1] = Some(top);
        for i in (0..l - 1).rev() {
            let mut input = z.layer(i).to_vec();
            input.extend_from_slice(&above);
            let t = self.layers[i].forward_traced(&self.params, &input)?;
            above = t.output().to_vec();
            traces[i] = Some(t);
        }
        Ok(DecodeTrace {
            traces: traces.into_iter().map(|t| t.expect("every layer traced")).collect(),
        })
    }

    /// Observation mean `g(z) = h_1`.
    pub fn decode(&self, z: &LatentStack<T>) -> Result<Vec<T>> {
        Ok(self.decode_traced(z)?.mean().to_vec())
    }

    /// Backpropagates `upstream = ∂L/∂h_1` through the chain. Returns the
    /// gradient w.r.t. each latent layer; parameter gradients are added to
    /// `grads` when given.
    pub fn backward(
        &self,
        trace: &DecodeTrace<T>,
        upstream: &[T],
        mut grads: Option<&mut Grads<T>>,
    ) -> Result<LatentStack<T>> {
        let l = self.layers.len();
        let mut dz = Vec::with_capacity(l);
        let mut carry = upstream.to_vec();
        for i in 0..l {
            let gin = self.layers[i].backward(&self.params, &trace.traces[i], &carry, grads.as_deref_mut())?;
            let di = self.spec.latent_dims[i];
            dz.push(gin[..di].to_vec());
            carry = gin[di..].to_vec();
        }
        LatentStack::new(dz)
    }

    /// Exact Gaussian log-density `log N(x; g(z), σ² I)`.
    pub fn log_likelihood(&self, x: &[T], z: &LatentStack<T>) -> Result<T> {
        self.check_obs(x)?;
        let mean = self.decode(z)?;
        Ok(self.log_density(x, &mean))
    }

    pub(crate) fn log_density(&self, x: &[T], mean: &[T]) -> T {
        let s2 = self.spec.sigma * self.spec.sigma;
        let r: T = x.iter().zip(mean).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let d = T::from_usize_lossy(self.spec.obs_dim);
        -r / (T::two() * s2) - d * T::half() * (T::two() * T::PI() * s2).ln()
    }

    /// `(log p(x|z), ∂ log p / ∂z)`, adding `∇_β log p` into `grads`.
    pub fn log_likelihood_grads(
        &self,
        x: &[T],
        z: &LatentStack<T>,
        grads: Option<&mut Grads<T>>,
    ) -> Result<(T, LatentStack<T>)> {
        self.check_obs(x)?;
        let trace = self.decode_traced(z)?;
        let ll = self.log_density(x, trace.mean());
        let s2 = self.spec.sigma * self.spec.sigma;
        let upstream: Vec<T> = x
            .iter()
            .zip(trace.mean())
            .map(|(&a, &b)| (a - b) / s2)
            .collect();
        let dz = self.backward(&trace, &upstream, grads)?;
        for layer in dz.layers() {
            if !crate::scalar::all_finite(layer) {
                return Err(Error::non_finite("generator latent gradient"));
            }
        }
        Ok((ll, dz))
    }

    pub fn grad_wrt_latent(&self, x: &[T], z: &LatentStack<T>) -> Result<LatentStack<T>> {
        Ok(self.log_likelihood_grads(x, z, None)?.1)
    }

    /// `mean_b ∇_β log p(x_b | z_b)`, the ascent direction for the generator.
    pub fn gen_grad(&self, batch: &[(&[T], &LatentStack<T>)]) -> Result<Grads<T>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("gen_grad"));
        }
        let mut g = Grads::zeros_like(&self.params);
        let w = T::one() / T::from_usize_lossy(batch.len());
        for (x, z) in batch {
            let mut gi = Grads::zeros_like(&self.params);
            self.log_likelihood_grads(x, z, Some(&mut gi))?;
            g.add_assign(&gi);
        }
        g.scale(w);
        if !g.is_finite() {
            return Err(Error::non_finite("generator gradient"));
        }
        Ok(g)
    }

    /// `decode(z) + σ·ε`.
    pub fn sample_observation<R: Rng + ?Sized>(&self, z: &LatentStack<T>, rng: &mut R) -> Result<Vec<T>> {
        let mut x = self.decode(z)?;
        for v in &mut x {
            *v += self.spec.sigma * crate::rng::normal::<T, _>(rng);
        }
        Ok(x)
    }

    fn check_obs(&self, x: &[T]) -> Result<()> {
        if x.len() != self.spec.obs_dim {
            return Err(Error::shape("observation", self.spec.obs_dim, x.len()));
        }
        if !crate::scalar::all_finite(x) {
            return Err(Error::non_finite("observation"));
        }
        Ok(())
    }
}

/// Squared reconstruction error per coordinate.
pub fn mse<T: Scalar>(x: &[T], mean: &[T]) -> T {
    let diff: Vec<T> = x.iter().zip(mean).map(|(&a, &b)| a - b).collect();
    sq_norm(&diff) / T::from_usize_lossy(x.len())
}
