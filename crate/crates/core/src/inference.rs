//! Bottom-up amortised inference: a deterministic feature ladder
//! `r_1 = h_1(x)`, `r_i = h_i(r_{i−1})`, with a diagonal-Gaussian head on
//! every rung.

use rand::Rng;

use crate::diffcore::{Activation, Grads, Init, Mlp, MlpSpec, MlpTrace, ParamStore};
use crate::ebm::{LatentStack, NegEnergy};
use crate::error::{Error, Result};
use crate::generator::GeneratorNet;
use crate::scalar::Scalar;

/// Bound applied to predicted log-variances.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceSpec {
    pub obs_dim: usize,
    pub latent_dims: Vec<usize>,
    /// Widths of `r_1 … r_L`.
    pub feature_dims: Vec<usize>,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl InferenceSpec {
    /// One hidden layer per rung; rung widths mirror the generator taper.
    pub fn new(obs_dim: usize, latent_dims: &[usize], hidden: usize) -> Self {
        let feature_dims = (0..latent_dims.len())
            .map(|i| (hidden >> i).max(4))
            .collect();
        Self {
            obs_dim,
            latent_dims: latent_dims.to_vec(),
            feature_dims,
            hidden,
            hidden_layers: 1,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.latent_dims.len();
        if l == 0 || self.latent_dims.contains(&0) {
            return Err(Error::Config("inference needs L >= 1 positive latent dims".into()));
        }
        if self.feature_dims.len() != l || self.feature_dims.contains(&0) {
            return Err(Error::Config(format!(
                "inference feature dims must list L = {l} positive widths"
            )));
        }
        if self.obs_dim == 0 || (self.hidden_layers > 0 && self.hidden == 0) {
            return Err(Error::Config("inference widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-layer mean and log-variance of `q(z|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams<T> {
    pub means: Vec<Vec<T>>,
    pub logvars: Vec<Vec<T>>,
    /// How many log-variance entries hit the clamp.
    pub clamped: usize,
}

impl<T: Scalar> PosteriorParams<T> {
    pub fn new(means: Vec<Vec<T>>, logvars: Vec<Vec<T>>) -> Result<Self> {
        if means.len() != logvars.len() || means.is_empty() {
            return Err(Error::shape("posterior layers", means.len(), logvars.len()));
        }
        for (m, v) in means.iter().zip(&logvars) {
            if m.len() != v.len() {
                return Err(Error::shape("posterior layer", m.len(), v.len()));
            }
            if !crate::scalar::all_finite(m) || !crate::scalar::all_finite(v) {
                return Err(Error::non_finite("posterior parameters"));
            }
        }
        Ok(Self {
            means,
            logvars,
            clamped: 0,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.means.iter().map(Vec::len).collect()
    }

    pub fn mean_stack(&self) -> LatentStack<T> {
        LatentStack::new(self.means.clone()).expect("posterior means are non-empty")
    }

    fn check(&self, z: &LatentStack<T>) -> Result<()> {
        z.check_dims(&self.dims())
    }
}

/// `z_i = μ_i + exp(λ_i / 2) ⊙ ε_i`.
pub fn reparam_sample<T: Scalar>(pp: &PosteriorParams<T>, eps: &LatentStack<T>) -> Result<LatentStack<T>> {
    pp.check(eps)?;
    let layers = pp
        .means
        .iter()
        .zip(&pp.logvars)
        .zip(eps.layers())
        .map(|((m, v), e)| {
            m.iter()
                .zip(v)
                .zip(e)
                .map(|((&mi, &vi), &ei)| mi + (vi * T::half()).exp() * ei)
                .collect()
        })
        .collect();
    LatentStack::new(layers)
}

/// Standard-normal noise shaped like `dims`.
pub fn draw_noise<T: Scalar, R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> LatentStack<T> {
    LatentStack::new(dims.iter().map(|&d| crate::rng::normal_vec(rng, d)).collect())
        .expect("dims are positive")
}

/// Exact diagonal-Gaussian log-density summed over layers.
pub fn log_q<T: Scalar>(pp: &PosteriorParams<T>, z: &LatentStack<T>) -> Result<T> {
    pp.check(z)?;
    let ln2pi = (T::two() * T::PI()).ln();
    let mut acc = T::zero();
    for ((m, v), zl) in pp.means.iter().zip(&pp.logvars).zip(z.layers()) {
        for ((&mi, &vi), &zi) in m.iter().zip(v).zip(zl) {
            let r = zi - mi;
            acc -= T::half() * (r * r * (-vi).exp() + vi + ln2pi);
        }
    }
    Ok(acc)
}

/// `KL(N(μ, diag e^λ) ‖ N(0, I)) = ½ Σ (e^λ + μ² − 1 − λ)`.
pub fn kl_to_reference<T: Scalar>(pp: &PosteriorParams<T>) -> T {
    let mut acc = T::zero();
    for (m, v) in pp.means.iter().zip(&pp.logvars) {
        for (&mi, &vi) in m.iter().zip(v) {
            acc += T::half() * (vi.exp() + mi * mi - T::one() - vi);
        }
    }
    acc
}

/// Unit-Gaussian reference log-density `log N(z; 0, I)`.
pub fn log_reference<T: Scalar>(z: &LatentStack<T>) -> T {
    let flat = z.concat();
    let d = T::from_usize_lossy(flat.len());
    -T::half() * crate::scalar::sq_norm(&flat) - d * T::half() * (T::two() * T::PI()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceNet<T> {
    spec: InferenceSpec,
    ladder: Vec<Mlp>,
    heads: Vec<Mlp>,
    params: ParamStore<T>,
}

#[derive(Debug, Clone)]
pub struct InferTrace<T> {
    ladder: Vec<MlpTrace<T>>,
    heads: Vec<MlpTrace<T>>,
    pub posterior: PosteriorParams<T>,
}

impl<T: Scalar> InferTrace<T> {
    /// Rung feature `r_i` (0-based).
    pub fn feature(&self, i: usize) -> &[T] {
        self.ladder[i].output()
    }
}

/// Terms of the per-example negative ELBO at one reparameterised sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleTerms<T> {
    pub z: LatentStack<T>,
    pub recon_nll: T,
    pub kl_ref: T,
    pub energy: T,
}

impl<T: Scalar> ExampleTerms<T> {
    /// `−log p(x|z) + KL(q‖p_0) − f(z)`.
    pub fn loss(&self) -> T {
        self.recon_nll + self.kl_ref - self.energy
    }
}

impl<T: Scalar> InferenceNet<T> {
    pub fn new<R: Rng + ?Sized>(spec: InferenceSpec, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut ladder = Vec::new();
        let mut heads = Vec::new();
        for i in 0..spec.latent_dims.len() {
            let input_dim = if i == 0 { spec.obs_dim } else { spec.feature_dims[i - 1] };
            let rung = MlpSpec {
                input_dim,
                hidden_dims: vec![spec.hidden; spec.hidden_layers],
                output_dim: spec.feature_dims[i],
                activation: spec.activation,
                final_activation: spec.activation,
            };
            ladder.push(Mlp::register(rung, &mut params, &format!("inf.h{}", i + 1), init, rng)?);
        }
        for i in 0..spec.latent_dims.len() {
            let head = MlpSpec {
                input_dim: spec.feature_dims[i],
                hidden_dims: vec![],
                output_dim: 2 * spec.latent_dims[i],
                activation: Activation::Identity,
                final_activation: Activation::Identity,
            };
            heads.push(Mlp::register(head, &mut params, &format!("inf.q{}", i + 1), init, rng)?);
        }
        Ok(Self {
            spec,
            ladder,
            heads,
            params,
        })
    }

    pub fn spec(&self) -> &InferenceSpec {
        &self.spec
    }

    pub fn rung(&self, i: usize) -> &Mlp {
        &self.ladder[i]
    }

    pub fn head(&self, i: usize) -> &Mlp {
        &self.heads[i]
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn infer_traced(&self, x: &[T]) -> Result<InferTrace<T>> {
        if x.len() != self.spec.obs_dim {
            return Err(Error::shape("observation", self.spec.obs_dim, x.len()));
        }
        let clamp = T::lit(LOGVAR_CLAMP);
        let mut ladder = Vec::with_capacity(self.ladder.len());
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut means = Vec::new();
        let mut logvars = Vec::new();
        let mut clamped = 0;
        let mut r = x.to_vec();
        for (i, (rung, head)) in self.ladder.iter().zip(&self.heads).enumerate() {
            let t = rung.forward_traced(&self.params, &r)?;
            r = t.output().to_vec();
            ladder.push(t);
            let h = head.forward_traced(&self.params, &r)?;
            let d = self.spec.latent_dims[i];
            let out = h.output();
            means.push(out[..d].to_vec());
            logvars.push(
                out[d..]
                    .iter()
                    .map(|&v| {
                        if v.abs() > clamp {
                            clamped += 1;
                        }
                        v.max(-clamp).min(clamp)
                    })
                    .collect(),
            );
            heads.push(h);
        }
        let mut posterior = PosteriorParams::new(means, logvars)?;
        posterior.clamped = clamped;
        Ok(InferTrace {
            ladder,
            heads,
            posterior,
        })
    }

    pub fn infer(&self, x: &[T]) -> Result<PosteriorParams<T>> {
        Ok(self.infer_traced(x)?.posterior)
    }

    /// Backpropagates gradients w.r.t. the per-layer (mean, clamped log-var)
    /// into the parameter gradients.
    pub fn backward(
        &self,
        trace: &InferTrace<T>,
        d_mean: &[Vec<T>],
        d_logvar: &[Vec<T>],
        grads: &mut Grads<T>,
    ) -> Result<Vec<T>> {
        let l = self.ladder.len();
        let clamp = T::lit(LOGVAR_CLAMP);
        let mut carry: Option<Vec<T>> = None;
        for i in (0..l).rev() {
            let raw = &trace.heads[i].output()[self.spec.latent_dims[i]..];
            let mut upstream = d_mean[i].clone();
            upstream.extend(
                d_logvar[i]
                    .iter()
                    .zip(raw)
                    .map(|(&g, &v)| if v.abs() > clamp { T::zero() } else { g }),
            );
            let mut dr = self.heads[i].backward(&self.params, &trace.heads[i], &upstream, Some(grads))?;
            if let Some(c) = carry.take() {
                for (a, b) in dr.iter_mut().zip(c) {
                    *a += b;
                }
            }
            carry = Some(self.ladder[i].backward(&self.params, &trace.ladder[i], &dr, Some(grads))?);
        }
        Ok(carry.expect("at least one rung"))
    }

    /// Loss terms for one datum at fixed noise `eps`.
    pub fn example_terms<E: NegEnergy<T> + ?Sized>(
        &self,
        energy: &E,
        generator: &GeneratorNet<T>,
        x: &[T],
        eps: &LatentStack<T>,
    ) -> Result<ExampleTerms<T>> {
        let pp = self.infer(x)?;
        let z = reparam_sample(&pp, eps)?;
        let recon_nll = -generator.log_likelihood(x, &z)?;
        let energy = energy.value(&z.concat())?;
        Ok(ExampleTerms {
            z,
            recon_nll,
            kl_ref: kl_to_reference(&pp),
            energy,
        })
    }

    /// Pathwise gradient w.r.t. the inference parameters of the mean over
    /// `batch` of `−log p(x|z) + KL(q‖p_0) − f(z)`, with `z` reparameterised
    /// through the supplied noise. `log Z` of the prior is constant in these
    /// parameters and drops out.
    pub fn inf_grad<E: NegEnergy<T> + ?Sized>(
        &self,
        energy: &E,
        generator: &GeneratorNet<T>,
        batch: &[(&[T], &LatentStack<T>)],
    ) -> Result<Grads<T>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("inf_grad"));
        }
        let mut total = Grads::zeros_like(&self.params);
        for (x, eps) in batch {
            let mut g = Grads::zeros_like(&self.params);
            self.accumulate_example_grad(energy, generator, x, eps, &mut g)?;
            total.add_assign(&g);
        }
        total.scale(T::one() / T::from_usize_lossy(batch.len()));
        if !total.is_finite() {
            return Err(Error::non_finite("inference gradient"));
        }
        Ok(total)
    }

    fn accumulate_example_grad<E: NegEnergy<T> + ?Sized>(
        &self,
        energy: &E,
        generator: &GeneratorNet<T>,
        x: &[T],
        eps: &LatentStack<T>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let trace = self.infer_traced(x)?;
        let pp = &trace.posterior;
        let z = reparam_sample(pp, eps)?;
        let (_, dlogp) = generator.log_likelihood_grads(x, &z, None)?;
        let (_, df) = energy.value_and_grad(&z.concat())?;
        let dims = pp.dims();
        let df = LatentStack::from_flat(&dims, &df)?;
        let mut d_mean = Vec::with_capacity(dims.len());
        let mut d_logvar = Vec::with_capacity(dims.len());
        for i in 0..dims.len() {
            let mut dm = Vec::with_capacity(dims[i]);
            let mut dv = Vec::with_capacity(dims[i]);
            for j in 0..dims[i] {
                let dz = -dlogp.layer(i)[j] - df.layer(i)[j];
                let mu = pp.means[i][j];
                let lv = pp.logvars[i][j];
                let scale = (lv * T::half()).exp();
                dm.push(dz + mu);
                dv.push(dz * eps.layer(i)[j] * T::half() * scale + T::half() * (lv.exp() - T::one()));
            }
            d_mean.push(dm);
            d_logvar.push(dv);
        }
        self.backward(&trace, &d_mean, &d_logvar, grads)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pp1(mu: f64, lv: f64) -> PosteriorParams<f64> {
        PosteriorParams::new(vec![vec![mu]], vec![vec![lv]]).unwrap()
    }

    #[test]
    fn zero_net_gives_standard_posterior() {
        let net = InferenceNet::<f64>::new(InferenceSpec::new(5, &[2, 3], 8), Init::Zeros, &mut seeded(0)).unwrap();
        let pp = net.infer(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(pp.means, vec![vec![0.0; 2], vec![0.0; 3]]);
        assert_eq!(pp.logvars, vec![vec![0.0; 2], vec![0.0; 3]]);
        assert_eq!(kl_to_reference(&pp), 0.0);
    }

    #[test]
    fn reparam_closed_forms() {
        let pp = PosteriorParams::new(vec![vec![0.5, -1.0]], vec![vec![0.0, 0.0]]).unwrap();
        let zero = LatentStack::new(vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(reparam_sample(&pp, &zero).unwrap().concat(), vec![0.5, -1.0]);
        let ones = LatentStack::new(vec![vec![1.0, 1.0]]).unwrap();
        assert_eq!(reparam_sample(&pp, &ones).unwrap().concat(), vec![1.5, 0.0]);
    }

    #[test]
    fn log_q_closed_forms() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let pp = PosteriorParams::new(vec![vec![0.3, -0.2, 1.0]], vec![vec![0.0; 3]]).unwrap();
        let z = pp.mean_stack();
        assert!((log_q(&pp, &z).unwrap() + 1.5 * ln2pi).abs() < 1e-14);
        let z = LatentStack::new(vec![vec![2.0]]).unwrap();
        assert!((log_q(&pp1(0.0, 0.0), &z).unwrap() - (-2.0 - 0.5 * ln2pi)).abs() < 1e-14);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_to_reference(&pp1(0.0, 0.0)), 0.0);
        assert_eq!(kl_to_reference(&pp1(1.0, 0.0)), 0.5);
    }

    #[test]
    fn log_variance_is_clamped_and_counted() {
        let mut net = InferenceNet::<f64>::new(InferenceSpec::new(2, &[1], 4), Init::Zeros, &mut seeded(0)).unwrap();
        let head = net.head(0).clone();
        net.params_mut().value_mut(head.bias_index(0))[1] = 25.0;
        let pp = net.infer(&[0.0, 0.0]).unwrap();
        assert_eq!(pp.logvars[0][0], 10.0);
        assert_eq!(pp.clamped, 1);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let net = InferenceNet::<f64>::new(InferenceSpec::new(4, &[2, 2], 8), Init::ScaledUniform, &mut seeded(3)).unwrap();
        let x = [0.2, -0.5, 0.7, 0.1];
        assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());
    }

    #[test]
    fn perturbing_input_moves_every_layer() {
        let net = InferenceNet::<f64>::new(InferenceSpec::new(4, &[2, 2, 2], 8), Init::ScaledUniform, &mut seeded(3)).unwrap();
        let a = net.infer_traced(&[0.2, -0.5, 0.7, 0.1]).unwrap();
        let b = net.infer_traced(&[0.3, -0.5, 0.7, 0.1]).unwrap();
        for i in 0..3 {
            assert_ne!(a.feature(i), b.feature(i));
            assert_ne!(a.posterior.means[i], b.posterior.means[i]);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = InferenceNet::<f64>::new(InferenceSpec::new(2, &[1], 4), Init::Zeros, &mut seeded(0)).unwrap();
        let g = GeneratorNet::new(crate::generator::GeneratorSpec::new(&[1], 2, 4), Init::Zeros, &mut seeded(0)).unwrap();
        let e = crate::ebm::EnergyNet::gaussian(&[1]).unwrap();
        assert!(matches!(net.inf_grad(&e, &g, &[]), Err(Error::EmptyBatch(_))));
    }
}
