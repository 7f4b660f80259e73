use crate::diffcore::Init;
use crate::ebm::EnergyNet;
use crate::error::{Error, Result};
use crate::generator::{GeneratorNet, GeneratorSpec};
use crate::inference::{InferenceNet, InferenceSpec};
use crate::rng::{self, stream};
use crate::scalar::Scalar;

/// Architecture of the prior, generator and inference networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub nef: usize,
    pub generator: GeneratorSpec<T>,
    pub inference: InferenceSpec,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(latent_dims: &[usize], obs_dim: usize, hidden: usize) -> Self {
        Self {
            nef: 100,
            generator: GeneratorSpec::new(latent_dims, obs_dim, hidden),
            inference: InferenceSpec::new(obs_dim, latent_dims, hidden),
        }
    }

    pub fn latent_dims(&self) -> &[usize] {
        &self.generator.latent_dims
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.inference.validate()?;
        if self.generator.latent_dims != self.inference.latent_dims {
            return Err(Error::Config(format!(
                "generator latent dims {:?} differ from inference latent dims {:?}",
                self.generator.latent_dims, self.inference.latent_dims
            )));
        }
        if self.generator.obs_dim != self.inference.obs_dim {
            return Err(Error::Config(format!(
                "generator obs dim {} differs from inference obs dim {}",
                self.generator.obs_dim, self.inference.obs_dim
            )));
        }
        Ok(())
    }
}

/// Prior (α), generator (β) and inference (φ) networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub energy: EnergyNet<T>,
    pub generator: GeneratorNet<T>,
    pub inference: InferenceNet<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: &ModelSpec<T>, seed: u64) -> Result<Self> {
        Self::with_init(spec, seed, Init::ScaledUniform)
    }

    pub fn with_init(spec: &ModelSpec<T>, seed: u64, init: Init) -> Result<Self> {
        spec.validate()?;
        let dims = spec.latent_dims();
        Ok(Self {
            energy: EnergyNet::new(dims, spec.nef, init, &mut rng::derived(seed, &[stream::INIT_ENERGY]))?,
            generator: GeneratorNet::new(
                spec.generator.clone(),
                init,
                &mut rng::derived(seed, &[stream::INIT_GENERATOR]),
            )?,
            inference: InferenceNet::new(
                spec.inference.clone(),
                init,
                &mut rng::derived(seed, &[stream::INIT_INFERENCE]),
            )?,
        })
    }

    pub fn latent_dims(&self) -> &[usize] {
        self.generator.latent_dims()
    }

    pub fn num_layers(&self) -> usize {
        self.latent_dims().len()
    }

    pub fn obs_dim(&self) -> usize {
        self.generator.obs_dim()
    }
}
