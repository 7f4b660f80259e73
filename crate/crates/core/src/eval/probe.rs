//! Linear-capacity readout of class labels from inferred latent codes.

use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::diffcore::{Activation, AdamConfig, Grads, Init, Mlp, MlpSpec, ParamStore};
use crate::error::{Error, Result};
use crate::inference::{draw_noise, reparam_sample};
use crate::model::Model;
use crate::rng::{self, stream};
use crate::scalar::Scalar;

/// What the probe reads from the posterior of each example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeFeatures {
    Mean,
    /// One reparameterised draw per example.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of the dataset used to fit the probe; the rest is scored.
    pub train_frac: f64,
    pub seed: u64,
    pub features: ProbeFeatures,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            train_frac: 0.8,
            seed: 0,
            features: ProbeFeatures::Mean,
        }
    }
}

/// Two affine layers with a leaky-ReLU between them and softmax outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeClassifier<T> {
    mlp: Mlp,
    params: ParamStore<T>,
    n_classes: usize,
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / z).collect()
}

impl<T: Scalar> ProbeClassifier<T> {
    pub fn new(input_dim: usize, n_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims: vec![cfg.hidden],
            output_dim: n_classes,
            activation: Activation::LeakyRelu,
            final_activation: Activation::Identity,
        };
        let mut params = ParamStore::new();
        let mlp = Mlp::register(
            spec,
            &mut params,
            "probe",
            Init::ScaledUniform,
            &mut rng::derived(cfg.seed, &[stream::PROBE, 0]),
        )?;
        Ok(Self { mlp, params, n_classes })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.spec().input_dim
    }

    pub fn predict(&self, x: &[T]) -> Result<u32> {
        let logits = self.mlp.forward(&self.params, x)?;
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        Ok(best as u32)
    }

    /// Mean cross-entropy over `xs`, descending with Adam.
    pub fn fit(&mut self, xs: &[Vec<T>], ys: &[u32], cfg: &ProbeConfig) -> Result<()> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::EmptyBatch("probe fit"));
        }
        let m = cfg.batch_size.clamp(1, xs.len());
        let adam = AdamConfig::with_lr(T::lit(cfg.lr));
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut shuffle = rng::derived(cfg.seed, &[stream::PROBE, 1]);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(m) {
                let mut g = Grads::zeros_like(&self.params);
                for &i in chunk {
                    let trace = self.mlp.forward_traced(&self.params, &xs[i])?;
                    let mut d = softmax(trace.output());
                    d[ys[i] as usize] -= T::one();
                    self.mlp.backward(&self.params, &trace, &d, Some(&mut g))?;
                }
                self.params.set_grads(&g, T::one() / T::from_usize_lossy(chunk.len()))?;
                self.params.adam_step(&adam)?;
            }
        }
        Ok(())
    }

    pub fn accuracy(&self, xs: &[Vec<T>], ys: &[u32]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::EmptyBatch("probe accuracy"));
        }
        let mut hits = 0;
        for (x, &y) in xs.iter().zip(ys) {
            if self.predict(x)? == y {
                hits += 1;
            }
        }
        Ok(hits as f64 / xs.len() as f64)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// Layer-`layer` codes of every row: posterior means, or one draw each.
pub fn layer_codes<T: Scalar>(
    model: &Model<T>,
    ds: &LabeledDataset<T>,
    layer: usize,
    features: ProbeFeatures,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    if layer >= model.num_layers() {
        return Err(Error::Index(format!("layer {layer} of a {}-layer model", model.num_layers())));
    }
    let dims = model.latent_dims().to_vec();
    ds.rows()
        .enumerate()
        .map(|(i, x)| {
            let pp = model.inference.infer(x)?;
            Ok(match features {
                ProbeFeatures::Mean => pp.means[layer].clone(),
                ProbeFeatures::Sample => {
                    let eps = draw_noise(&dims, &mut rng::derived(seed, &[stream::PROBE, 2, i as u64]));
                    reparam_sample(&pp, &eps)?.layer(layer).to_vec()
                }
            })
        })
        .collect()
}

fn check_classes(ys: &[u32]) -> Result<()> {
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::Data(format!("probe training split holds only class {}", ys[0])));
    }
    Ok(())
}

/// Fits a probe on `(train_x, train_y)` and returns its accuracy on the
/// test pair.
pub fn probe_accuracy<T: Scalar>(
    train: (&[Vec<T>], &[u32]),
    test: (&[Vec<T>], &[u32]),
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    check_classes(train.1)?;
    let dim = train.0.first().map_or(0, Vec::len);
    let mut probe = ProbeClassifier::<T>::new(dim, n_classes, cfg)?;
    probe.fit(train.0, train.1, cfg)?;
    probe.accuracy(test.0, test.1)
}

/// Held-out accuracy of a probe reading layer `layer` (0 = bottom).
pub fn probe_layer<T: Scalar>(model: &Model<T>, ds: &LabeledDataset<T>, layer: usize, cfg: &ProbeConfig) -> Result<f64> {
    let (train, test) = ds.split(cfg.train_frac, cfg.seed)?;
    let tx = layer_codes(model, &train, layer, cfg.features, cfg.seed)?;
    let vx = layer_codes(model, &test, layer, cfg.features, cfg.seed ^ 1)?;
    probe_accuracy((&tx, &train.labels), (&vx, &test.labels), ds.n_classes as usize, cfg)
}

/// Held-out accuracy of a probe reading the observations themselves.
pub fn probe_raw<T: Scalar>(ds: &LabeledDataset<T>, cfg: &ProbeConfig) -> Result<f64> {
    let (train, test) = ds.split(cfg.train_frac, cfg.seed)?;
    let tx: Vec<Vec<T>> = train.rows().map(<[T]>::to_vec).collect();
    let vx: Vec<Vec<T>> = test.rows().map(<[T]>::to_vec).collect();
    probe_accuracy((&tx, &train.labels), (&vx, &test.labels), ds.n_classes as usize, cfg)
}
