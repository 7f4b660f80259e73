use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{Grads, ParamStore};
use super::tensor::Tensor;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            // x == 0 takes the positive branch
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    pub fn derivative<T: Scalar>(self, pre: T, out: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if pre >= T::zero() {
                    T::one()
                } else {
                    T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => T::one() - out * out,
            Activation::Identity => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky-relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "leaky-relu" | "leaky_relu" => Some(Activation::LeakyRelu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("MLP dims must be positive: {self:?}")));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Weights uniform on ±1/sqrt(fan_in), biases zero.
    ScaledUniform,
    Zeros,
}

/// Multi-layer perceptron whose parameters live in a shared [`ParamStore`].
///
/// Layer `l` owns the weight at `first + 2l` (shape `[out, in]`) and the bias
/// at `first + 2l + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    first: usize,
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
}

impl<T: Scalar> MlpTrace<T> {
    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("trace has at least one layer")
    }
}

impl Mlp {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        spec: MlpSpec,
        store: &mut ParamStore<T>,
        prefix: &str,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let first = store.len();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let mut w = Tensor::zeros(vec![fan_out, fan_in]);
            if init == Init::ScaledUniform {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for v in w.data_mut() {
                    *v = T::lit(dist.sample(rng));
                }
            }
            store.push(format!("{prefix}.{l}.weight"), w);
            store.push(format!("{prefix}.{l}.bias"), Tensor::zeros(vec![fan_out]));
        }
        Ok(Self { spec, first })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.spec.hidden_dims.len() + 1
    }

    pub fn weight_index(&self, layer: usize) -> usize {
        self.first + 2 * layer
    }

    pub fn bias_index(&self, layer: usize) -> usize {
        self.first + 2 * layer + 1
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.spec.final_activation
        } else {
            self.spec.activation
        }
    }

    fn affine<T: Scalar>(&self, store: &ParamStore<T>, layer: usize, x: &[T]) -> Vec<T> {
        let w = store.value(self.weight_index(layer));
        let b = store.value(self.bias_index(layer));
        let fan_in = x.len();
        b.iter()
            .enumerate()
            .map(|(o, &bias)| bias + crate::scalar::dot(&w[o * fan_in..(o + 1) * fan_in], x))
            .collect()
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in 0..self.num_layers() {
            let act = self.activation_of(l);
            x = self.affine(store, l, &x).into_iter().map(|v| act.apply(v)).collect();
        }
        if !crate::scalar::all_finite(&x) {
            return Err(Error::non_finite("MLP output"));
        }
        Ok(x)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        input: &[T],
    ) -> Result<MlpTrace<T>> {
        self.check_input(input)?;
        let n = self.num_layers();
        let mut trace = MlpTrace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut x = input.to_vec();
        for l in 0..n {
            let act = self.activation_of(l);
            let pre = self.affine(store, l, &x);
            let out: Vec<T> = pre.iter().map(|&v| act.apply(v)).collect();
            trace.inputs.push(x);
            trace.pre.push(pre);
            x = out.clone();
            trace.outputs.push(out);
        }
        if !crate::scalar::all_finite(trace.output()) {
            return Err(Error::non_finite("MLP output"));
        }
        Ok(trace)
    }

    /// Row-wise forward over a `[batch, input_dim]` (or `[input_dim]`) tensor.
    pub fn forward_tensor<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        input: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if input.last_dim() != self.spec.input_dim {
            return Err(Error::shape("MLP input", self.spec.input_dim, input.last_dim()));
        }
        let mut out = Vec::new();
        for row in input.rows() {
            out.extend(self.forward(store, row)?);
        }
        let mut shape = input.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = self.spec.output_dim;
        Tensor::new(shape, out)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the output) through the
    /// recorded pass. Parameter gradients are added into `grads` when given;
    /// the gradient w.r.t. the input is returned.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        trace: &MlpTrace<T>,
        upstream: &[T],
        mut grads: Option<&mut Grads<T>>,
    ) -> Result<Vec<T>> {
        if upstream.len() != self.spec.output_dim {
            return Err(Error::shape("MLP upstream gradient", self.spec.output_dim, upstream.len()));
        }
        let mut delta_out = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation_of(l);
            let pre = &trace.pre[l];
            let out = &trace.outputs[l];
            let input = &trace.inputs[l];
            let delta: Vec<T> = delta_out
                .iter()
                .zip(pre.iter().zip(out))
                .map(|(&d, (&p, &o))| d * act.derivative(p, o))
                .collect();
            let fan_in = input.len();
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.bufs[self.weight_index(l)];
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (gwi, &xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                        *gwi += d * xi;
                    }
                }
                let gb = &mut g.bufs[self.bias_index(l)];
                for (gbo, &d) in gb.iter_mut().zip(&delta) {
                    *gbo += d;
                }
            }
            let w = store.value(self.weight_index(l));
            let mut prev = vec![T::zero(); fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wi;
                }
            }
            delta_out = prev;
        }
        if !crate::scalar::all_finite(&delta_out) {
            return Err(Error::non_finite("MLP input gradient"));
        }
        if let Some(g) = grads.as_deref() {
            if !g.is_finite() {
                return Err(Error::non_finite("MLP parameter gradient"));
            }
        }
        Ok(delta_out)
    }

    fn check_input<T>(&self, input: &[T]) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(Error::shape("MLP input", self.spec.input_dim, input.len()));
        }
        Ok(())
    }
}
