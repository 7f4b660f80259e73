use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
}

/// Named parameter tensors together with their gradient slots and Adam state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            step: 0,
        }
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let n = value.len();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: vec![T::zero(); n],
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    #[inline]
    pub fn value(&self, idx: usize) -> &[T] {
        self.params[idx].value.data()
    }

    #[inline]
    pub fn value_mut(&mut self, idx: usize) -> &mut [T] {
        self.params[idx].value.data_mut()
    }

    pub fn grads(&self) -> Grads<T> {
        Grads {
            bufs: self.params.iter().map(|p| p.grad.clone()).collect(),
        }
    }

    /// Overwrites the gradient slots with `g * scale`.
    pub fn set_grads(&mut self, g: &Grads<T>, scale: T) -> Result<()> {
        self.check_layout(g)?;
        for (p, b) in self.params.iter_mut().zip(&g.bufs) {
            for (dst, &src) in p.grad.iter_mut().zip(b) {
                *dst = src * scale;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    fn check_layout(&self, g: &Grads<T>) -> Result<()> {
        if g.bufs.len() != self.params.len() {
            return Err(Error::shape("gradient layout", self.params.len(), g.bufs.len()));
        }
        for (p, b) in self.params.iter().zip(&g.bufs) {
            if p.value.len() != b.len() {
                return Err(Error::shape("gradient slot", p.value.len(), b.len()));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam descent step on the stored gradients, which
    /// are then zeroed.
    pub fn adam_step(&mut self, cfg: &AdamConfig<T>) -> Result<()> {
        for p in &self.params {
            if !crate::scalar::all_finite(&p.grad) {
                return Err(Error::non_finite(format!("gradient of {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let c1 = one - cfg.beta1.powi(t);
        let c2 = one - cfg.beta2.powi(t);
        for p in &mut self.params {
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = p.grad[i];
                let m = cfg.beta1 * p.first_moment[i] + (one - cfg.beta1) * g;
                let v = cfg.beta2 * p.second_moment[i] + (one - cfg.beta2) * g * g;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                let m_hat = m / c1;
                let v_hat = v / c2;
                value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                p.grad[i] = T::zero();
            }
            if !crate::scalar::all_finite(value) {
                return Err(Error::non_finite(format!("parameter {}", p.name)));
            }
        }
        Ok(())
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub bufs: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            bufs: store
                .params
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn sub_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x -= y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.bufs {
            a.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.bufs.iter().flatten().copied().collect()
    }

    pub fn norm(&self) -> T {
        self.bufs
            .iter()
            .flatten()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().all(|b| crate::scalar::all_finite(b))
    }

    /// Sums per-example gradients in slice order.
    pub fn sum_ordered(store: &ParamStore<T>, parts: &[Grads<T>]) -> Self {
        let mut acc = Self::zeros_like(store);
        for p in parts {
            acc.add_assign(p);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("w", Tensor::from_vec(vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(1.25);
        s.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(s.value(0), &[1.25]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02, 1e3] {
            let mut s = scalar_store(0.0);
            s.params_mut()[0].grad[0] = g;
            let cfg = AdamConfig::with_lr(0.01);
            s.adam_step(&cfg).unwrap();
            // m_hat = g, v_hat = g^2 after bias correction
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((s.value(0)[0] - expected).abs() < 1e-15);
            assert!((s.value(0)[0] + 0.01 * g.signum()).abs() < 1e-8);
            assert_eq!(s.params()[0].grad[0], 0.0);
        }
    }

    #[test]
    fn identical_sequences_give_identical_params() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        let cfg = AdamConfig::with_lr(0.05);
        for k in 0..50 {
            let g = ((k as f64) * 0.37).sin();
            a.params_mut()[0].grad[0] = g;
            b.params_mut()[0].grad[0] = g;
            a.adam_step(&cfg).unwrap();
            b.adam_step(&cfg).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = scalar_store(0.0);
        s.params_mut()[0].grad[0] = f64::NAN;
        assert!(s.adam_step(&AdamConfig::with_lr(0.1)).is_err());
    }
}
