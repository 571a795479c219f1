use crate::error::{Error, Result};
use crate::model::Params;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

/// Bias-corrected Adam. A parameter whose gradient is `None` in a step is
/// left untouched, moments included, as if it were absent from that step.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    /// Number of `step` calls.
    pub t: u64,
    steps: Vec<u64>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        AdamState {
            config,
            t: 0,
            steps: vec![0; params.len()],
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<T> {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<T> {
        &self.second[i]
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        self.check_counts(params.len(), grads.len())?;
        self.t += 1;
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if let Some(grad) = grad {
                self.update(i, param, grad)?;
            }
        }
        Ok(())
    }

    /// `step` over every leaf of a parameter container, in canonical order.
    pub fn step_params(
        &mut self,
        params: &mut Params<Tensor<T>>,
        grads: &[Option<Tensor<T>>],
    ) -> Result<()> {
        let count = params.leaves().len();
        self.check_counts(count, grads.len())?;
        self.t += 1;
        let mut i = 0;
        let mut result = Ok(());
        params.visit_mut(&mut |_, param| {
            if let (Some(grad), Ok(())) = (&grads[i], &result) {
                result = self.update(i, param, grad);
            }
            i += 1;
        });
        result
    }

    fn check_counts(&self, params: usize, grads: usize) -> Result<()> {
        if params != self.first.len() || grads != params {
            return Err(Error::InvalidArgument(format!(
                "adam: {} moments, {params} params, {grads} grads",
                self.first.len(),
            )));
        }
        Ok(())
    }

    fn update(&mut self, i: usize, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if grad.shape() != param.shape() {
            return Err(Error::shape("adam", param.shape(), grad.shape()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.steps[i] += 1;
        let t = self.steps[i] as i32;
        let c1 = T::of(1.0 / (1.0 - beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - beta2.powi(t)));
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one, lr, eps) = (T::one(), T::of(lr), T::of(eps));
        let m = self.first[i].data_mut();
        let v = self.second[i].data_mut();
        for (((w, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
