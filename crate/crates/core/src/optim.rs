//! Adam and global-norm gradient clipping.

use crate::autodiff::Parameterized;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for each parameter, in `parameters()` order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    names: Vec<String>,
    first: Vec<DenseTensor>,
    second: Vec<DenseTensor>,
}

impl AdamState {
    pub fn new<P: Parameterized + ?Sized>(config: AdamConfig, params: &P) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", config.learning_rate)));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) || config.eps <= 0.0 {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        let ps = params.parameters();
        Ok(AdamState {
            config,
            step: 0,
            names: ps.iter().map(|p| p.name().to_string()).collect(),
            first: ps.iter().map(|p| DenseTensor::zeros(p.value().shape().clone())).collect(),
            second: ps.iter().map(|p| DenseTensor::zeros(p.value().shape().clone())).collect(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &DenseTensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &DenseTensor {
        &self.second[i]
    }

    /// One update from the gradients currently stored on `params`. Nothing is
    /// modified when any gradient entry is non-finite.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let mut ps = params.parameters_mut();
        if ps.len() != self.names.len() || ps.iter().zip(&self.names).any(|(p, n)| p.name() != n) {
            return Err(Error::invalid("parameter set changed since the optimizer was created"));
        }
        for p in &ps {
            if let Some(i) = p.grad().data().iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in parameter {} at entry {i}", p.name())));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in ps.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let (values, grads) = p.value_and_grad_mut();
            for (((x, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: Parameterized + ?Sized>(params: &mut P, max_norm: f64) -> f64 {
    let norm = params
        .parameters()
        .iter()
        .flat_map(|p| p.grad().data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for p in params.parameters_mut() {
            p.grads_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
