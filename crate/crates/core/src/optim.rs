//! Adam, the MSE training loss and the MAE metric.

use serde::{Deserialize, Serialize};

use crate::autodiff::store::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} = {b} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// First/second moment accumulators for every parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    step: u64,
    first: ParamStore<T>,
    second: ParamStore<T>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut first = ParamStore::new();
        let mut second = ParamStore::new();
        for (name, p) in params.iter() {
            first.insert(name, Tensor::zeros(p.shape()))?;
            second.insert(name, Tensor::zeros(p.shape()))?;
        }
        Ok(Self {
            config,
            step: 0,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.second.get(name)
    }

    /// One bias-corrected Adam update over every parameter.
    ///
    /// `grads` must name exactly the parameters in `params`, with matching shapes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(String, Tensor<T>)]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients supplied for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name:?}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient for {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        if let Some(missing) = params.names().find(|n| !grads.iter().any(|(g, _)| g == n)) {
            return Err(Error::Contract(format!("no gradient supplied for parameter {missing:?}")));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one_b1 = T::from_f64_lossy(1.0 - c.beta1);
        let one_b2 = T::from_f64_lossy(1.0 - c.beta2);
        let corr1 = T::from_f64_lossy(1.0 / (1.0 - c.beta1.powi(t)));
        let corr2 = T::from_f64_lossy(1.0 / (1.0 - c.beta2.powi(t)));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.epsilon);

        for (name, g) in grads {
            let m = self.first.get_mut(name).expect("moments mirror params").data_mut();
            let v = self.second.get_mut(name).expect("moments mirror params").data_mut();
            let p = params.get_mut(name).expect("checked above").data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] * corr1;
                let v_hat = v[i] * corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Loss value with its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossOutput<T: Element> {
    pub value: f64,
    pub grad: Tensor<T>,
}

fn check_pair<T: Element>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Contract(format!(
            "{op}: prediction shape {:?} differs from target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract(format!("{op}: empty batch")));
    }
    Ok(())
}

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    check_pair("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0f64;
    let scale = T::from_f64_lossy(2.0 / n);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok(LossOutput {
        value: sum / n,
        grad: Tensor::new(pred.shape().to_vec(), grad)?,
    })
}

/// Mean absolute error, in the target's units (years).
pub fn mae_metric<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_pair("mae_metric", pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}
