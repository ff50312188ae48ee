//! Per-channel batch normalization over NCHW activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            momentum: 0.99,
        }
    }
}

/// Moving statistics consumed in infer mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Element = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

impl<T: Element> RunningStats<T> {
    /// Mean 0, variance 1: the state a freshly built layer starts from.
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            initialized: true,
        }
    }

    pub fn uninitialized(channels: usize) -> Self {
        Self {
            initialized: false,
            ..Self::new(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Values the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T: Element> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

pub struct BatchNormOutput<T: Element> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
}

pub fn batchnorm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: Mode,
    state: &mut RunningStats<T>,
    config: &BatchNormConfig,
) -> Result<BatchNormOutput<T>> {
    let (n, c, h, w) = input.dims4("batchnorm")?;
    for (label, len) in [("gamma", gamma.len()), ("beta", beta.len()), ("running stats", state.channels())] {
        if len != c {
            return Err(Error::dim(
                "batchnorm",
                format!("{label} has {len} entries but the input has {c} channels"),
            ));
        }
    }
    let plane = h * w;
    let count = n * plane;
    let eps = T::from_f64_lossy(config.epsilon);
    let x = input.data();

    let (mean, var) = match mode {
        Mode::Train => {
            let inv_count = 1.0 / count as f64;
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut sum = 0.0f64;
                for ni in 0..n {
                    let off = (ni * c + ch) * plane;
                    sum += x[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let m = sum * inv_count;
                let mut sq = 0.0f64;
                for ni in 0..n {
                    let off = (ni * c + ch) * plane;
                    sq += x[off..off + plane]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = T::from_f64_lossy(m);
                var[ch] = T::from_f64_lossy(sq * inv_count);
            }
            let mom = T::from_f64_lossy(config.momentum);
            let keep = T::one() - mom;
            for ch in 0..c {
                state.mean[ch] = mom * state.mean[ch] + keep * mean[ch];
                state.var[ch] = mom * state.var[ch] + keep * var[ch];
            }
            state.initialized = true;
            (mean, var)
        }
        Mode::Infer => {
            if !state.initialized {
                return Err(Error::State(
                    "batchnorm in infer mode needs initialized running statistics".into(),
                ));
            }
            (state.mean.clone(), state.var.clone())
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ch in 0..c {
            let off = (ni * c + ch) * plane;
            let (m, s, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let xh = (x[i] - m) * s;
                normalized[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::new(input.shape().to_vec(), out)?,
        cache: BatchNormCache {
            normalized: Tensor::new(input.shape().to_vec(), normalized)?,
            inv_std,
            mode,
        },
    })
}

pub struct BatchNormGrads<T: Element> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Element>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    grad_out.same_shape(&cache.normalized, "batchnorm_backward")?;
    let (n, c, h, w) = grad_out.dims4("batchnorm_backward")?;
    let plane = h * w;
    let count = T::from_usize(n * plane).unwrap();
    let dy = grad_out.data();
    let xh = cache.normalized.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ch in 0..c {
            let off = (ni * c + ch) * plane;
            for i in off..off + plane {
                dbeta[ch] += dy[i];
                dgamma[ch] += dy[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for ni in 0..n {
        for ch in 0..c {
            let off = (ni * c + ch) * plane;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let mean_dy = dbeta[ch] / count;
                    let mean_dy_xh = dgamma[ch] / count;
                    for i in off..off + plane {
                        dx[i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
                    }
                }
                Mode::Infer => {
                    for i in off..off + plane {
                        dx[i] = scale * dy[i];
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}
