//! Per-channel batch normalization over `[N, C, spatial...]` inputs.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values cached by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Element> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

/// Batch moments used to refresh running statistics in train mode.
#[derive(Debug, Clone)]
pub struct BatchMoments<T: Element> {
    pub mean: Vec<T>,
    /// Unbiased (divide by `M - 1`) variance.
    pub unbiased_var: Vec<T>,
}

fn layout(input: &[usize], channels: usize) -> Result<(usize, usize)> {
    if input.len() < 2 {
        return Err(Error::shape(
            "batchnorm3d",
            format!("input must be [N,C,...], got {input:?}"),
        ));
    }
    if input[1] != channels {
        return Err(Error::shape(
            "batchnorm3d",
            format!("channel axis: input has {} channels, parameters have {channels}", input[1]),
        ));
    }
    Ok((input[0], input[2..].iter().product()))
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
    epsilon: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>, Option<BatchMoments<T>>)> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("batchnorm3d", "epsilon must be positive"));
    }
    let channels = gamma.numel();
    for (name, t) in [("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.numel() != channels {
            return Err(Error::shape(
                "batchnorm3d",
                format!("{name} has {} entries, gamma has {channels}", t.numel()),
            ));
        }
    }
    let (batch, plane) = layout(input.shape(), channels)?;
    let count = batch * plane;
    if mode == Mode::Train && count < 2 {
        return Err(Error::BatchTooSmall { count });
    }
    let x = input.data();
    let eps = T::from_f64(epsilon);
    let mut out = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); channels];
    let mut moments = BatchMoments {
        mean: vec![T::zero(); channels],
        unbiased_var: vec![T::zero(); channels],
    };

    for c in 0..channels {
        let slices = || (0..batch).map(move |n| (n * channels + c) * plane);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for start in slices() {
                    for &v in &x[start..start + plane] {
                        if v.is_nan() {
                            return Err(Error::NanInput { channel: c });
                        }
                        sum = sum + v;
                    }
                }
                let m = T::from_f64(count as f64);
                let mean = sum / m;
                let mut sq = T::zero();
                for start in slices() {
                    for &v in &x[start..start + plane] {
                        let d = v - mean;
                        sq = sq + d * d;
                    }
                }
                moments.mean[c] = mean;
                moments.unbiased_var[c] = sq / T::from_f64((count - 1) as f64);
                (mean, sq / m)
            }
            Mode::Eval => {
                for start in slices() {
                    if x[start..start + plane].iter().any(|v| v.is_nan()) {
                        return Err(Error::NanInput { channel: c });
                    }
                }
                (running_mean.data()[c], running_var.data()[c])
            }
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[c] = istd;
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for start in slices() {
            for i in start..start + plane {
                let xh = (x[i] - mean) * istd;
                normalized[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }

    let out = Tensor::from_vec(input.shape().to_vec(), out)?;
    let cache = BatchNormCache {
        normalized,
        inv_std,
        mode,
    };
    Ok((out, cache, (mode == Mode::Train).then_some(moments)))
}

/// `running <- (1 - momentum) * running + momentum * batch`
pub fn update_running<T: Element>(running: &mut Tensor<T>, batch: &[T], momentum: f64) {
    let mom = T::from_f64(momentum);
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = (T::one() - mom) * *r + mom * b;
    }
}

pub struct BatchNormGrads<T: Element> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batchnorm_backward<T: Element>(
    shape: &[usize],
    gamma: &[T],
    cache: &BatchNormCache<T>,
    grad_out: &[T],
) -> BatchNormGrads<T> {
    let channels = gamma.len();
    let batch = shape[0];
    let plane: usize = shape[2..].iter().product();
    let count = T::from_f64((batch * plane) as f64);
    let xh = &cache.normalized;
    let mut dx = vec![T::zero(); grad_out.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];

    for c in 0..channels {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for n in 0..batch {
            let start = (n * channels + c) * plane;
            for i in start..start + plane {
                sum_dy = sum_dy + grad_out[i];
                sum_dy_xh = sum_dy_xh + grad_out[i] * xh[i];
            }
        }
        dgamma[c] = sum_dy_xh;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * cache.inv_std[c];
        for n in 0..batch {
            let start = (n * channels + c) * plane;
            for i in start..start + plane {
                dx[i] = match cache.mode {
                    Mode::Train => {
                        scale * (grad_out[i] - sum_dy / count - xh[i] * sum_dy_xh / count)
                    }
                    Mode::Eval => scale * grad_out[i],
                };
            }
        }
    }
    BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}
