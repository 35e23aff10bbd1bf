use super::{dot, gemm_nn, gemm_tn};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn relu_forward<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::from_vec(input.shape().to_vec(), data).expect("shape preserved")
}

/// Gradient passes where the forward output was positive.
pub fn relu_backward<T: Element>(output: &[T], grad_out: &[T]) -> Vec<T> {
    output
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn add_forward<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

/// `x[N,in] · W[out,in]ᵀ + b[out]`
pub fn linear_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 {
        return Err(Error::shape(
            "linear",
            format!("expected [N,in] input and [out,in] weight, got {xs:?} and {ws:?}"),
        ));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(
            "linear",
            format!("feature axis: input has {} features, weight expects {}", xs[1], ws[1]),
        ));
    }
    let (n, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
    if let Some(b) = bias {
        if b.shape() != [fan_out] {
            return Err(Error::shape("linear", format!("bias must be [{fan_out}], got {:?}", b.shape())));
        }
    }
    let mut out = Vec::with_capacity(n * fan_out);
    for row in input.data().chunks(fan_in) {
        for o in 0..fan_out {
            let shift = bias.map_or(T::zero(), |b| b.data()[o]);
            out.push(dot(row, &weight.data()[o * fan_in..(o + 1) * fan_in]) + shift);
        }
    }
    Tensor::from_vec(vec![n, fan_out], out)
}

pub struct LinearGrads<T: Element> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
) -> LinearGrads<T> {
    let (n, fan_in) = (input.shape()[0], input.shape()[1]);
    let fan_out = weight.shape()[0];
    let mut dx = vec![T::zero(); n * fan_in];
    gemm_nn(n, fan_out, fan_in, grad_out, weight.data(), &mut dx);
    let mut dw = vec![T::zero(); fan_out * fan_in];
    gemm_tn(n, fan_out, fan_in, grad_out, input.data(), &mut dw);
    let mut db = vec![T::zero(); fan_out];
    for row in grad_out.chunks(fan_out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
