//! Reverse-mode differentiation over a per-step computation record.
//!
//! Every operation appends a node holding its output value and whatever
//! the backward rule needs. Nodes only reference earlier nodes, so the
//! record is topologically ordered by construction and backward is a
//! single reverse sweep.

use crate::error::{Error, Result};
use crate::kernels::conv::{conv3d_backward, conv3d_forward, Conv3dSpec, ConvGeometry};
use crate::kernels::dense::{add_forward, linear_backward, linear_forward, relu_backward, relu_forward};
use crate::kernels::loss::{cross_entropy_backward, cross_entropy_forward, mae_backward, mae_forward};
use crate::kernels::norm::{batchnorm_backward, batchnorm_forward, BatchMoments, BatchNormCache, Mode};
use crate::kernels::pool::{
    global_avgpool_backward, global_avgpool_forward, maxpool3d_backward, maxpool3d_forward, MaxPoolSpec,
};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Element> {
    Leaf,
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
        columns: Vec<T>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache<T>,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Add(Var, Var),
    Sum(Var),
    Mae {
        pred: Var,
        target: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The computation record. One forward pass, at most one backward pass.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an input or parameter. Its `requires_grad` flag decides
    /// whether a gradient is produced for it.
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        let rg = value.requires_grad();
        value.clear_grad();
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.set_requires_grad(false);
        self.leaf(value)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.set_requires_grad(true);
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss with respect to `v` after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: Conv3dSpec) -> Result<Var> {
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let (out, columns) = conv3d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
            rg,
        )?;
        let geometry = ConvGeometry::resolve(self.value(input).shape(), self.value(weight).shape(), spec)?;
        let op = Op::Conv3d {
            input,
            weight,
            bias,
            geometry,
            columns: columns.unwrap_or_default(),
        };
        Ok(self.push(out, op, rg))
    }

    /// Batch normalization. In train mode the batch moments are returned so
    /// the caller can refresh its running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: Mode,
        epsilon: f64,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let rg = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let (out, cache, moments) = batchnorm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            mode,
            epsilon,
        )?;
        let cache = if rg {
            cache
        } else {
            BatchNormCache {
                normalized: Vec::new(),
                inv_std: Vec::new(),
                mode,
            }
        };
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            cache,
        };
        Ok((self.push(out, op, rg), moments))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = relu_forward(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn maxpool3d(&mut self, input: Var, spec: MaxPoolSpec) -> Result<Var> {
        let (out, argmax) = maxpool3d_forward(self.value(input), spec)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn global_avgpool(&mut self, input: Var) -> Result<Var> {
        let out = global_avgpool_forward(self.value(input))?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = linear_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = add_forward(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.needs(input);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    pub fn mae_loss(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let loss = mae_forward(self.value(pred), target)?;
        let rg = self.needs(pred);
        let op = Op::Mae {
            pred,
            target: target.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = cross_entropy_forward(self.value(logits), labels)?;
        let rg = self.needs(logits);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Populate gradients of every `requires_grad` node with respect to the
    /// scalar `loss`. Nodes off every path to the loss get zero gradients.
    /// The record is consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::RecordConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss { shape });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(idx, &op, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if !node.requires_grad {
                continue;
            }
            let g = grad.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
            node.value.set_grad(g)?;
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, op: &Op<T>, up: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut send = |target: Var, g: Vec<T>| {
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut grads[target.0] {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a = *a + v;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                weight,
                bias,
                geometry,
                columns,
            } => {
                let need_input = self.nodes[input.0].requires_grad;
                let g = conv3d_backward(geometry, self.value(*weight).data(), columns, up, need_input);
                if let Some(dx) = g.input {
                    send(*input, dx);
                }
                send(*weight, g.weight);
                if let Some(b) = bias {
                    send(*b, g.bias);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
            } => {
                let g = batchnorm_backward(self.value(*input).shape(), self.value(*gamma).data(), cache, up);
                send(*input, g.input);
                send(*gamma, g.gamma);
                send(*beta, g.beta);
            }
            Op::Relu(input) => send(*input, relu_backward(self.nodes[idx].value.data(), up)),
            Op::MaxPool { input, argmax } => {
                send(*input, maxpool3d_backward(self.value(*input).numel(), argmax, up));
            }
            Op::GlobalAvgPool(input) => {
                send(*input, global_avgpool_backward(self.value(*input).shape(), up));
            }
            Op::Linear { input, weight, bias } => {
                let g = linear_backward(self.value(*input), self.value(*weight), up);
                send(*input, g.input);
                send(*weight, g.weight);
                if let Some(b) = bias {
                    send(*b, g.bias);
                }
            }
            Op::Add(a, b) => {
                send(*a, up.to_vec());
                send(*b, up.to_vec());
            }
            Op::Sum(input) => {
                let n = self.value(*input).numel();
                send(*input, vec![up[0]; n]);
            }
            Op::Mae { pred, target } => {
                send(*pred, mae_backward(self.value(*pred).data(), target, up[0]));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                send(*logits, cross_entropy_backward(probs, labels, up[0]));
            }
        }
    }
}
