use super::ops::{self, ConvGeometry};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry },
    Fc { input: Var, weight: Var, bias: Option<Var> },
    ChannelFc { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Hadamard(Var, Var),
    Concat(Vec<Var>),
    AdaptivePool { input: Var, out_h: usize, out_w: usize },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of a forward pass.
///
/// Nodes are appended in evaluation order, so every op's inputs precede it;
/// [`Tape::backward`] walks the nodes in exact reverse order. A tape is owned
/// by a single worker.
#[derive(Debug)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf; receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (inputs, frozen weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        value.grad = None;
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ops::conv2d_geometry(self.value(input), self.value(kernel), stride, padding)?;
        let out = ops::conv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), stride, padding)?;
        let rg = self.needs(&[input, kernel]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::Conv { input, kernel, bias, geom }, rg))
    }

    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let geom = ops::conv3d_geometry(self.value(input), self.value(kernel), stride, padding)?;
        let out = ops::conv3d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), stride, padding)?;
        let rg = self.needs(&[input, kernel]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::Conv { input, kernel, bias, geom }, rg))
    }

    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = ops::fully_connected(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let rg = self.needs(&[input, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::Fc { input, weight, bias }, rg))
    }

    pub fn channel_fc(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = ops::channel_fc(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let rg = self.needs(&[input, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::ChannelFc { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::hadamard(self.value(a), self.value(b))?.ensure_finite("hadamard")?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Hadamard(a, b), rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_channels(&refs)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn adaptive_avg_pool2d(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::adaptive_avg_pool2d(self.value(input), out_h, out_w)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::AdaptivePool { input, out_h, out_w }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let out = ops::sum_all(self.value(x)).ensure_finite("sum_all")?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let out = ops::mean_all(self.value(x)).ensure_finite("mean_all")?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Mean(x), rg))
    }

    /// Sign pattern of every relu pre-activation on the tape, in tape order.
    ///
    /// Two evaluations with the same pattern lie in the same linear piece of
    /// every relu, which is what the gradient checker uses to detect kinks.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                pattern.extend(self.nodes[x.0].value.data().iter().map(|&v| v > T::zero()));
            }
        }
        pattern
    }

    /// Backpropagates from a scalar loss; leaf gradients become available
    /// through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_from(loss, vec![T::one()])
    }

    /// Backpropagates an upstream gradient `seed` given for `output`.
    pub fn backward_from(&mut self, output: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(output).numel() {
            return Err(Error::Contract(format!(
                "seed has {} elements, output has {}",
                seed.len(),
                self.value(output).numel()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            if matches!(op, Op::Leaf) {
                self.nodes[idx].value.grad = Some(match self.nodes[idx].value.grad.take() {
                    Some(mut prev) => {
                        prev.iter_mut().zip(&g).for_each(|(p, v)| *p += *v);
                        prev
                    }
                    None => g,
                });
                continue;
            }
            for (var, contrib) in self.op_backward(idx, &op, &g) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += *c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn op_backward(&self, idx: usize, op: &Op, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let out = &self.nodes[idx].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv { input, kernel, bias, geom } => {
                let cg = ops::conv_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g,
                    rg(*input),
                    rg(*kernel),
                );
                if let Some(gi) = cg.input {
                    res.push((*input, gi));
                }
                if let Some(gk) = cg.kernel {
                    res.push((*kernel, gk));
                }
                if let Some(b) = bias {
                    res.push((*b, cg.bias));
                }
            }
            Op::Fc { input, weight, bias } => {
                let ws = self.value(*weight).shape();
                let (c_out, c_in) = (ws[0], ws[1]);
                let rows = self.value(*input).numel() / c_in;
                let (gx, gw, gb) =
                    ops::fc_backward_rows(self.value(*input).data(), self.value(*weight).data(), g, rows, c_in, c_out);
                res.push((*input, gx));
                res.push((*weight, gw));
                if let Some(b) = bias {
                    res.push((*b, gb));
                }
            }
            Op::ChannelFc { input, weight, bias } => {
                let ws = self.value(*weight).shape();
                let (c_out, c_in) = (ws[0], ws[1]);
                let plane = self.value(*input).numel() / c_in;
                let (gx, gw, gb) = ops::channel_fc_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    plane,
                    c_in,
                    c_out,
                );
                res.push((*input, gx));
                res.push((*weight, gw));
                if let Some(b) = bias {
                    res.push((*b, gb));
                }
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                res.push((
                    *x,
                    g.iter().zip(xs).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect(),
                ));
            }
            Op::Sigmoid(x) => {
                let ys = out.data();
                res.push((*x, g.iter().zip(ys).map(|(&gv, &y)| gv * y * (T::one() - y)).collect()));
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                res.push((*a, g.iter().zip(bv).map(|(&gv, &x)| gv * x).collect()));
                res.push((*b, g.iter().zip(av).map(|(&gv, &x)| gv * x).collect()));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    res.push((*p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::AdaptivePool { input, out_h, out_w } => {
                let gi = ops::adaptive_avg_pool2d_backward(self.value(*input).shape(), *out_h, *out_w, g);
                res.push((*input, gi));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                res.push((*x, vec![g[0] / T::of_f64(n as f64); n]));
            }
        }
        res
    }
}
