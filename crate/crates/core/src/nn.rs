//! Parameter containers shared by both branches.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor, Var};

/// Named, ordered access to a model's trainable tensors.
///
/// The order of [`Parameters::named`] is the canonical order used for
/// flattening, checkpoints and the optimizer state.
pub trait Parameters<T: Element> {
    fn named(&self) -> Vec<(String, &Tensor<T>)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.named().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64())).collect()
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Contract(format!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for (_, t) in self.named_mut() {
            let n = t.numel();
            for (d, s) in t.data_mut().iter_mut().zip(&flat[offset..offset + n]) {
                *d = T::of_f64(*s);
            }
            offset += n;
        }
        Ok(())
    }
}

/// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]` (He initialization for relu).
pub fn kaiming_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of_f64(rng.random_range(-bound..=bound)))
}

/// Affine layer; `weight` is `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Linear { weight: Tensor::zeros(&[c_out, c_in]), bias: Tensor::zeros(&[c_out]) }
    }

    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        Linear { weight: kaiming_uniform(&[c_out, c_in], c_in, rng), bias: Tensor::zeros(&[c_out]) }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> LinearVars {
        LinearVars { weight: bind(tape, &self.weight, trainable), bias: bind(tape, &self.bias, trainable) }
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

/// Convolution kernel plus per-output-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T: Element = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Conv<T> {
    pub fn zeros(kernel_shape: &[usize]) -> Self {
        Conv { kernel: Tensor::zeros(kernel_shape), bias: Tensor::zeros(&[kernel_shape[0]]) }
    }

    pub fn init(kernel_shape: &[usize], rng: &mut Rng) -> Self {
        let fan_in = kernel_shape[1..].iter().product();
        Conv { kernel: kaiming_uniform(kernel_shape, fan_in, rng), bias: Tensor::zeros(&[kernel_shape[0]]) }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ConvVars {
        ConvVars { kernel: bind(tape, &self.kernel, trainable), bias: bind(tape, &self.bias, trainable) }
    }

    pub(crate) fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.kernel"), &self.kernel));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.kernel"), &mut self.kernel));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub kernel: Var,
    pub bias: Var,
}

fn bind<T: Element>(tape: &mut Tape<T>, t: &Tensor<T>, trainable: bool) -> Var {
    if trainable {
        tape.leaf(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

/// Collects leaf gradients in the order of `vars`; leaves that received no
/// gradient contribute zeros.
pub fn collect_grads<T: Element>(tape: &mut Tape<T>, vars: &[Var]) -> Vec<Vec<T>> {
    vars.iter()
        .map(|&v| {
            let n = tape.value(v).numel();
            tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); n])
        })
        .collect()
}

/// Copies parameters between element types through their canonical order.
pub fn cast_into<T: Element, U: Element>(src: &impl Parameters<T>, dst: &mut impl Parameters<U>) -> Result<()> {
    let names_src: Vec<String> = src.named().into_iter().map(|(n, _)| n).collect();
    let names_dst: Vec<String> = dst.named().into_iter().map(|(n, _)| n).collect();
    if names_src != names_dst {
        return Err(Error::Contract("parameter layouts differ".into()));
    }
    dst.load_flat(&src.flatten())
}
