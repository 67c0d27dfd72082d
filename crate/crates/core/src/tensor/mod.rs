//! Dense row-major tensors, the op set shared by both branches, a reverse-mode
//! tape and a finite-difference gradient checker.
//!
//! Tensors are generic over the element type so the same forward code runs
//! in 32-bit for training and inference and in 64-bit for gradient checks.

mod gradcheck;
pub mod ops;
mod tape;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use gradcheck::{GradCheck, GradReport, Probe};
pub use ops::ConvGeometry;
pub use tape::{Tape, Var};

/// Scalar type a [`Tensor`] can hold.
pub trait Element: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Shape plus a flat row-major buffer, with an optional gradient of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {numel} elements but buffer has {}", data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel], grad: None }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value], grad: None }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect(), grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim("set_grad", format!("{} vs {}", grad.len(), self.data.len())));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of_f64(x.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|&x| U::of_f64(x.as_f64())).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    /// Channels `[start, end)` along axis 0.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        if self.shape.is_empty() || start > end || end > self.shape[0] {
            return Err(Error::dim("slice_channels", format!("range {start}..{end} on shape {:?}", self.shape)));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor { shape, data: self.data[start * inner..end * inner].to_vec(), grad: None })
    }

    /// Entry at index `axis0` of the leading axis, as a tensor of the remaining axes.
    pub fn index_axis0(&self, i: usize) -> Result<Self> {
        let mut t = self.slice_channels(i, i + 1)?;
        t.shape.remove(0);
        Ok(t)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<T: Element>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::dim("stack", "no tensors"))?;
    let mut data = Vec::with_capacity(first.numel() * parts.len());
    for p in parts {
        if p.shape != first.shape {
            return Err(Error::dim("stack", format!("{:?} vs {:?}", p.shape, first.shape)));
        }
        data.extend_from_slice(&p.data);
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(&first.shape);
    Tensor::new(&shape, data)
}
