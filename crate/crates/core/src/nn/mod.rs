//! Minimal CPU neural-network layers with hand-written backward passes.
//!
//! Tensors are NCHW. Layers cache what backward needs during a
//! [`Mode::Train`] forward and accumulate into their parameter gradients.
//! Everything is generic over [`Float`] so gradient checks can run in f64.

mod conv;
mod float;
pub mod gradcheck;
mod loss;
mod norm;
mod pool;

pub use conv::{Conv2d, ConvGeometry, ConvTranspose2d};
pub use float::Float;
pub use loss::{sigmoid, weighted_sigmoid_ce};
pub use norm::{BatchNorm2d, BN_EPSILON, BN_MOMENTUM};
pub use pool::MaxPool2d;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("tensor {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn item_len(&self) -> usize {
        self.shape[1] * self.plane_len()
    }

    pub fn item(&self, b: usize) -> &[T] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Concatenates along channels. All parts must share n, h, w.
pub fn concat_channels<T: Float>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or(Error::Empty("concat inputs"))?;
    let [n, _, h, w] = first.shape;
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::Shape(format!("concat of {:?} with {:?}", first.shape, p.shape)));
        }
    }
    let c: usize = parts.iter().map(Tensor::c).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Ok(Tensor { shape: [n, c, h, w], data })
}

/// Inverse of [`concat_channels`].
pub fn split_channels<T: Float>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if sizes.iter().sum::<usize>() != x.c() {
        return Err(Error::Shape(format!("cannot split {} channels as {sizes:?}", x.c())));
    }
    let [n, _, h, w] = x.shape;
    let hw = h * w;
    let mut parts: Vec<Tensor<T>> = sizes.iter().map(|&c| Tensor::zeros([n, c, h, w])).collect();
    for b in 0..n {
        let item = x.item(b);
        let mut off = 0;
        for (p, &c) in parts.iter_mut().zip(sizes) {
            p.data[b * c * hw..(b + 1) * c * hw].copy_from_slice(&item[off..off + c * hw]);
            off += c * hw;
        }
    }
    Ok(parts)
}

pub fn relu_in_place<T: Float>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` where the ReLU output was not positive (subgradient 0 at 0).
pub fn relu_backward_in_place<T: Float>(dy: &mut Tensor<T>, output: &Tensor<T>) {
    for (g, &y) in dy.data.iter_mut().zip(&output.data) {
        if !(y > T::zero()) {
            *g = T::zero();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// L2 decay applies to convolution kernels only.
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Float> Param<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, shape: Vec<usize>, fill: T) -> Self {
        let n = shape.iter().product();
        Param {
            name: name.into(),
            kind,
            shape,
            value: vec![fill; n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// He-normal initialization, `std = sqrt(2 / fan_in)`.
    pub fn kaiming_normal(&mut self, fan_in: usize, rng: &mut impl Rng) {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.value {
            *v = T::from_f64(dist.sample(rng));
        }
    }
}

/// Anything owning parameters, visited in a fixed order.
pub trait Module<T: Float> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }
}
