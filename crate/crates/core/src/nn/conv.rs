use rand::Rng;
use rayon::prelude::*;

use super::{Float, Mode, Module, Param, ParamKind, Tensor};
use crate::error::{Error, Result};

/// Square kernel, stride and symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry { kernel, stride, pad }
    }

    /// Output side for an input side of `n`.
    pub fn out_size(&self, n: usize) -> Result<usize> {
        if self.stride == 0 || n + 2 * self.pad < self.kernel {
            return Err(Error::Shape(format!("input side {n} too small for {self:?}")));
        }
        Ok((n + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    /// Output side of the transposed operation.
    pub fn transposed_out_size(&self, n: usize) -> Result<usize> {
        if n == 0 || (n - 1) * self.stride + self.kernel < 2 * self.pad + 1 {
            return Err(Error::Shape(format!("input side {n} too small for transposed {self:?}")));
        }
        Ok((n - 1) * self.stride + self.kernel - 2 * self.pad)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output indices `o` in `0..out` with `o·stride + tap − pad` inside `0..n`.
#[inline]
fn valid_range(tap: usize, g: ConvGeometry, n: usize, out: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(tap).div_ceil(g.stride);
    if n + g.pad <= tap {
        return (0, 0);
    }
    let hi = ((n - 1 + g.pad - tap) / g.stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Unrolls `x` (c×h×w) into `col` ((c·k·k) × (ho·wo)).
#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, col: &mut [T]) {
    let k = g.kernel;
    let p = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..k {
            let (ylo, yhi) = valid_range(i, g, h, ho);
            for j in 0..k {
                let row = &mut col[((ch * k + i) * k + j) * p..][..p];
                let (xlo, xhi) = valid_range(j, g, w, wo);
                row[..ylo * wo].fill(T::zero());
                row[yhi * wo..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.stride + i - g.pad;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let out = &mut row[oy * wo..(oy + 1) * wo];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if xlo < xhi {
                        let ix0 = xlo * g.stride + j - g.pad;
                        if g.stride == 1 {
                            out[xlo..xhi].copy_from_slice(&src[ix0..ix0 + xhi - xlo]);
                        } else {
                            for (o, ix) in out[xlo..xhi].iter_mut().zip((ix0..).step_by(g.stride)) {
                                *o = src[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Like [`im2col`] but transposed: `rows` is (ho·wo) × (c·k·k).
#[allow(clippy::too_many_arguments)]
fn im2row<T: Float>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, rows: &mut [T]) {
    let k = g.kernel;
    let kk = c * k * k;
    for oy in 0..ho {
        for ox in 0..wo {
            let dst = &mut rows[(oy * wo + ox) * kk..][..kk];
            // Kernel columns j with ox·s + j − pad inside 0..w.
            let x0 = ox * g.stride;
            let jlo = g.pad.saturating_sub(x0).min(k);
            let jhi = (w + g.pad).saturating_sub(x0).min(k).max(jlo);
            for ch in 0..c {
                for i in 0..k {
                    let seg = &mut dst[(ch * k + i) * k..][..k];
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    seg[..jlo].fill(T::zero());
                    seg[jhi..].fill(T::zero());
                    if jlo < jhi {
                        let src = (ch * h + iy as usize) * w + x0 + jlo - g.pad;
                        seg[jlo..jhi].copy_from_slice(&x[src..src + jhi - jlo]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `col` into `x`, which is zeroed first.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(col: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.kernel;
    let p = ho * wo;
    x.fill(T::zero());
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for i in 0..k {
            let (ylo, yhi) = valid_range(i, g, h, ho);
            for j in 0..k {
                let row = &col[((ch * k + i) * k + j) * p..][..p];
                let (xlo, xhi) = valid_range(j, g, w, wo);
                if xlo >= xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = oy * g.stride + i - g.pad;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    let src = &row[oy * wo + xlo..oy * wo + xhi];
                    let ix0 = xlo * g.stride + j - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (ix, &v) in (ix0..).step_by(g.stride).zip(src) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major transpose of an `r × c` matrix.
fn transpose<T: Float>(a: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn sum_in_order<T: Float>(parts: Vec<Vec<T>>, into: &mut [T]) {
    for part in parts {
        for (a, b) in into.iter_mut().zip(part) {
            *a += b;
        }
    }
}

/// 2D convolution, weights `(out, in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    input: Option<Tensor<T>>,
}

impl<T: Float> Conv2d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, geometry: ConvGeometry, bias: bool) -> Self {
        let k = geometry.kernel;
        Conv2d {
            weight: Param::new(
                format!("{name}.weight"),
                ParamKind::Weight,
                vec![out_channels, in_channels, k, k],
                T::zero(),
            ),
            bias: bias.then(|| Param::new(format!("{name}.bias"), ParamKind::Bias, vec![out_channels], T::zero())),
            in_channels,
            out_channels,
            geometry,
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.geometry.kernel * self.geometry.kernel
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.fan_in();
        self.weight.kaiming_normal(fan_in, rng);
        if let Some(b) = &mut self.bias {
            b.value.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn out_shape(&self, shape: [usize; 4]) -> Result<[usize; 4]> {
        if shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} channels, got {:?}",
                self.weight.name, self.in_channels, shape
            )));
        }
        Ok([
            shape[0],
            self.out_channels,
            self.geometry.out_size(shape[2])?,
            self.geometry.out_size(shape[3])?,
        ])
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out_shape = self.out_shape(x.shape)?;
        let [_, c, h, w] = x.shape;
        let [_, o, ho, wo] = out_shape;
        let (p, kk) = (ho * wo, c * self.geometry.kernel * self.geometry.kernel);
        let g = self.geometry;
        let weight = &self.weight.value;
        let bias = self.bias.as_ref().map(|b| &b.value);
        let mut y = Tensor::zeros(out_shape);
        y.data.par_chunks_mut(o * p).enumerate().for_each(|(b, yb)| {
            let xb = x.item(b);
            let col_buf;
            let col: &[T] = if g.is_pointwise() {
                xb
            } else {
                let mut buf = vec![T::zero(); kk * p];
                im2col(xb, c, h, w, g, ho, wo, &mut buf);
                col_buf = buf;
                &col_buf
            };
            T::gemm(o, kk, p, T::one(), weight, false, col, false, T::zero(), yb);
            if let Some(bias) = bias {
                for (plane, &bv) in yb.chunks_mut(p).zip(bias) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_inner(dy, true).map(|dx| dx.expect("requested"))
    }

    /// Like [`Conv2d::backward`] but skips the input gradient.
    pub fn backward_params(&mut self, dy: &Tensor<T>) -> Result<()> {
        self.backward_inner(dy, false).map(|_| ())
    }

    fn backward_inner(&mut self, dy: &Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::Shape(format!("{}: backward without a training forward", self.weight.name)))?;
        let out_shape = self.out_shape(x.shape)?;
        if dy.shape != out_shape {
            return Err(Error::Shape(format!("{}: gradient {:?} vs output {out_shape:?}", self.weight.name, dy.shape)));
        }
        let [_, c, h, w] = x.shape;
        let [_, o, ho, wo] = out_shape;
        let g = self.geometry;
        let (p, kk) = (ho * wo, c * g.kernel * g.kernel);
        // Every GEMM below takes untransposed operands.
        let weight_t = need_dx.then(|| transpose(&self.weight.value, o, kk));
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape));
        let dx_chunks: Vec<Option<&mut [T]>> = match &mut dx {
            Some(t) => t.data.chunks_mut(c * h * w).map(Some).collect(),
            None => (0..x.n()).map(|_| None).collect(),
        };
        let partials: Vec<Vec<T>> = dx_chunks
            .into_par_iter()
            .enumerate()
            .map(|(b, dxb)| {
                let xb = x.item(b);
                let dyb = dy.item(b);
                let mut dw = vec![T::zero(); o * kk];
                let mut buf = if g.is_pointwise() {
                    transpose(xb, c, p)
                } else {
                    let mut rows = vec![T::zero(); kk * p];
                    im2row(xb, c, h, w, g, ho, wo, &mut rows);
                    rows
                };
                T::gemm(o, p, kk, T::one(), dyb, false, &buf, false, T::zero(), &mut dw);
                if let (Some(dxb), Some(wt)) = (dxb, &weight_t) {
                    if g.is_pointwise() {
                        T::gemm(kk, o, p, T::one(), wt, false, dyb, false, T::zero(), dxb);
                    } else {
                        T::gemm(kk, o, p, T::one(), wt, false, dyb, false, T::zero(), &mut buf);
                        col2im(&buf, c, h, w, g, ho, wo, dxb);
                    }
                }
                dw
            })
            .collect();
        sum_in_order(partials, &mut self.weight.grad);
        if let Some(bias) = &mut self.bias {
            for b in 0..dy.n() {
                for (gb, plane) in bias.grad.iter_mut().zip(dy.item(b).chunks(p)) {
                    *gb += plane.iter().copied().sum::<T>();
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Transposed convolution (learned upsampling), weights `(in, out, k, k)`.
/// With the same weights it is the adjoint of [`Conv2d`] mapping out→in.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    input: Option<Tensor<T>>,
}

impl<T: Float> ConvTranspose2d<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, geometry: ConvGeometry, bias: bool) -> Self {
        let k = geometry.kernel;
        ConvTranspose2d {
            weight: Param::new(
                format!("{name}.weight"),
                ParamKind::Weight,
                vec![in_channels, out_channels, k, k],
                T::zero(),
            ),
            bias: bias.then(|| Param::new(format!("{name}.bias"), ParamKind::Bias, vec![out_channels], T::zero())),
            in_channels,
            out_channels,
            geometry,
            input: None,
        }
    }

    /// Inputs contributing to one output pixel: `in · (k / stride)²`.
    pub fn fan_in(&self) -> usize {
        let taps = (self.geometry.kernel / self.geometry.stride.max(1)).max(1);
        self.in_channels * taps * taps
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.fan_in();
        self.weight.kaiming_normal(fan_in, rng);
        if let Some(b) = &mut self.bias {
            b.value.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn out_shape(&self, shape: [usize; 4]) -> Result<[usize; 4]> {
        if shape[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} channels, got {:?}",
                self.weight.name, self.in_channels, shape
            )));
        }
        Ok([
            shape[0],
            self.out_channels,
            self.geometry.transposed_out_size(shape[2])?,
            self.geometry.transposed_out_size(shape[3])?,
        ])
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out_shape = self.out_shape(x.shape)?;
        let [_, ci, h, w] = x.shape;
        let [_, co, ho, wo] = out_shape;
        let g = self.geometry;
        let (p, kk) = (h * w, co * g.kernel * g.kernel);
        let weight = &self.weight.value;
        let bias = self.bias.as_ref().map(|b| &b.value);
        let mut y = Tensor::zeros(out_shape);
        y.data.par_chunks_mut(co * ho * wo).enumerate().for_each(|(b, yb)| {
            let mut col = vec![T::zero(); kk * p];
            T::gemm(kk, ci, p, T::one(), weight, true, x.item(b), false, T::zero(), &mut col);
            col2im(&col, co, ho, wo, g, h, w, yb);
            if let Some(bias) = bias {
                for (plane, &bv) in yb.chunks_mut(ho * wo).zip(bias) {
                    plane.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::Shape(format!("{}: backward without a training forward", self.weight.name)))?;
        let out_shape = self.out_shape(x.shape)?;
        if dy.shape != out_shape {
            return Err(Error::Shape(format!("{}: gradient {:?} vs output {out_shape:?}", self.weight.name, dy.shape)));
        }
        let [_, ci, h, w] = x.shape;
        let [_, co, ho, wo] = out_shape;
        let g = self.geometry;
        let (p, kk) = (h * w, co * g.kernel * g.kernel);
        let weight = &self.weight.value;
        let mut dx = Tensor::zeros(x.shape);
        let partials: Vec<Vec<T>> = dx
            .data
            .par_chunks_mut(ci * p)
            .enumerate()
            .map(|(b, dxb)| {
                let mut col = vec![T::zero(); kk * p];
                im2col(dy.item(b), co, ho, wo, g, h, w, &mut col);
                T::gemm(ci, kk, p, T::one(), weight, false, &col, false, T::zero(), dxb);
                let mut dw = vec![T::zero(); ci * kk];
                T::gemm(ci, p, kk, T::one(), x.item(b), false, &col, true, T::zero(), &mut dw);
                dw
            })
            .collect();
        sum_in_order(partials, &mut self.weight.grad);
        if let Some(bias) = &mut self.bias {
            for b in 0..dy.n() {
                for (gb, plane) in bias.grad.iter_mut().zip(dy.item(b).chunks(ho * wo)) {
                    *gb += plane.iter().copied().sum::<T>();
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Float> Module<T> for ConvTranspose2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
