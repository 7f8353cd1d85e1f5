use rayon::prelude::*;

use super::{ConvGeometry, Float, Mode, Module, Param, Tensor};
use crate::error::{Error, Result};

/// Max pooling. Padded cells never win; ties go to the first maximum in
/// row-major window order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub geometry: ConvGeometry,
    /// Per output element, flat index of the winning input element.
    argmax: Option<(Vec<u32>, [usize; 4])>,
}

/// Input range covered by output index `o`, clipped to `0..n`.
#[inline]
fn window(o: usize, g: ConvGeometry, n: usize) -> (usize, usize) {
    let start = o * g.stride;
    (start.saturating_sub(g.pad), (start + g.kernel - g.pad).min(n))
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d {
            geometry: ConvGeometry::new(kernel, stride, pad),
            argmax: None,
        }
    }

    pub fn out_shape(&self, shape: [usize; 4]) -> Result<[usize; 4]> {
        if self.geometry.pad >= self.geometry.kernel {
            return Err(Error::Shape(format!("pool padding must be below kernel: {:?}", self.geometry)));
        }
        Ok([
            shape[0],
            shape[1],
            self.geometry.out_size(shape[2])?,
            self.geometry.out_size(shape[3])?,
        ])
    }

    pub fn forward<T: Float>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out_shape = self.out_shape(x.shape)?;
        let [_, _, h, w] = x.shape;
        let [_, _, ho, wo] = out_shape;
        let g = self.geometry;
        let mut y = Tensor::zeros(out_shape);
        let mut arg = vec![0u32; y.data.len()];
        y.data
            .par_chunks_mut(ho * wo)
            .zip(arg.par_chunks_mut(ho * wo))
            .enumerate()
            .for_each_init(
                || (vec![T::zero(); h * wo], vec![0u32; h * wo]),
                |(rv, ri), (plane, (yp, ap))| {
                    let base = plane * h * w;
                    let xp = &x.data[base..base + h * w];
                    // Separable: the first maximum along each row, then the
                    // first row holding the window maximum, is the row-major
                    // first maximum of the window.
                    for iy in 0..h {
                        let row = &xp[iy * w..(iy + 1) * w];
                        for ox in 0..wo {
                            let (lo, hi) = window(ox, g, w);
                            let mut best = row[lo];
                            let mut bi = lo;
                            for (ix, &v) in row.iter().enumerate().take(hi).skip(lo + 1) {
                                if v > best {
                                    best = v;
                                    bi = ix;
                                }
                            }
                            rv[iy * wo + ox] = best;
                            ri[iy * wo + ox] = (iy * w + bi) as u32;
                        }
                    }
                    for oy in 0..ho {
                        let (lo, hi) = window(oy, g, h);
                        let out = &mut yp[oy * wo..(oy + 1) * wo];
                        let arg = &mut ap[oy * wo..(oy + 1) * wo];
                        out.copy_from_slice(&rv[lo * wo..(lo + 1) * wo]);
                        arg.copy_from_slice(&ri[lo * wo..(lo + 1) * wo]);
                        for iy in lo + 1..hi {
                            for ox in 0..wo {
                                let v = rv[iy * wo + ox];
                                if v > out[ox] {
                                    out[ox] = v;
                                    arg[ox] = ri[iy * wo + ox];
                                }
                            }
                        }
                        arg.iter_mut().for_each(|a| *a += base as u32);
                    }
                },
            );
        self.argmax = (mode == Mode::Train).then_some((arg, x.shape));
        Ok(y)
    }

    pub fn backward<T: Float>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, in_shape) = self
            .argmax
            .take()
            .ok_or_else(|| Error::Shape("max-pool backward without a training forward".into()))?;
        if dy.data.len() != arg.len() {
            return Err(Error::Shape(format!("max-pool gradient {:?} does not match forward", dy.shape)));
        }
        let mut dx = Tensor::zeros(in_shape);
        for (&i, &g) in arg.iter().zip(&dy.data) {
            dx.data[i as usize] += g;
        }
        Ok(dx)
    }
}

impl<T: Float> Module<T> for MaxPool2d {
    fn visit_params(&mut self, _: &mut dyn FnMut(&mut Param<T>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random_tensor};
    use crate::seed;

    fn window_max(x: &Tensor<f64>, k: usize, s: usize, p: usize) -> Tensor<f64> {
        let [n, c, h, w] = x.shape;
        let g = ConvGeometry::new(k, s, p);
        let (ho, wo) = (g.out_size(h).unwrap(), g.out_size(w).unwrap());
        let mut y = Tensor::zeros([n, c, ho, wo]);
        for b in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..k {
                        for j in 0..k {
                            let (iy, ix) = ((oy * s + i) as isize - p as isize, (ox * s + j) as isize - p as isize);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                m = m.max(x.data[b * h * w + iy as usize * w + ix as usize]);
                            }
                        }
                    }
                    y.data[b * ho * wo + oy * wo + ox] = m;
                }
            }
        }
        y
    }

    #[test]
    fn halves_even_inputs() {
        let pool = MaxPool2d::new(3, 2, 1);
        assert_eq!(pool.out_shape([1, 1, 64, 64]).unwrap(), [1, 1, 32, 32]);
        assert_eq!(pool.out_shape([2, 5, 256, 256]).unwrap(), [2, 5, 128, 128]);
        let mut pool = MaxPool2d::new(3, 2, 1);
        let x = Tensor::<f32>::from_vec([1, 2, 4, 4], vec![-2.5; 32]).unwrap();
        let y = pool.forward(&x, Mode::Infer).unwrap();
        assert_eq!(y.shape, [1, 2, 2, 2]);
        assert!(y.data.iter().all(|&v| v == -2.5));
    }

    #[test]
    fn matches_window_max_oracle() {
        let mut rng = seed::rng(1, "pool");
        for (k, s, p) in [(3, 2, 1), (3, 1, 1), (2, 2, 0)] {
            let x = random_tensor([2, 3, 7, 6], &mut rng);
            let y = MaxPool2d::new(k, s, p).forward(&x, Mode::Infer).unwrap();
            assert_eq!(y, window_max(&x, k, s, p));
        }
        let mut hot = Tensor::<f64>::zeros([1, 1, 6, 6]);
        hot.data[3 * 6 + 3] = 5.0;
        let y = MaxPool2d::new(3, 2, 1).forward(&hot, Mode::Infer).unwrap();
        assert_eq!(y, window_max(&hot, 3, 2, 1));
        assert_eq!(y.data.iter().filter(|&&v| v == 5.0).count(), 4);
    }

    #[test]
    fn ties_route_to_first_maximum() {
        let mut pool = MaxPool2d::new(2, 2, 0);
        let x = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 3.0, 3.0, 3.0]).unwrap();
        pool.forward(&x, Mode::Train).unwrap();
        let dx = pool.backward(&Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gradients() {
        let mut rng = seed::rng(2, "pg");
        for _ in 0..5 {
            let mut pool = MaxPool2d::new(3, 2, 1);
            let x = random_tensor([2, 2, 6, 6], &mut rng);
            let r = check_layer(&mut pool, &x, &mut rng, |l, x, m| l.forward(x, m), |l, dy| l.backward(dy));
            assert!(r.max_rel_error < 1e-6, "{r:?}");
        }
    }
}
