use super::{Float, Mode, Module, Param, ParamKind, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept by the running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub channels: usize,
    /// Normalized input and per-channel `1/sqrt(var + eps)`.
    cache: Option<(Tensor<T>, Vec<f64>)>,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let p = |suffix: &str, kind, fill| Param::new(format!("{name}.{suffix}"), kind, vec![channels], fill);
        BatchNorm2d {
            gamma: p("gamma", ParamKind::Gamma, T::one()),
            beta: p("beta", ParamKind::Beta, T::zero()),
            running_mean: p("running_mean", ParamKind::RunningMean, T::zero()),
            running_var: p("running_var", ParamKind::RunningVar, T::one()),
            channels,
            cache: None,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != self.channels {
            return Err(Error::Shape(format!(
                "{} expects {} channels, got {:?}",
                self.gamma.name, self.channels, x.shape
            )));
        }
        if x.n() == 0 || x.plane_len() == 0 {
            return Err(Error::Empty("batch-norm batch"));
        }
        Ok(())
    }

    /// Train mode normalizes with the biased batch variance and feeds the
    /// unbiased one into the running average.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut y = Tensor::zeros(x.shape);
        match mode {
            Mode::Infer => {
                for ch in 0..c {
                    let inv = 1.0 / (self.running_var.value[ch].to_f64() + BN_EPSILON).sqrt();
                    let scale = T::from_f64(self.gamma.value[ch].to_f64() * inv);
                    let shift = T::from_f64(
                        self.beta.value[ch].to_f64() - self.running_mean.value[ch].to_f64() * self.gamma.value[ch].to_f64() * inv,
                    );
                    for b in 0..n {
                        let off = (b * c + ch) * hw;
                        for (o, &v) in y.data[off..off + hw].iter_mut().zip(&x.data[off..off + hw]) {
                            *o = v * scale + shift;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                let mut x_hat = Tensor::zeros(x.shape);
                let mut inv_stds = Vec::with_capacity(c);
                for ch in 0..c {
                    let planes = (0..n).map(|b| (b * c + ch) * hw);
                    let sum: f64 = planes.clone().map(|o| x.data[o..o + hw].iter().map(|v| v.to_f64()).sum::<f64>()).sum();
                    let mean = sum / count;
                    let ss: f64 = planes
                        .clone()
                        .map(|o| x.data[o..o + hw].iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>())
                        .sum();
                    let var = ss / count;
                    let inv = 1.0 / (var + BN_EPSILON).sqrt();
                    inv_stds.push(inv);
                    let (g, bt) = (self.gamma.value[ch].to_f64(), self.beta.value[ch].to_f64());
                    for o in planes {
                        for i in o..o + hw {
                            let xh = (x.data[i].to_f64() - mean) * inv;
                            x_hat.data[i] = T::from_f64(xh);
                            y.data[i] = T::from_f64(g * xh + bt);
                        }
                    }
                    let unbiased = if count > 1.0 { ss / (count - 1.0) } else { var };
                    let rm = &mut self.running_mean.value[ch];
                    *rm = T::from_f64(BN_MOMENTUM * rm.to_f64() + (1.0 - BN_MOMENTUM) * mean);
                    let rv = &mut self.running_var.value[ch];
                    *rv = T::from_f64(BN_MOMENTUM * rv.to_f64() + (1.0 - BN_MOMENTUM) * unbiased);
                }
                self.cache = Some((x_hat, inv_stds));
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (x_hat, inv_stds) = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape(format!("{}: backward without a training forward", self.gamma.name)))?;
        if dy.shape != x_hat.shape {
            return Err(Error::Shape(format!("{}: gradient {:?} vs {:?}", self.gamma.name, dy.shape, x_hat.shape)));
        }
        let [n, c, h, w] = dy.shape;
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(dy.shape);
        for ch in 0..c {
            let planes = (0..n).map(|b| (b * c + ch) * hw);
            let (mut sum_dy, mut sum_dy_xh) = (0f64, 0f64);
            for o in planes.clone() {
                for i in o..o + hw {
                    let g = dy.data[i].to_f64();
                    sum_dy += g;
                    sum_dy_xh += g * x_hat.data[i].to_f64();
                }
            }
            self.gamma.grad[ch] += T::from_f64(sum_dy_xh);
            self.beta.grad[ch] += T::from_f64(sum_dy);
            let k = self.gamma.value[ch].to_f64() * inv_stds[ch] / count;
            for o in planes {
                for i in o..o + hw {
                    let v = count * dy.data[i].to_f64() - sum_dy - x_hat.data[i].to_f64() * sum_dy_xh;
                    dx.data[i] = T::from_f64(k * v);
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Float> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random_tensor};
    use crate::seed;

    #[test]
    fn train_mode_standardizes() {
        let mut rng = seed::rng(1, "bn");
        let mut x = random_tensor([8, 3, 5, 5], &mut rng);
        x.data.iter_mut().for_each(|v| *v = *v * 3.0 + 7.0);
        let mut bn = BatchNorm2d::<f64>::new("bn", 3);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..8).flat_map(|b| y.data[(b * 3 + ch) * 25..][..25].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn infer_identity_statistics() {
        let mut rng = seed::rng(2, "bn");
        let x = random_tensor([2, 2, 3, 3], &mut rng);
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        let y = bn.forward(&x, Mode::Infer).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b / (1.0 + BN_EPSILON).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_normalization() {
        // One channel, values 1, 2, 3, 6: mean 3, biased var 3.5.
        let x = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        bn.gamma.value[0] = 2.0;
        bn.beta.value[0] = 0.5;
        let y = bn.forward(&x, Mode::Train).unwrap();
        let inv = 1.0 / (3.5f64 + 1e-5).sqrt();
        let want: Vec<f64> = [1.0, 2.0, 3.0, 6.0].iter().map(|v| 2.0 * (v - 3.0) * inv + 0.5).collect();
        for (a, b) in y.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((bn.running_mean.value[0] - 0.3).abs() < 1e-12);
        // Unbiased variance 14/3.
        assert!((bn.running_var.value[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut bn = BatchNorm2d::<f32>::new("bn", 2);
        assert!(bn.forward(&Tensor::zeros([0, 2, 3, 3]), Mode::Train).is_err());
        assert!(bn.forward(&Tensor::zeros([1, 3, 3, 3]), Mode::Train).is_err());
        assert!(bn.backward(&Tensor::zeros([1, 2, 3, 3])).is_err());
    }

    #[test]
    fn gradients() {
        let mut rng = seed::rng(3, "bng");
        let mut bn = BatchNorm2d::<f64>::new("bn", 3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let x = random_tensor([3, 3, 4, 4], &mut rng);
        let r = check_layer(&mut bn, &x, &mut rng, |l, x, m| l.forward(x, m), |l, dy| l.backward(dy));
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
