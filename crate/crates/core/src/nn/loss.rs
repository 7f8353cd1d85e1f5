use super::{Float, Tensor};
use crate::error::{Error, Result};

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Float>(z: T) -> T {
    let z = z.to_f64();
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    T::from_f64(s)
}

/// Mean over voxels of `w·t·softplus(−z) + (1−t)·softplus(z)`, i.e. binary
/// cross-entropy with positives weighted by `pos_weight`. Returns the loss
/// and its gradient with respect to the logits.
pub fn weighted_sigmoid_ce<T: Float>(logits: &Tensor<T>, targets: &[u8], pos_weight: f64) -> Result<(f64, Tensor<T>)> {
    if targets.len() != logits.data.len() {
        return Err(Error::Shape(format!(
            "{} targets for logits {:?}",
            targets.len(),
            logits.shape
        )));
    }
    if logits.data.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if let Some(bad) = targets.iter().find(|&&t| t > 1) {
        return Err(Error::InvalidArgument(format!("targets must be 0 or 1, found {bad}")));
    }
    let inv_n = 1.0 / logits.data.len() as f64;
    let mut loss = 0f64;
    let mut grad = Tensor::zeros(logits.shape);
    for ((g, &z), &t) in grad.data.iter_mut().zip(&logits.data).zip(targets) {
        let z = z.to_f64();
        let s = sigmoid(z);
        let (l, d) = if t == 1 {
            (pos_weight * softplus(-z), pos_weight * (s - 1.0))
        } else {
            (softplus(z), s)
        };
        loss += l;
        *g = T::from_f64(d * inv_n);
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{compare, numeric_gradient, random_tensor, STEP};
    use crate::seed;
    use rand::Rng;
    use std::f64::consts::LN_2;

    fn single(z: f64, t: u8) -> (f64, f64) {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![z]).unwrap();
        let (l, g) = weighted_sigmoid_ce(&x, &[t], 10.0).unwrap();
        (l, g.data[0])
    }

    #[test]
    fn values_at_zero() {
        let (l0, g0) = single(0.0, 0);
        let (l1, g1) = single(0.0, 1);
        assert!((l0 - LN_2).abs() < 1e-15);
        assert!((l1 - 10.0 * LN_2).abs() < 1e-14);
        assert_eq!(g0, 0.5);
        assert_eq!(g1, -5.0);
    }

    #[test]
    fn extreme_logits_are_stable() {
        for z in [-100.0, 100.0] {
            for t in [0, 1] {
                let (l, g) = single(z, t);
                assert!(l.is_finite() && g.is_finite() && l >= 0.0);
            }
        }
        assert!(single(50.0, 1).0 < 1e-20);
        assert!(single(-50.0, 0).0 < 1e-20);
        assert!((single(-100.0, 1).0 - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_targets() {
        let x = Tensor::<f32>::zeros([1, 1, 1, 2]);
        assert!(weighted_sigmoid_ce(&x, &[0, 2], 10.0).is_err());
        assert!(weighted_sigmoid_ce(&x, &[0], 10.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seed::rng(1, "loss");
        let x = random_tensor([2, 1, 4, 4], &mut rng);
        let t: Vec<u8> = (0..32).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let (_, g) = weighted_sigmoid_ce(&x, &t, 10.0).unwrap();
        let mut f = |v: &[f64]| weighted_sigmoid_ce(&Tensor::from_vec(x.shape, v.to_vec()).unwrap(), &t, 10.0).unwrap().0;
        let r = compare(&g.data, &numeric_gradient(&mut f, &x.data, STEP));
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
