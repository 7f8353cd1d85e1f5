//! Central finite-difference gradient checking in f64.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Mode, Module, Tensor};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            checked: self.checked + other.checked,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradReport {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).fold(GradReport::default(), |r, (&a, &n)| GradReport {
        max_rel_error: r.max_rel_error.max(relative_error(a, n)),
        max_abs_error: r.max_abs_error.max((a - n).abs()),
        checked: r.checked + 1,
    })
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
pub fn numeric_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor {
        shape,
        data: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

/// Values of every trainable parameter, in visiting order.
fn trainable_values<M: Module<f64>>(layer: &mut M) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    layer.visit_params(&mut |p| {
        if p.kind.trainable() {
            out.push(p.value.clone());
        }
    });
    out
}

fn trainable_grads<M: Module<f64>>(layer: &mut M) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    layer.visit_params(&mut |p| {
        if p.kind.trainable() {
            out.push(p.grad.clone());
        }
    });
    out
}

fn set_trainable<M: Module<f64>>(layer: &mut M, which: usize, values: &[f64]) {
    let mut idx = 0;
    layer.visit_params(&mut |p| {
        if p.kind.trainable() {
            if idx == which {
                p.value.copy_from_slice(values);
            }
            idx += 1;
        }
    });
}

/// Checks input and parameter gradients of `layer` at `x` for the scalar
/// objective `Σ r ⊙ forward(x)` with random weights `r`. Forwards run in
/// training mode.
pub fn check_layer<M, F, B>(layer: &mut M, x: &Tensor<f64>, rng: &mut impl Rng, mut forward: F, mut backward: B) -> GradReport
where
    M: Module<f64>,
    F: FnMut(&mut M, &Tensor<f64>, Mode) -> Result<Tensor<f64>>,
    B: FnMut(&mut M, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    layer.zero_grad();
    let y = forward(layer, x, Mode::Train).expect("forward");
    let r = random_tensor(y.shape, rng);
    let dx = backward(layer, &r).expect("backward");
    let param_grads = trainable_grads(layer);

    let objective = |layer: &mut M, forward: &mut F, input: &Tensor<f64>| -> f64 {
        let y = forward(layer, input, Mode::Train).expect("forward");
        y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
    };

    let mut numeric_x = |xs: &[f64]| {
        let t = Tensor { shape: x.shape, data: xs.to_vec() };
        objective(layer, &mut forward, &t)
    };
    let mut report = compare(&dx.data, &numeric_gradient(&mut numeric_x, &x.data, STEP));

    let values = trainable_values(layer);
    for (which, (base, analytic)) in values.iter().zip(&param_grads).enumerate() {
        let mut f = |v: &[f64]| {
            set_trainable(layer, which, v);
            objective(layer, &mut forward, x)
        };
        let numeric = numeric_gradient(&mut f, base, STEP);
        set_trainable(layer, which, base);
        report = report.merge(compare(analytic, &numeric));
    }
    report
}
