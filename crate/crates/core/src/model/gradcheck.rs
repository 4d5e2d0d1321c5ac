//! Finite-difference verification of the analytic gradients.

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{named, named_mut, softmax_rows, zeros_like, Linear, Mat, ParamSet};
use super::{ClsEncoder, Example, LossCoefficients, LossWeights, ModelError, SpecModel};

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst element of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_tensor: Vec<TensorCheck>,
    /// (tensor, flat index, analytic, numeric) of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
    pub n_checked: usize,
}

/// `(f(θ+ε) − f(θ−ε)) / 2ε` where `f` is the sum of `up` (resp. `down`).
/// Differencing term by term before summing keeps the rounding error at
/// the scale of the individual terms instead of the total.
fn central_difference(up: &[f64], down: &[f64], eps: f64) -> f64 {
    debug_assert_eq!(up.len(), down.len());
    up.iter().zip(down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * eps)
}

fn nudge<P: ParamSet>(p: &mut P, tensor: usize, index: usize, value: f64) -> f64 {
    let mut all = named_mut(p);
    let slot = all[tensor].1.iter_mut().nth(index).expect("index in range");
    std::mem::replace(slot, value)
}

/// Compares the analytic gradient of the batch loss with central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter element.
pub fn grad_check<E: ClsEncoder>(
    model: &SpecModel<E>,
    batch: &[&Example],
    weights: &LossWeights,
    coef: &LossCoefficients,
    eps: f64,
) -> Result<GradCheckReport, ModelError> {
    let mut analytic = zeros_like(model);
    model.loss(batch, weights, coef, Some(&mut analytic))?;
    let analytic: Vec<(String, Mat)> = named(&analytic)
        .into_iter()
        .map(|(n, m)| (n, m.clone()))
        .collect();
    let mut work = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: Vec::new(),
        worst: None,
        n_checked: 0,
    };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = TensorCheck {
            name: name.clone(),
            max_rel_error: -1.0,
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (j, &a) in grad.iter().enumerate() {
            let orig = nudge(&mut work, ti, j, 0.0);
            nudge(&mut work, ti, j, orig + eps);
            let up = work.loss_terms(batch, weights, coef)?;
            nudge(&mut work, ti, j, orig - eps);
            let down = work.loss_terms(batch, weights, coef)?;
            nudge(&mut work, ti, j, orig);
            let numeric = central_difference(&up, &down, eps);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error {
                worst = TensorCheck {
                    max_rel_error: err,
                    index: j,
                    analytic: a,
                    numeric,
                    ..worst
                };
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), j, a, numeric));
            }
            report.n_checked += 1;
        }
        report.per_tensor.push(worst);
    }
    Ok(report)
}

fn linear_softmax_loss(
    layer: &Linear,
    x: &Mat,
    labels: &[usize],
    w: &[f64],
    grad: Option<&mut Linear>,
) -> f64 {
    let mut p = layer.forward(x);
    softmax_rows(&mut p);
    let n = labels.len() as f64;
    let loss = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -w[y] * p[[r, y]].ln())
        .sum::<f64>()
        / n;
    if let Some(g) = grad {
        let mut d = p;
        for (mut row, &y) in d.axis_iter_mut(Axis(0)).zip(labels) {
            row[y] -= 1.0;
            row *= w[y] / n;
        }
        layer.accumulate(x, &d, g);
    }
    loss
}

/// Gradient check of a lone linear layer feeding a weighted softmax cross
/// entropy, on random data. Returns the maximum relative error.
pub fn linear_softmax_grad_check(seed: u64, eps: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (din, classes, n) = (6, 4, 5);
    let mut layer = Linear::new(din, classes, &mut rng);
    layer.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    let x = Mat::from_shape_simple_fn((n, din), || rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let w: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut g = Linear::zeros(din, classes);
    linear_softmax_loss(&layer, &x, &labels, &w, Some(&mut g));
    let analytic: Vec<f64> = named(&g).iter().flat_map(|(_, m)| m.iter().copied()).collect();
    let mut worst = 0.0f64;
    let mut k = 0;
    let n_tensors = named(&layer).len();
    for ti in 0..n_tensors {
        let len = named(&layer)[ti].1.len();
        for j in 0..len {
            let orig = nudge(&mut layer, ti, j, 0.0);
            nudge(&mut layer, ti, j, orig + eps);
            let up = linear_softmax_loss(&layer, &x, &labels, &w, None);
            nudge(&mut layer, ti, j, orig - eps);
            let down = linear_softmax_loss(&layer, &x, &labels, &w, None);
            nudge(&mut layer, ti, j, orig);
            worst = worst.max(relative_error(analytic[k], (up - down) / (2.0 * eps)));
            k += 1;
        }
    }
    worst
}
