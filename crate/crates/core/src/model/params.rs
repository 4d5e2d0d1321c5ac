//! Parameter containers and the dense building blocks shared by the
//! encoder and the heads. Every parameter is an `Array2<f64>`; bias and
//! scale vectors are `1 × n`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

pub type Mat = Array2<f64>;

/// Ordered, named access to every parameter tensor of a component.
///
/// Gradients are stored in a second instance of the same type, so visiting
/// a model and its gradient container in lockstep pairs each tensor with
/// its gradient.
pub trait ParamSet {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl ParamSet for Mat {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        out.push((prefix.to_string(), self));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: ParamSet> ParamSet for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        for (i, t) in self.iter().enumerate() {
            t.visit(&join(prefix, &i.to_string()), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        for (i, t) in self.iter_mut().enumerate() {
            t.visit_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`ParamSet`] by visiting the listed fields in order.
macro_rules! param_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::model::params::ParamSet for $ty {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<(String, &'a $crate::model::params::Mat)>,
            ) {
                $( self.$field.visit(&$crate::model::params::join(prefix, stringify!($field)), out); )*
            }

            fn visit_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut $crate::model::params::Mat)>,
            ) {
                $( self.$field.visit_mut(&$crate::model::params::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use param_fields;

pub fn named<T: ParamSet>(p: &T) -> Vec<(String, &Mat)> {
    let mut out = Vec::new();
    p.visit("", &mut out);
    out
}

pub fn named_mut<T: ParamSet>(p: &mut T) -> Vec<(String, &mut Mat)> {
    let mut out = Vec::new();
    p.visit_mut("", &mut out);
    out
}

pub fn zero_all<T: ParamSet>(p: &mut T) {
    for (_, m) in named_mut(p) {
        m.fill(0.0);
    }
}

pub fn zeros_like<T: ParamSet + Clone>(p: &T) -> T {
    let mut z = p.clone();
    zero_all(&mut z);
    z
}

pub fn param_count<T: ParamSet>(p: &T) -> usize {
    named(p).iter().map(|(_, m)| m.len()).sum()
}

pub fn all_finite<T: ParamSet>(p: &T) -> bool {
    named(p).iter().all(|(_, m)| m.iter().all(|x| x.is_finite()))
}

/// Uniform Glorot initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

/// `c += aᵀ · b`
pub(crate) fn add_at_b(c: &mut Mat, a: &Mat, b: &Mat) {
    general_mat_mul(1.0, &a.t(), b, 1.0, c);
}

pub(crate) fn row_sum(m: &Mat) -> Mat {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Affine map `x · w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

param_fields!(Linear { w, b });

impl Linear {
    pub fn new(din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: glorot(din, dout, rng),
            b: Mat::zeros((1, dout)),
        }
    }

    pub fn zeros(din: usize, dout: usize) -> Self {
        Linear {
            w: Mat::zeros((din, dout)),
            b: Mat::zeros((1, dout)),
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut Linear) -> Mat {
        self.accumulate(x, dy, g);
        dy.dot(&self.w.t())
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn accumulate(&self, x: &Mat, dy: &Mat, g: &mut Linear) {
        add_at_b(&mut g.w, x, dy);
        g.b += &row_sum(dy);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Mat,
    pub beta: Mat,
}

param_fields!(LayerNorm { gamma, beta });

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Mat::ones((1, d)),
            beta: Mat::zeros((1, d)),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LnCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *s = 1.0 / (var + LN_EPS).sqrt();
            let inv = *s;
            row.mapv_inplace(|v| v * inv);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LnCache, dy: &Mat, g: &mut LayerNorm) -> Mat {
        g.gamma += &row_sum(&(dy * &cache.xhat));
        g.beta += &row_sum(dy);
        let d = dy.ncols() as f64;
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &s) in dx
            .outer_iter_mut()
            .zip(cache.xhat.outer_iter())
            .zip(cache.inv_std.iter())
        {
            let sum = row.sum();
            let dot = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
            Zip::from(&mut row)
                .and(&xh)
                .for_each(|v, &x| *v = s / d * (d * *v - sum - x * dot));
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: &Mat) -> Mat {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Mat, dy: &Mat) -> Mat {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    });
    dx
}

pub fn tanh_backward(y: &Mat, dy: &Mat) -> Mat {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &t| *d *= 1.0 - t * t);
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable in-place softmax of each row.
pub fn softmax_rows(m: &mut Mat) {
    for mut row in m.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, x) in v.into_iter().enumerate() {
        if x > best_v {
            best = i;
            best_v = x;
        }
    }
    best
}
