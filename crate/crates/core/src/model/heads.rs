//! Heads on top of the pooled vector: two-hidden-layer classifiers and the
//! LSTM specification generator.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::params::{
    add_at_b, argmax, glorot, param_fields, sigmoid, softmax_rows, tanh_backward,
    uniform, Linear, Mat,
};
use super::vocab::{BOS, EOS};

/// Classifier with two tanh hidden layers and a linear output layer whose
/// logits feed a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
}

param_fields!(Mlp { l1, l2, out });

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Mat,
    h1: Mat,
    h2: Mat,
}

impl Mlp {
    pub fn new(din: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            l1: Linear::new(din, hidden, rng),
            l2: Linear::new(hidden, hidden, rng),
            out: Linear::new(hidden, classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.out.w.ncols()
    }

    pub fn forward(&self, x: &Mat) -> (Mat, MlpCache) {
        let h1 = self.l1.forward(x).mapv(f64::tanh);
        let h2 = self.l2.forward(&h1).mapv(f64::tanh);
        let logits = self.out.forward(&h2);
        (
            logits,
            MlpCache {
                x: x.clone(),
                h1,
                h2,
            },
        )
    }

    pub fn probs(&self, x: &Mat) -> Mat {
        let (mut p, _) = self.forward(x);
        softmax_rows(&mut p);
        p
    }

    pub fn backward(&self, c: &MlpCache, dlogits: &Mat, g: &mut Mlp) -> Mat {
        let dh2 = self.out.backward(&c.h2, dlogits, &mut g.out);
        let dh1 = self.l2.backward(&c.h1, &tanh_backward(&c.h2, &dh2), &mut g.l2);
        self.l1.backward(&c.x, &tanh_backward(&c.h1, &dh1), &mut g.l1)
    }
}

/// LSTM decoder over specification tokens. The initial hidden state is a
/// learned projection of the pooled vector; the cell state starts at zero.
/// Gate order in the fused weights is input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub emb: Mat,
    pub init: Linear,
    pub wx: Linear,
    pub wh: Mat,
    pub proj: Linear,
}

param_fields!(Generator { emb, init, wx, wh, proj });

#[derive(Debug, Clone)]
struct Step {
    inputs: Vec<usize>,
    x: Mat,
    h_prev: Mat,
    c_prev: Mat,
    i: Mat,
    f: Mat,
    g: Mat,
    o: Mat,
    tc: Mat,
    h: Mat,
    probs: Mat,
}

#[derive(Debug, Clone)]
pub struct GenCache {
    hc: Mat,
    h0: Mat,
    steps: Vec<Step>,
    /// Target id per (step, row), `None` past the end of the row.
    targets: Vec<Vec<Option<usize>>>,
    /// Clamped `−ln p` of each target token, in step order.
    token_losses: Vec<f64>,
}

/// Greedy decoding result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub ids: Vec<usize>,
    /// Set when decoding stopped at the length limit instead of `[EOS]`.
    pub truncated: bool,
}

impl Generator {
    pub fn new(d_in: usize, hidden: usize, embed: usize, vocab: usize, rng: &mut impl Rng) -> Self {
        let mut wx = Linear::new(embed, 4 * hidden, rng);
        wx.b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        Generator {
            emb: uniform(vocab, embed, 0.1, rng),
            init: Linear::new(d_in, hidden, rng),
            wx,
            wh: glorot(hidden, 4 * hidden, rng),
            proj: Linear::new(hidden, vocab, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.emb.ncols()
    }

    fn initial(&self, hc: &Mat) -> Mat {
        self.init.forward(hc).mapv(f64::tanh)
    }

    /// One LSTM step for a batch of input ids.
    fn cell(&self, inputs: &[usize], h_prev: &Mat, c_prev: &Mat) -> Step {
        let hd = self.hidden();
        let x = self.emb.select(Axis(0), inputs);
        let gates = self.wx.forward(&x) + h_prev.dot(&self.wh);
        let i = gates.slice(s![.., 0..hd]).mapv(sigmoid);
        let f = gates.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = gates.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = gates.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let tc = c.mapv(f64::tanh);
        let h = &o * &tc;
        let mut probs = self.proj.forward(&h);
        softmax_rows(&mut probs);
        Step {
            inputs: inputs.to_vec(),
            x,
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            tc,
            h,
            probs,
        }
    }

    fn cell_state(step: &Step) -> Mat {
        &step.f * &step.c_prev + &step.i * &step.g
    }

    /// Teacher-forced pass. Each row feeds `[BOS], y_1 … y_m` and predicts
    /// `y_1 … y_m, [EOS]`. Returns the summed token cross entropy (log
    /// argument clamped at `min_prob`) and the number of target tokens.
    pub fn forward_teacher(&self, hc: &Mat, targets: &[&[usize]], min_prob: f64) -> (f64, GenCache) {
        let rows = targets.len();
        let n_steps = targets.iter().map(|t| t.len() + 1).max().unwrap_or(0);
        let h0 = self.initial(hc);
        let mut h = h0.clone();
        let mut c = Mat::zeros(h.dim());
        let mut steps = Vec::with_capacity(n_steps);
        let mut tgt = Vec::with_capacity(n_steps);
        let mut token_losses = Vec::new();
        let floor = min_prob.ln();
        for t in 0..n_steps {
            let inputs: Vec<usize> = targets
                .iter()
                .map(|y| if t == 0 { BOS } else { y.get(t - 1).copied().unwrap_or(EOS) })
                .collect();
            let want: Vec<Option<usize>> = targets
                .iter()
                .map(|y| match t.cmp(&y.len()) {
                    std::cmp::Ordering::Less => Some(y[t]),
                    std::cmp::Ordering::Equal => Some(EOS),
                    std::cmp::Ordering::Greater => None,
                })
                .collect();
            let step = self.cell(&inputs, &h, &c);
            for (r, w) in want.iter().enumerate() {
                if let Some(y) = *w {
                    token_losses.push(-step.probs[[r, y]].ln().max(floor));
                }
            }
            c = Self::cell_state(&step);
            h = step.h.clone();
            steps.push(step);
            tgt.push(want);
        }
        debug_assert_eq!(rows, h.nrows());
        (
            token_losses.iter().sum(),
            GenCache {
                hc: hc.clone(),
                h0,
                steps,
                targets: tgt,
                token_losses,
            },
        )
    }

    pub fn n_tokens(cache: &GenCache) -> usize {
        cache.token_losses.len()
    }

    pub fn token_losses(cache: &GenCache) -> &[f64] {
        &cache.token_losses
    }

    /// Backward pass for `scale · summed loss`; returns `dL/d(hc)`.
    pub fn backward_teacher(&self, c: &GenCache, scale: f64, min_prob: f64, g: &mut Generator) -> Mat {
        let hd = self.hidden();
        let rows = c.h0.nrows();
        let mut dh = Mat::zeros((rows, hd));
        let mut dc = Mat::zeros((rows, hd));
        for (t, step) in c.steps.iter().enumerate().rev() {
            let mut dlogits = step.probs.clone();
            for (r, w) in c.targets[t].iter().enumerate() {
                let mut row = dlogits.row_mut(r);
                match *w {
                    Some(y) if step.probs[[r, y]] > min_prob => {
                        row[y] -= 1.0;
                        row *= scale;
                    }
                    // past the end of the row, or clamped: no gradient
                    _ => row.fill(0.0),
                }
            }
            dh += &self.proj.backward(&step.h, &dlogits, &mut g.proj);
            let mut dgates = Array2::zeros((rows, 4 * hd));
            ndarray::Zip::from(&mut dc)
                .and(&dh)
                .and(&step.o)
                .and(&step.tc)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
            {
                let (mut di, rest) = dgates.view_mut().split_at(Axis(1), hd);
                let (mut df, rest) = rest.split_at(Axis(1), hd);
                let (mut dg, mut d_o) = rest.split_at(Axis(1), hd);
                ndarray::Zip::from(&mut di)
                    .and(&dc)
                    .and(&step.i)
                    .and(&step.g)
                    .for_each(|d, &dc, &i, &gg| *d = dc * gg * i * (1.0 - i));
                ndarray::Zip::from(&mut df)
                    .and(&dc)
                    .and(&step.f)
                    .and(&step.c_prev)
                    .for_each(|d, &dc, &f, &cp| *d = dc * cp * f * (1.0 - f));
                ndarray::Zip::from(&mut dg)
                    .and(&dc)
                    .and(&step.i)
                    .and(&step.g)
                    .for_each(|d, &dc, &i, &gg| *d = dc * i * (1.0 - gg * gg));
                ndarray::Zip::from(&mut d_o)
                    .and(&dh)
                    .and(&step.o)
                    .and(&step.tc)
                    .for_each(|d, &dh, &o, &tc| *d = dh * tc * o * (1.0 - o));
            }
            let dx = self.wx.backward(&step.x, &dgates, &mut g.wx);
            add_at_b(&mut g.wh, &step.h_prev, &dgates);
            for (r, &id) in step.inputs.iter().enumerate() {
                let mut e = g.emb.row_mut(id);
                e += &dx.row(r);
            }
            dh = dgates.dot(&self.wh.t());
            dc = &dc * &step.f;
        }
        let dpre = tanh_backward(&c.h0, &dh);
        self.init.backward(&c.hc, &dpre, &mut g.init)
    }

    /// Greedy decoding for a single pooled vector (`1 × d`).
    pub fn generate(&self, hc: &Mat, max_len: usize) -> Generation {
        let mut h = self.initial(hc);
        let mut c = Mat::zeros(h.dim());
        let mut prev = BOS;
        let mut ids = Vec::new();
        for _ in 0..max_len {
            let step = self.cell(&[prev], &h, &c);
            let next = argmax(step.probs.row(0).iter().copied());
            if next == EOS {
                return Generation {
                    ids,
                    truncated: false,
                };
            }
            ids.push(next);
            c = Self::cell_state(&step);
            h = step.h;
            prev = next;
        }
        Generation {
            ids,
            truncated: true,
        }
    }
}
