//! Pre-norm self-attention encoder producing one vector per sequence at the
//! `[CLS]` position.
//!
//! A batch is packed row-wise without padding: every sequence only attends
//! to its own rows, which is exactly what masking padded positions to −∞
//! would compute. The last block evaluates queries, attention output and
//! feed-forward only for the `[CLS]` row, the only row read downstream.

use ndarray::{s, Array2};
use rand::Rng;

use super::params::{
    add_at_b, gelu, gelu_backward, glorot, join, param_fields, row_sum, softmax_rows,
    uniform, LayerNorm, LnCache, Linear, Mat, ParamSet,
};
use super::ModelError;

/// A sequence encoder whose output is one row per input sequence.
///
/// Alternative encoders (for example one backed by fixed pretrained
/// embeddings) can be substituted for [`TransformerEncoder`].
pub trait ClsEncoder: ParamSet + Clone {
    type Cache;

    fn out_dim(&self) -> usize;

    fn max_len(&self) -> usize;

    /// Encodes a batch of id sequences into a `batch × out_dim` matrix.
    fn forward(&self, batch: &[&[usize]]) -> Result<(Mat, Self::Cache), ModelError>;

    /// Accumulates parameter gradients for `d_out = dL/d(output)`.
    fn backward(&self, cache: &Self::Cache, d_out: &Mat, grads: &mut Self);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    /// Fused query, key and value weights, `d × 3d`.
    pub qkv: Mat,
    /// Query bias. Keys carry no bias: it would shift every score of a
    /// query by the same amount, which the softmax ignores.
    pub q_bias: Mat,
    pub v_bias: Mat,
    pub out: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

param_fields!(Block { ln1, qkv, q_bias, v_bias, out, ln2, ff1, ff2 });

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    n_heads: usize,
}

impl ParamSet for TransformerEncoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.tok_emb.visit(&join(prefix, "tok_emb"), out);
        self.pos_emb.visit(&join(prefix, "pos_emb"), out);
        self.blocks.visit(&join(prefix, "blocks"), out);
        self.ln_f.visit(&join(prefix, "ln_f"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.tok_emb.visit_mut(&join(prefix, "tok_emb"), out);
        self.pos_emb.visit_mut(&join(prefix, "pos_emb"), out);
        self.blocks.visit_mut(&join(prefix, "blocks"), out);
        self.ln_f.visit_mut(&join(prefix, "ln_f"), out);
    }
}

/// Row layout of a packed batch.
#[derive(Debug, Clone)]
struct Layout {
    /// (first row, length) per sequence.
    seqs: Vec<(usize, usize)>,
    rows: usize,
}

impl Layout {
    fn cls_rows(&self) -> Vec<usize> {
        self.seqs.iter().map(|&(start, _)| start).collect()
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input_rows: usize,
    /// Rows of the input that produce output rows; `None` means all.
    query_rows: Option<Vec<usize>>,
    ln1: LnCache,
    a: Mat,
    qkv: Mat,
    /// Attention probabilities per (sequence, head).
    probs: Vec<Mat>,
    o: Mat,
    ln2: LnCache,
    b: Mat,
    f1: Mat,
    g: Mat,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    layout: Layout,
    ids: Vec<usize>,
    positions: Vec<usize>,
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
}

impl Block {
    fn new(d: usize, rng: &mut impl Rng) -> Self {
        Block {
            ln1: LayerNorm::new(d),
            qkv: glorot(d, 3 * d, rng),
            q_bias: Mat::zeros((1, d)),
            v_bias: Mat::zeros((1, d)),
            out: Linear::new(d, d, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::new(d, 4 * d, rng),
            ff2: Linear::new(4 * d, d, rng),
        }
    }

    fn forward(&self, h: &Mat, layout: &Layout, n_heads: usize, cls_only: bool) -> (Mat, BlockCache) {
        let d = h.ncols();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (a, ln1) = self.ln1.forward(h);
        let mut qkv = a.dot(&self.qkv);
        {
            let mut q = qkv.slice_mut(s![.., 0..d]);
            q += &self.q_bias;
            let mut v = qkv.slice_mut(s![.., 2 * d..3 * d]);
            v += &self.v_bias;
        }
        let query_rows = cls_only.then(|| layout.cls_rows());
        let n_out = query_rows.as_ref().map_or(h.nrows(), Vec::len);
        let mut o = Mat::zeros((n_out, d));
        let mut probs = Vec::with_capacity(layout.seqs.len() * n_heads);
        for (si, &(start, len)) in layout.seqs.iter().enumerate() {
            // query rows of this sequence, in input space and output space
            let (q_in, q_out, q_len) = if cls_only { (start, si, 1) } else { (start, start, len) };
            for hd in 0..n_heads {
                let c = hd * dh;
                let q = qkv.slice(s![q_in..q_in + q_len, c..c + dh]);
                let k = qkv.slice(s![start..start + len, d + c..d + c + dh]);
                let v = qkv.slice(s![start..start + len, 2 * d + c..2 * d + c + dh]);
                let mut p = q.dot(&k.t()) * scale;
                softmax_rows(&mut p);
                o.slice_mut(s![q_out..q_out + q_len, c..c + dh]).assign(&p.dot(&v));
                probs.push(p);
            }
        }
        let residual = match &query_rows {
            Some(rows) => h.select(ndarray::Axis(0), rows),
            None => h.clone(),
        };
        let h1 = residual + self.out.forward(&o);
        let (b, ln2) = self.ln2.forward(&h1);
        let f1 = self.ff1.forward(&b);
        let g = gelu(&f1);
        let h2 = &h1 + &self.ff2.forward(&g);
        let cache = BlockCache {
            input_rows: h.nrows(),
            query_rows,
            ln1,
            a,
            qkv,
            probs,
            o,
            ln2,
            b,
            f1,
            g,
        };
        (h2, cache)
    }

    fn backward(
        &self,
        c: &BlockCache,
        dh2: &Mat,
        layout: &Layout,
        n_heads: usize,
        g: &mut Block,
    ) -> Mat {
        let d = dh2.ncols();
        let hw = d / n_heads;
        let scale = 1.0 / (hw as f64).sqrt();
        let dg = self.ff2.backward(&c.g, dh2, &mut g.ff2);
        let df1 = gelu_backward(&c.f1, &dg);
        let db = self.ff1.backward(&c.b, &df1, &mut g.ff1);
        let dh1 = dh2 + &self.ln2.backward(&c.ln2, &db, &mut g.ln2);

        let mut dh = Mat::zeros((c.input_rows, d));
        match &c.query_rows {
            Some(rows) => {
                for (i, &r) in rows.iter().enumerate() {
                    let mut row = dh.row_mut(r);
                    row += &dh1.row(i);
                }
            }
            None => dh += &dh1,
        }
        let d_o = self.out.backward(&c.o, &dh1, &mut g.out);

        let mut dqkv = Mat::zeros(c.qkv.dim());
        let cls_only = c.query_rows.is_some();
        let mut pi = 0;
        for (si, &(start, len)) in layout.seqs.iter().enumerate() {
            let (q_in, q_out, q_len) = if cls_only { (start, si, 1) } else { (start, start, len) };
            for hd in 0..n_heads {
                let p = &c.probs[pi];
                pi += 1;
                let col = hd * hw;
                let q = c.qkv.slice(s![q_in..q_in + q_len, col..col + hw]);
                let k = c.qkv.slice(s![start..start + len, d + col..d + col + hw]);
                let v = c.qkv.slice(s![start..start + len, 2 * d + col..2 * d + col + hw]);
                let dout = d_o.slice(s![q_out..q_out + q_len, col..col + hw]);
                let dv = p.t().dot(&dout);
                let dp = dout.dot(&v.t());
                // softmax backward, row-wise
                let mut ds = &dp * p;
                for (mut row, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                    let sum = row.sum();
                    ndarray::Zip::from(&mut row).and(&prow).for_each(|x, &pp| *x -= pp * sum);
                }
                ds *= scale;
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                let mut t = dqkv.slice_mut(s![q_in..q_in + q_len, col..col + hw]);
                t += &dq;
                let mut t = dqkv.slice_mut(s![start..start + len, d + col..d + col + hw]);
                t += &dk;
                let mut t = dqkv.slice_mut(s![start..start + len, 2 * d + col..2 * d + col + hw]);
                t += &dv;
            }
        }
        add_at_b(&mut g.qkv, &c.a, &dqkv);
        g.q_bias += &row_sum(&dqkv.slice(s![.., 0..d]).to_owned());
        g.v_bias += &row_sum(&dqkv.slice(s![.., 2 * d..3 * d]).to_owned());
        let da = dqkv.dot(&self.qkv.t());
        dh += &self.ln1.backward(&c.ln1, &da, &mut g.ln1);
        dh
    }
}

impl TransformerEncoder {
    pub fn new(
        vocab_size: usize,
        d_model: usize,
        n_blocks: usize,
        n_heads: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(n_blocks >= 1, "at least one block");
        assert!(n_heads >= 1 && d_model % n_heads == 0, "heads must divide the model width");
        TransformerEncoder {
            tok_emb: uniform(vocab_size, d_model, 0.1, rng),
            pos_emb: uniform(max_len, d_model, 0.1, rng),
            blocks: (0..n_blocks).map(|_| Block::new(d_model, rng)).collect(),
            ln_f: LayerNorm::new(d_model),
            n_heads,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_model(&self) -> usize {
        self.tok_emb.ncols()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.tok_emb.nrows()
    }
}

impl ClsEncoder for TransformerEncoder {
    type Cache = EncoderCache;

    fn out_dim(&self) -> usize {
        self.d_model()
    }

    fn max_len(&self) -> usize {
        self.pos_emb.nrows()
    }

    fn forward(&self, batch: &[&[usize]]) -> Result<(Mat, EncoderCache), ModelError> {
        let mut seqs = Vec::with_capacity(batch.len());
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for seq in batch {
            if seq.is_empty() {
                return Err(ModelError::EmptySequence);
            }
            if seq.len() > self.max_len() {
                return Err(ModelError::SequenceTooLong {
                    len: seq.len(),
                    max: self.max_len(),
                });
            }
            seqs.push((ids.len(), seq.len()));
            for (p, &id) in seq.iter().enumerate() {
                if id >= self.vocab_size() {
                    return Err(ModelError::UnknownTokenId(id));
                }
                ids.push(id);
                positions.push(p);
            }
        }
        let layout = Layout {
            seqs,
            rows: ids.len(),
        };
        let d = self.d_model();
        let mut h = Array2::zeros((layout.rows, d));
        for (r, mut row) in h.outer_iter_mut().enumerate() {
            row.assign(&self.tok_emb.row(ids[r]));
            row += &self.pos_emb.row(positions[r]);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            let (next, cache) = block.forward(&h, &layout, self.n_heads, i == last);
            h = next;
            caches.push(cache);
        }
        let (out, ln_f) = self.ln_f.forward(&h);
        Ok((
            out,
            EncoderCache {
                layout,
                ids,
                positions,
                blocks: caches,
                ln_f,
            },
        ))
    }

    fn backward(&self, cache: &EncoderCache, d_out: &Mat, g: &mut Self) {
        let mut dh = self.ln_f.backward(&cache.ln_f, d_out, &mut g.ln_f);
        for (i, block) in self.blocks.iter().enumerate().rev() {
            dh = block.backward(&cache.blocks[i], &dh, &cache.layout, self.n_heads, &mut g.blocks[i]);
        }
        for (r, row) in dh.outer_iter().enumerate() {
            let mut t = g.tok_emb.row_mut(cache.ids[r]);
            t += &row;
            let mut p = g.pos_emb.row_mut(cache.positions[r]);
            p += &row;
        }
    }
}
