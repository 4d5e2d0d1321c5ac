//! Detection and generation network.
//!
//! An encoder maps `[CLS] x_1 … x_n` to the `[CLS]` hidden state, which is
//! pooled through `tanh(W1 h + b1)`. Three heads read the pooled vector: a
//! binary detector, a five-way category classifier, and an LSTM that emits
//! the tagged specification token by token.

mod checkpoint;
mod encoder;
mod gradcheck;
mod heads;
mod loss;
mod optim;
pub mod params;
mod train;
mod vocab;

pub use checkpoint::{from_bytes, load, save, to_bytes, FORMAT_VERSION, MAGIC};
pub use encoder::{Block, ClsEncoder, EncoderCache, TransformerEncoder};
pub use gradcheck::{grad_check, linear_softmax_grad_check, GradCheckReport, TensorCheck};
pub use heads::{Generation, Generator, Mlp};
pub use loss::{batch_weighted_ce, weighted_ce, LossCoefficients, LossWeights, MIN_PROB};
pub use optim::Adam;
pub use train::{prepare, train, EpochLog, TrainConfig};
pub use vocab::{Vocab, BOS, CLS, EOS, MAX_TAG_INDEX, PAD, RESERVED, SPECIALS, UNK};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::Category;
use params::{argmax, join, softmax_rows, tanh_backward, Linear, Mat, ParamSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(usize),
    #[error("padding mask must mark a non-empty prefix of valid positions")]
    BadMask,
    #[error("training diverged: loss is {loss} at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("class {0} has no training samples")]
    MissingClass(usize),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub max_len: usize,
    /// Width of the pooled vector.
    pub d_pool: usize,
    /// Hidden width of the detection and category classifiers.
    pub head_hidden: usize,
    pub gen_hidden: usize,
    pub gen_embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_blocks: 2,
            n_heads: 4,
            max_len: 64,
            d_pool: 64,
            head_hidden: 50,
            gen_hidden: 20,
            gen_embed: 32,
        }
    }
}

pub const N_CATEGORIES: usize = 5;
/// Default generation length limit.
pub const DEFAULT_MAX_GEN_LEN: usize = 24;

/// One encoded training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `[CLS]` followed by the input ids.
    pub input: Vec<usize>,
    pub label: bool,
    /// Target specification ids, without `[BOS]`/`[EOS]`; empty for
    /// negatives.
    pub target: Vec<usize>,
    pub category: Option<usize>,
}

/// Loss of one batch, by component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub detection: f64,
    pub generation: f64,
    pub category: f64,
}

/// Encoder, pooling layer and the three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecModel<E = TransformerEncoder> {
    pub encoder: E,
    pub pool: Linear,
    pub detect: Mlp,
    pub category: Mlp,
    pub generator: Generator,
}

impl<E: ParamSet> ParamSet for SpecModel<E> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.pool.visit(&join(prefix, "pool"), out);
        self.detect.visit(&join(prefix, "detect"), out);
        self.category.visit(&join(prefix, "category"), out);
        self.generator.visit(&join(prefix, "generator"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.pool.visit_mut(&join(prefix, "pool"), out);
        self.detect.visit_mut(&join(prefix, "detect"), out);
        self.category.visit_mut(&join(prefix, "category"), out);
        self.generator.visit_mut(&join(prefix, "generator"), out);
    }
}

/// Model output for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Probabilities of (no-spec, spec).
    pub detection: [f64; 2],
    pub category_probs: [f64; N_CATEGORIES],
    /// Generated specification tokens, present when a spec was detected.
    pub generation: Option<Generation>,
}

impl Prediction {
    /// Argmax with ties resolved toward no-spec.
    pub fn is_spec(&self) -> bool {
        self.detection[1] > self.detection[0]
    }

    pub fn category(&self) -> Category {
        Category::from_index(argmax(self.category_probs)).expect("five classes")
    }
}

impl SpecModel<TransformerEncoder> {
    pub fn new(config: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = TransformerEncoder::new(
            vocab_size,
            config.d_model,
            config.n_blocks,
            config.n_heads,
            config.max_len,
            &mut rng,
        );
        Self::with_encoder(encoder, config, vocab_size, &mut rng)
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.encoder.d_model(),
            n_blocks: self.encoder.n_blocks(),
            n_heads: self.encoder.n_heads(),
            max_len: self.encoder.max_len(),
            d_pool: self.pool.w.ncols(),
            head_hidden: self.detect.l1.w.ncols(),
            gen_hidden: self.generator.hidden(),
            gen_embed: self.generator.embed_dim(),
        }
    }
}

fn probs_row<const N: usize>(m: &Mat, r: usize) -> [f64; N] {
    std::array::from_fn(|i| m[[r, i]])
}

impl<E: ClsEncoder> SpecModel<E> {
    pub fn with_encoder(encoder: E, config: &ModelConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = encoder.out_dim();
        SpecModel {
            pool: Linear::new(d, config.d_pool, rng),
            detect: Mlp::new(config.d_pool, config.head_hidden, 2, rng),
            category: Mlp::new(config.d_pool, config.head_hidden, N_CATEGORIES, rng),
            generator: Generator::new(
                config.d_pool,
                config.gen_hidden,
                config.gen_embed,
                vocab_size,
                rng,
            ),
            encoder,
        }
    }

    /// Pooled vectors `h_c`, one row per sequence.
    pub fn pooled(&self, batch: &[&[usize]]) -> Result<Mat, ModelError> {
        let (h, _) = self.encoder.forward(batch)?;
        Ok(self.pool.forward(&h).mapv(f64::tanh))
    }

    /// Pooled vector of a padded sequence. `mask` marks valid positions and
    /// must be a prefix; padded positions are never read.
    pub fn pooled_padded(&self, ids: &[usize], mask: &[bool]) -> Result<Mat, ModelError> {
        let valid = mask.iter().take_while(|&&m| m).count();
        if valid == 0 || mask.len() != ids.len() || mask[valid..].iter().any(|&m| m) {
            return Err(ModelError::BadMask);
        }
        self.pooled(&[&ids[..valid]])
    }

    /// (no-spec, spec) probabilities for one pooled vector.
    pub fn detect(&self, hc: &Mat) -> [f64; 2] {
        probs_row(&self.detect.probs(hc), 0)
    }

    pub fn classify_category(&self, hc: &Mat) -> [f64; N_CATEGORIES] {
        probs_row(&self.category.probs(hc), 0)
    }

    pub fn generate(&self, hc: &Mat, max_len: usize) -> Generation {
        self.generator.generate(hc, max_len)
    }

    /// Detection, category and (when a spec is detected) generation for one
    /// encoded input.
    pub fn predict(&self, input: &[usize], max_gen_len: usize) -> Result<Prediction, ModelError> {
        let hc = self.pooled(&[input])?;
        let mut p = Prediction {
            detection: self.detect(&hc),
            category_probs: self.classify_category(&hc),
            generation: None,
        };
        if p.is_spec() {
            p.generation = Some(self.generate(&hc, max_gen_len));
        }
        Ok(p)
    }

    /// Batch loss
    /// `a · mean_i w_{y_i} CE_det + b · (token CE summed / #tokens) + c · mean_{pos} CE_cat`,
    /// accumulating its gradient into `grads` when given.
    pub fn loss(
        &self,
        batch: &[&Example],
        weights: &LossWeights,
        coef: &LossCoefficients,
        grads: Option<&mut Self>,
    ) -> Result<LossParts, ModelError> {
        self.loss_inner(batch, weights, coef, grads, None)
    }

    /// The weighted summands of the total loss: one per detection example,
    /// one per category example and one per generated token. Their sum is
    /// `loss(..).total` up to rounding.
    pub fn loss_terms(
        &self,
        batch: &[&Example],
        weights: &LossWeights,
        coef: &LossCoefficients,
    ) -> Result<Vec<f64>, ModelError> {
        let mut terms = Vec::new();
        self.loss_inner(batch, weights, coef, None, Some(&mut terms))?;
        Ok(terms)
    }

    fn loss_inner(
        &self,
        batch: &[&Example],
        weights: &LossWeights,
        coef: &LossCoefficients,
        grads: Option<&mut Self>,
        mut terms: Option<&mut Vec<f64>>,
    ) -> Result<LossParts, ModelError> {
        let inputs: Vec<&[usize]> = batch.iter().map(|e| e.input.as_slice()).collect();
        let (h, enc_cache) = self.encoder.forward(&inputs)?;
        let hc = self.pool.forward(&h).mapv(f64::tanh);
        let n = batch.len() as f64;
        let floor = MIN_PROB.ln();

        let (det_logits, det_cache) = self.detect.forward(&hc);
        let mut det_p = det_logits;
        softmax_rows(&mut det_p);
        let mut det_loss = 0.0;
        let mut d_det = det_p.clone();
        for (r, e) in batch.iter().enumerate() {
            let y = usize::from(e.label);
            let w = weights.class[y];
            let term = -w * det_p[[r, y]].ln().max(floor);
            det_loss += term;
            if let Some(t) = terms.as_deref_mut() {
                t.push(coef.detection * term / n);
            }
            let mut row = d_det.row_mut(r);
            if det_p[[r, y]] > MIN_PROB {
                row[y] -= 1.0;
                row *= w * coef.detection / n;
            } else {
                row.fill(0.0);
            }
        }
        det_loss /= n;

        let pos: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].label).collect();
        let hc_pos = hc.select(Axis(0), &pos);
        let mut cat_loss = 0.0;
        let mut gen_loss = 0.0;
        let mut cat_state = None;
        let mut gen_state = None;
        if !pos.is_empty() {
            let np = pos.len() as f64;
            let (cat_logits, cat_cache) = self.category.forward(&hc_pos);
            let mut cat_p = cat_logits;
            softmax_rows(&mut cat_p);
            let mut d_cat = cat_p.clone();
            for (r, &i) in pos.iter().enumerate() {
                let y = batch[i].category.unwrap_or(0);
                let term = -cat_p[[r, y]].ln().max(floor);
                cat_loss += term;
                if let Some(t) = terms.as_deref_mut() {
                    t.push(coef.category * term / np);
                }
                let mut row = d_cat.row_mut(r);
                if cat_p[[r, y]] > MIN_PROB {
                    row[y] -= 1.0;
                    row *= coef.category / np;
                } else {
                    row.fill(0.0);
                }
            }
            cat_loss /= np;
            cat_state = Some((cat_cache, d_cat));

            let targets: Vec<&[usize]> = pos.iter().map(|&i| batch[i].target.as_slice()).collect();
            let (sum, cache) = self.generator.forward_teacher(&hc_pos, &targets, MIN_PROB);
            let n_tok = Generator::n_tokens(&cache) as f64;
            gen_loss = sum / n_tok;
            if let Some(t) = terms.as_deref_mut() {
                t.extend(Generator::token_losses(&cache).iter().map(|l| coef.generation * l / n_tok));
            }
            gen_state = Some((cache, coef.generation / n_tok));
        }

        let parts = LossParts {
            total: coef.detection * det_loss + coef.generation * gen_loss + coef.category * cat_loss,
            detection: det_loss,
            generation: gen_loss,
            category: cat_loss,
        };

        if let Some(g) = grads {
            let mut dhc = self.detect.backward(&det_cache, &d_det, &mut g.detect);
            let mut dpos = Array2::zeros((pos.len(), hc.ncols()));
            if let Some((cache, d_cat)) = cat_state {
                dpos += &self.category.backward(&cache, &d_cat, &mut g.category);
            }
            if let Some((cache, scale)) = gen_state {
                dpos += &self
                    .generator
                    .backward_teacher(&cache, scale, MIN_PROB, &mut g.generator);
            }
            for (r, &i) in pos.iter().enumerate() {
                let mut row = dhc.row_mut(i);
                row += &dpos.row(r);
            }
            let dpre = tanh_backward(&hc, &dhc);
            let dh = self.pool.backward(&h, &dpre, &mut g.pool);
            self.encoder.backward(&enc_cache, &dh, &mut g.encoder);
        }
        Ok(parts)
    }
}

#[cfg(test)]
mod tests {
    use super::params::{all_finite, named, zero_all, zeros_like};
    use super::*;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_blocks: 1,
            n_heads: 2,
            max_len: 12,
            d_pool: 8,
            head_hidden: 6,
            gen_hidden: 5,
            gen_embed: 4,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, vocab: usize, max: usize) -> Vec<usize> {
        let len = rng.gen_range(1..max);
        std::iter::once(CLS)
            .chain((0..len).map(|_| rng.gen_range(0..vocab)))
            .collect()
    }

    #[test]
    fn zero_output_layers_give_uniform_distributions() {
        let mut m = SpecModel::new(&ModelConfig::default(), 60, 1);
        zero_all(&mut m.detect.out);
        zero_all(&mut m.category.out);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let hc = m.pooled(&[&random_input(&mut rng, 60, 40)]).unwrap();
            assert_eq!(m.detect(&hc), [0.5, 0.5]);
            assert!(m.classify_category(&hc).iter().all(|&p| (p - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn pooled_dimension_is_independent_of_length() {
        let m = SpecModel::new(&ModelConfig::default(), 60, 1);
        for len in [1, 2, 17, 64] {
            let ids: Vec<usize> = (0..len).map(|i| if i == 0 { CLS } else { 7 }).collect();
            assert_eq!(m.pooled(&[&ids]).unwrap().dim(), (1, 64));
        }
        let too_long = vec![CLS; 65];
        assert!(matches!(
            m.pooled(&[&too_long]),
            Err(ModelError::SequenceTooLong { len: 65, max: 64 })
        ));
    }

    #[test]
    fn pad_content_is_never_read() {
        let m = SpecModel::new(&ModelConfig::default(), 60, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let valid = random_input(&mut rng, 60, 30);
            let pads = rng.gen_range(1..20);
            let mut a = valid.clone();
            let mut b = valid.clone();
            let mut mask = vec![true; valid.len()];
            for _ in 0..pads {
                a.push(PAD);
                b.push(rng.gen_range(0..60));
                mask.push(false);
            }
            let ha = m.pooled_padded(&a, &mask).unwrap();
            let hb = m.pooled_padded(&b, &mask).unwrap();
            assert_eq!(ha, hb);
            assert_eq!(ha, m.pooled(&[&valid]).unwrap());
        }
        assert!(m.pooled_padded(&[CLS, 5], &[false, true]).is_err());
    }

    #[test]
    fn batched_encoding_matches_single() {
        let m = SpecModel::new(&small(), 30, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seqs: Vec<Vec<usize>> = (0..5).map(|_| random_input(&mut rng, 30, 12)).collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let all = m.pooled(&refs).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let one = m.pooled(&[s]).unwrap();
            for (a, b) in all.row(i).iter().zip(one.row(0).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_on_random_sequences() {
        let m = SpecModel::new(&ModelConfig::default(), 80, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let s = random_input(&mut rng, 80, 64);
            let hc = m.pooled(&[&s]).unwrap();
            assert!(hc.iter().all(|v| v.is_finite()));
            let p = m.detect(&hc);
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            let c = m.classify_category(&hc);
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_bounded_and_deterministic() {
        let m = SpecModel::new(&small(), 30, 9);
        let hc = m.pooled(&[&[CLS, 6, 7]]).unwrap();
        let g = m.generate(&hc, 1);
        assert!(g.ids.len() <= 1);
        assert_eq!(g.truncated, !g.ids.is_empty());
        for max in [0, 3, 24] {
            let a = m.generate(&hc, max);
            assert!(a.ids.len() <= max);
            assert_eq!(a, m.generate(&hc, max));
        }
        // with EOS forced to dominate, decoding stops immediately untruncated
        let mut m2 = m.clone();
        zero_all(&mut m2.generator.proj);
        m2.generator.proj.b[[0, EOS]] = 10.0;
        assert_eq!(
            m2.generate(&hc, 1),
            Generation {
                ids: vec![],
                truncated: false
            }
        );
    }

    #[test]
    fn zero_coefficients_give_zero_gradient() {
        let m = SpecModel::new(&small(), 30, 10);
        let batch = vec![
            Example { input: vec![CLS, 5, 6], label: true, target: vec![5, 20], category: Some(1) },
            Example { input: vec![CLS, 7], label: false, target: vec![], category: None },
        ];
        let refs: Vec<&Example> = batch.iter().collect();
        let mut g = zeros_like(&m);
        m.loss(&refs, &LossWeights::uniform(2), &LossCoefficients::ZERO, Some(&mut g))
            .unwrap();
        assert!(named(&g).iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
        let mut g = zeros_like(&m);
        m.loss(&refs, &LossWeights::uniform(2), &LossCoefficients::default(), Some(&mut g))
            .unwrap();
        assert!(all_finite(&g));
        assert!(named(&g).iter().any(|(_, t)| t.iter().any(|&v| v != 0.0)));
    }
}
