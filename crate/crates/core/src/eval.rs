//! Detection metrics, generation accuracy and per-group breakdowns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ExtractionType;
use crate::dsl::{parse_spec, Category};
use crate::model::{ClsEncoder, ModelError, SpecModel, Vocab, DEFAULT_MAX_GEN_LEN};
use crate::synthdata::LabeledSample;
use crate::tagger::Tagger;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: bool, label: bool) {
        match (predicted, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_pr(
            ratio(self.tp, self.tp + self.fp),
            ratio(self.tp, self.tp + self.fn_),
        )
    }

    /// The counts normalized two ways: `tp`/`fp` as shares of predicted
    /// positives, and `tp`/`fn` as shares of gold positives.
    pub fn normalized(&self) -> NormalizedConfusion {
        let pred = self.tp + self.fp;
        let gold = self.tp + self.fn_;
        NormalizedConfusion {
            by_predicted: [ratio(self.tp, pred), ratio(self.fp, pred)],
            by_gold: [ratio(self.tp, gold), ratio(self.fn_, gold)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedConfusion {
    /// `[tp, fp] / (tp + fp)`
    pub by_predicted: [f64; 2],
    /// `[tp, fn] / (tp + fn)`
    pub by_gold: [f64; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// F1 is the harmonic mean, or 0 when both inputs are 0.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
        }
    }
}

pub fn score_detection(
    predictions: &[bool],
    labels: &[bool],
) -> Result<(ConfusionCounts, Metrics), EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        c.record(p, l);
    }
    Ok((c, c.metrics()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationScore {
    pub matched: usize,
    /// Gold positives that the detector flagged.
    pub total: usize,
    pub exact_match: f64,
}

/// True when both sides parse to the same specification.
pub fn specs_match(predicted: &str, gold: &str) -> bool {
    match (parse_spec(predicted), parse_spec(gold)) {
        (Ok(p), Ok(g)) => p == g,
        _ => false,
    }
}

/// Exact-match rate of generated specifications over the samples where both
/// a prediction (the detector fired) and a gold specification exist.
pub fn score_generation(
    predicted: &[Option<String>],
    gold: &[Option<String>],
) -> Result<GenerationScore, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predicted.len(),
            labels: gold.len(),
        });
    }
    let mut s = GenerationScore::default();
    for (p, g) in predicted.iter().zip(gold) {
        if let (Some(p), Some(g)) = (p, g) {
            s.total += 1;
            if specs_match(p, g) {
                s.matched += 1;
            }
        }
    }
    s.exact_match = ratio(s.matched, s.total);
    Ok(s)
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub extraction_type: ExtractionType,
    /// Gold category for positives, predicted category for negatives.
    pub category: Category,
    pub gold: Option<String>,
    /// Detagged generation when the detector fired; `Some("")` if nothing
    /// usable was generated.
    pub predicted: Option<String>,
}

impl EvalRecord {
    pub fn label(&self) -> bool {
        self.gold.is_some()
    }

    pub fn detected(&self) -> bool {
        self.predicted.is_some()
    }

    fn is_error(&self) -> bool {
        match (&self.predicted, &self.gold) {
            (Some(p), Some(g)) => !specs_match(p, g),
            (None, None) => false,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    ExtractionType,
    Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionCounts,
    pub generation: GenerationScore,
}

fn group_report(records: &[&EvalRecord]) -> GroupReport {
    let mut c = ConfusionCounts::default();
    for r in records {
        c.record(r.detected(), r.label());
    }
    let predicted: Vec<Option<String>> = records.iter().map(|r| r.predicted.clone()).collect();
    let gold: Vec<Option<String>> = records.iter().map(|r| r.gold.clone()).collect();
    let m = c.metrics();
    GroupReport {
        n: records.len(),
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        confusion: c,
        generation: score_generation(&predicted, &gold).expect("aligned"),
    }
}

/// Metrics per group; groups without samples are absent.
pub fn breakdown(records: &[EvalRecord], key: GroupKey) -> BTreeMap<String, GroupReport> {
    let mut groups: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let k = match key {
            GroupKey::ExtractionType => r.extraction_type.to_string(),
            GroupKey::Category => r.category.to_string(),
        };
        groups.entry(k).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| (k, group_report(&rs)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub expected: Option<String>,
    pub got: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionCounts,
    pub confusion_normalized: NormalizedConfusion,
    pub generation: GenerationScore,
    pub by_type: BTreeMap<String, GroupReport>,
    pub by_category: BTreeMap<String, GroupReport>,
    pub errors: Vec<ErrorRecord>,
}

impl EvaluationReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let all: Vec<&EvalRecord> = records.iter().collect();
        let overall = group_report(&all);
        Ok(EvaluationReport {
            n: overall.n,
            precision: overall.precision,
            recall: overall.recall,
            f1: overall.f1,
            confusion: overall.confusion,
            confusion_normalized: overall.confusion.normalized(),
            generation: overall.generation,
            by_type: breakdown(records, GroupKey::ExtractionType),
            by_category: breakdown(records, GroupKey::Category),
            errors: records
                .iter()
                .filter(|r| r.is_error())
                .map(|r| ErrorRecord {
                    id: r.id.clone(),
                    expected: r.gold.clone(),
                    got: r.predicted.clone(),
                })
                .collect(),
        })
    }

    /// Plain-text tables by extraction type and by category.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, g: &GroupReport| {
            let gen = if g.generation.total > 0 {
                format!("{:.0}%", 100.0 * g.generation.exact_match)
            } else {
                "-".to_string()
            };
            let _ = writeln!(
                out,
                "{name:<16}{:>6}{:>11.2}{:>8.2}{:>8.2}{:>12}",
                g.n, g.precision, g.recall, g.f1, gen
            );
        };
        let header = |out: &mut String, first: &str| {
            let _ = writeln!(
                out,
                "{first:<16}{:>6}{:>11}{:>8}{:>8}{:>12}",
                "n", "Precision", "Recall", "F1", "Generation"
            );
        };
        let total = GroupReport {
            n: self.n,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            confusion: self.confusion,
            generation: self.generation,
        };
        header(&mut out, "Type");
        for t in ExtractionType::ALL {
            if let Some(g) = self.by_type.get(t.as_str()) {
                row(&mut out, t.as_str(), g);
            }
        }
        row(&mut out, "Total", &total);
        out.push('\n');
        header(&mut out, "Category");
        for c in Category::ALL {
            if let Some(g) = self.by_category.get(c.as_str()) {
                row(&mut out, c.as_str(), g);
            }
        }
        row(&mut out, "Total", &total);
        let c = &self.confusion;
        let _ = writeln!(
            out,
            "\nconfusion: tp {} fp {} fn {} tn {}",
            c.tp, c.fp, c.fn_, c.tn
        );
        out
    }
}

/// Runs detection and, for detected samples, generation plus detagging.
pub fn evaluate_model<E: ClsEncoder>(
    model: &SpecModel<E>,
    vocab: &Vocab,
    tagger: &Tagger,
    samples: &[LabeledSample],
) -> Result<Vec<EvalRecord>, EvalError> {
    samples
        .iter()
        .map(|s| {
            let p = model.predict(&vocab.encode_input(&s.text), DEFAULT_MAX_GEN_LEN)?;
            let predicted = p.generation.as_ref().map(|g| {
                let tokens: Vec<&str> = g.ids.iter().map(|&i| vocab.token(i)).collect();
                tagger
                    .detag(&tokens, &s.tags)
                    .unwrap_or_else(|_| tokens.join(" "))
            });
            let gold = if s.label {
                Some(tagger.detag(&s.target, &s.tags).unwrap_or_else(|_| s.target.join(" ")))
            } else {
                None
            };
            Ok(EvalRecord {
                id: s.id.clone(),
                extraction_type: s.extraction_type,
                category: s.category.unwrap_or_else(|| p.category()),
                gold,
                predicted,
            })
        })
        .collect()
}
