//! Synthetic labeled samples: seed sentences with typed slots are filled with
//! random keywords, numbers, booleans, units and format classes, wrapped in
//! neutral distractor sentences, tagged, and paired with the tagged target
//! specification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExtractionType, KeywordSet};
use crate::dsl::{self, Category, DslError};
use crate::tagger::{split_spec_tokens, tokenize_tagged, TagClass, TagMap, Tagger};

const SHIPPED_SEEDS: &str = include_str!("../data/seeds.jsonl");
const SHIPPED_DISTRACTORS: &str = include_str!("../data/distractors.txt");
const SHIPPED_KEYWORDS: &str = include_str!("../data/keywords.txt");

/// Fill attempts per sample before giving up on a template.
pub const MAX_FILL_TRIES: usize = 100;
/// Inclusive upper bound for number slot fillers.
pub const MAX_NUMBER: u32 = 65_535;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("seed {seed}: no valid slot filling after {tries} tries")]
    SlotRange { seed: String, tries: usize },
    #[error("seed {seed}: {msg}")]
    InvalidSeed { seed: String, msg: String },
    #[error("seed {seed}: target does not parse: {source}")]
    TargetSyntax {
        seed: String,
        #[source]
        source: DslError,
    },
    #[error("seed {seed}: slot {{{slot}}} was not tagged in the composed text")]
    SlotNotTagged { seed: String, slot: String },
    #[error("seed {seed}: tagged target reconstructs to `{got}`, expected `{expected}`")]
    LabelMismatch {
        seed: String,
        expected: String,
        got: String,
    },
    #[error("seed {seed}: sentence needs {tokens} tokens, limit is {limit}")]
    TooLong {
        seed: String,
        tokens: usize,
        limit: usize,
    },
    #[error("distractor pool is empty")]
    EmptyPool,
    #[error("insufficient seeds: {0}")]
    InsufficientSeeds(String),
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotKind {
    Keyword,
    Num,
    Bool,
    Unit,
    Format,
    /// Dotted version string; tagged as a number but never part of a target.
    Version,
}

impl SlotKind {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "kw" => SlotKind::Keyword,
            "num" => SlotKind::Num,
            "bool" => SlotKind::Bool,
            "unit" => SlotKind::Unit,
            "format" => SlotKind::Format,
            "version" => SlotKind::Version,
            _ => return None,
        })
    }

    fn tag_class(self) -> TagClass {
        match self {
            SlotKind::Keyword => TagClass::Keyword,
            SlotKind::Num | SlotKind::Version => TagClass::Num,
            SlotKind::Bool => TagClass::Bool,
            SlotKind::Unit => TagClass::Unit,
            SlotKind::Format => TagClass::Format,
        }
    }
}

/// A slot reference such as `{num2}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub kind: SlotKind,
    pub index: u32,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            SlotKind::Keyword => "kw",
            SlotKind::Num => "num",
            SlotKind::Bool => "bool",
            SlotKind::Unit => "unit",
            SlotKind::Format => "format",
            SlotKind::Version => "version",
        };
        if self.index == 1 {
            f.write_str(name)
        } else {
            write!(f, "{name}{}", self.index)
        }
    }
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\{(kw|num|bool|unit|format|version)([2-9]?)\}").expect("static regex")
    })
}

/// Slots referenced in `text`, in order of first appearance.
pub fn slots_in(text: &str) -> Vec<Slot> {
    let mut out: Vec<Slot> = Vec::new();
    for c in slot_regex().captures_iter(text) {
        let slot = Slot {
            kind: SlotKind::from_name(&c[1]).expect("regex alternatives"),
            index: c[2].parse().unwrap_or(1),
        };
        if !out.contains(&slot) {
            out.push(slot);
        }
    }
    out
}

fn substitute(text: &str, mut value: impl FnMut(&Slot) -> String) -> String {
    slot_regex()
        .replace_all(text, |c: &regex::Captures| {
            let slot = Slot {
                kind: SlotKind::from_name(&c[1]).expect("regex alternatives"),
                index: c[2].parse().unwrap_or(1),
            };
            value(&slot)
        })
        .into_owned()
}

/// A seed sentence. Positive seeds carry a target pattern and a category;
/// negative seeds mention a keyword without stating a specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTemplate {
    pub id: String,
    pub template: String,
    pub target: Option<String>,
    #[serde(rename = "type")]
    pub extraction_type: ExtractionType,
    pub category: Option<Category>,
}

impl SeedTemplate {
    pub fn is_positive(&self) -> bool {
        self.target.is_some()
    }

    /// Checks slot consistency, and for positive seeds that the target
    /// pattern parses and agrees with the declared category.
    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |msg: String| SynthError::InvalidSeed {
            seed: self.id.clone(),
            msg,
        };
        let slots = slots_in(&self.template);
        if !slots.iter().any(|s| s.kind == SlotKind::Keyword) {
            return Err(invalid("template has no keyword slot".into()));
        }
        let Some(target) = &self.target else {
            if self.category.is_some() {
                return Err(invalid("negative seed with a category".into()));
            }
            return Ok(());
        };
        let tpl: BTreeSet<Slot> = slots
            .into_iter()
            .filter(|s| s.kind != SlotKind::Version)
            .collect();
        let tgt: BTreeSet<Slot> = slots_in(target).into_iter().collect();
        if tpl != tgt {
            return Err(invalid(format!(
                "template slots {:?} differ from target slots {:?}",
                tpl.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                tgt.iter().map(|s| s.to_string()).collect::<Vec<_>>()
            )));
        }
        let Some(category) = self.category else {
            return Err(invalid("positive seed without a category".into()));
        };
        // Probe with placeholder fillers whose intervals are ordered.
        let probe = substitute(target, |s| match s.kind {
            SlotKind::Keyword => format!("k{}", s.index),
            SlotKind::Num | SlotKind::Version => s.index.to_string(),
            SlotKind::Bool => "true".into(),
            SlotKind::Unit => "mb".into(),
            SlotKind::Format => "\"url\"".into(),
        });
        let spec = dsl::parse_spec(&probe).map_err(|source| SynthError::TargetSyntax {
            seed: self.id.clone(),
            source,
        })?;
        let inferred = dsl::infer_category(&spec);
        if inferred != category {
            return Err(invalid(format!(
                "declared category {category} but target is {inferred}"
            )));
        }
        Ok(())
    }
}

/// Positive and negative seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedLibrary {
    pub positives: Vec<SeedTemplate>,
    pub negatives: Vec<SeedTemplate>,
}

impl SeedLibrary {
    /// Parses JSONL seeds, validating each one.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let seed: SeedTemplate = serde_json::from_str(line).map_err(|e| SynthError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            seed.validate()?;
            if !ids.insert(seed.id.clone()) {
                return Err(SynthError::Parse {
                    line: i + 1,
                    msg: format!("duplicate seed id {}", seed.id),
                });
            }
            if seed.is_positive() {
                positives.push(seed);
            } else {
                negatives.push(seed);
            }
        }
        Ok(SeedLibrary {
            positives,
            negatives,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// The shipped library of 50 positive seeds and the negative templates.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_SEEDS).expect("shipped seeds are valid")
    }
}

/// Parses a distractor pool: one sentence per non-empty, non-`#` line.
pub fn parse_distractors(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_distractors(path: &Path) -> Result<Vec<String>, SynthError> {
    Ok(parse_distractors(
        &std::fs::read_to_string(path).map_err(io_err(path))?,
    ))
}

pub fn shipped_distractors() -> Vec<String> {
    parse_distractors(SHIPPED_DISTRACTORS)
}

pub fn shipped_keywords() -> KeywordSet {
    KeywordSet::parse("synthetic", SHIPPED_KEYWORDS).expect("shipped keywords are valid")
}

fn label_as_int<S: serde::Serializer>(b: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*b))
}

fn label_from_int<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        n => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {n}"))),
    }
}

/// One tagged training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    /// Tagged text C.
    pub text: String,
    /// Tag map T.
    pub tags: TagMap,
    #[serde(serialize_with = "label_as_int", deserialize_with = "label_from_int")]
    pub label: bool,
    /// Tagged specification tokens; empty iff `label` is false.
    pub target: Vec<String>,
    pub category: Option<Category>,
    #[serde(rename = "type")]
    pub extraction_type: ExtractionType,
    /// Seed template the sample was composed from.
    pub seed: String,
}

impl LabeledSample {
    /// Model input tokens of the tagged text (without `[CLS]`).
    pub fn tokens(&self) -> Vec<String> {
        tokenize_tagged(&self.text)
    }
}

/// Per-sample generator: `ChaCha8Rng` seeded with the master seed, on a
/// stream of its own.
pub fn sample_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

fn render_number(n: u32, rng: &mut impl Rng) -> String {
    let plain = n.to_string();
    if n < 1000 || rng.gen_bool(0.75) {
        return plain;
    }
    let bytes = plain.as_bytes();
    let mut out = String::new();
    for (i, &b) in bytes.iter().enumerate() {
        if i > 0 && (bytes.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(b as char);
    }
    out
}

#[derive(Debug, Clone)]
struct Filler {
    /// As written in the composed sentence.
    surface: String,
    /// As written in the concrete target specification.
    dsl: String,
}

fn pick_distinct<'a>(
    pool: &'a [String],
    used: &mut Vec<&'a str>,
    rng: &mut impl Rng,
) -> Option<&'a str> {
    let free: Vec<&str> = pool
        .iter()
        .map(String::as_str)
        .filter(|s| !used.contains(s))
        .collect();
    let pick = *free.choose(rng)?;
    used.push(pick);
    Some(pick)
}

/// Composes samples from seeds, holding the tagger, keyword pool and
/// distractor pool.
#[derive(Debug, Clone)]
pub struct Composer {
    tagger: Tagger,
    keywords: KeywordSet,
    distractors: Vec<String>,
    /// Maximum model input length including `[CLS]`.
    max_len: usize,
}

impl Composer {
    pub fn new(
        tagger: Tagger,
        keywords: KeywordSet,
        distractors: Vec<String>,
        max_len: usize,
    ) -> Result<Self, SynthError> {
        if distractors.is_empty() {
            return Err(SynthError::EmptyPool);
        }
        if let Some(k) = keywords.keywords().iter().find(|k| !dsl::is_valid_keyword(k)) {
            return Err(SynthError::InvalidConfig(format!(
                "keyword `{k}` is not a valid specification identifier"
            )));
        }
        Ok(Composer {
            tagger,
            keywords,
            distractors,
            max_len,
        })
    }

    /// Shipped keywords and distractors with default lexicons.
    pub fn shipped(max_len: usize) -> Self {
        Composer::new(
            Tagger::default(),
            shipped_keywords(),
            shipped_distractors(),
            max_len,
        )
        .expect("shipped pools are valid")
    }

    pub fn tagger(&self) -> &Tagger {
        &self.tagger
    }

    pub fn keywords(&self) -> &KeywordSet {
        &self.keywords
    }

    fn fill(
        &self,
        seed: &SeedTemplate,
        rng: &mut impl Rng,
    ) -> Result<Vec<(Slot, Filler)>, SynthError> {
        let lx = self.tagger.lexicons();
        let bools: Vec<String> = lx.bools().iter().map(|(s, _)| s.clone()).collect();
        let mut used_kw = Vec::new();
        let mut used_bool = Vec::new();
        let mut used_unit = Vec::new();
        let mut used_fmt = Vec::new();
        let mut used_num: Vec<u32> = Vec::new();
        let exhausted = |what: &str| SynthError::InvalidSeed {
            seed: seed.id.clone(),
            msg: format!("not enough distinct {what} fillers"),
        };
        let mut out = Vec::new();
        for slot in slots_in(&seed.template) {
            let filler = match slot.kind {
                SlotKind::Keyword => {
                    let k = pick_distinct(self.keywords.keywords(), &mut used_kw, rng)
                        .ok_or_else(|| exhausted("keyword"))?;
                    Filler {
                        surface: k.to_string(),
                        dsl: k.to_string(),
                    }
                }
                SlotKind::Num => {
                    let n = loop {
                        let n = rng.gen_range(0..=MAX_NUMBER);
                        if !used_num.contains(&n) {
                            break n;
                        }
                    };
                    used_num.push(n);
                    Filler {
                        surface: render_number(n, rng),
                        dsl: n.to_string(),
                    }
                }
                SlotKind::Version => {
                    let v = format!(
                        "{}.{}.{}",
                        rng.gen_range(1..=20),
                        rng.gen_range(0..=20),
                        rng.gen_range(0..=40)
                    );
                    Filler {
                        surface: v.clone(),
                        dsl: v,
                    }
                }
                SlotKind::Bool => {
                    let b = pick_distinct(&bools, &mut used_bool, rng)
                        .ok_or_else(|| exhausted("bool"))?;
                    let v = lx.bool_value(b).expect("lexicon entry");
                    Filler {
                        surface: b.to_string(),
                        dsl: v.to_string(),
                    }
                }
                SlotKind::Unit => {
                    let u = pick_distinct(lx.units(), &mut used_unit, rng)
                        .ok_or_else(|| exhausted("unit"))?;
                    Filler {
                        surface: u.to_string(),
                        dsl: u.to_string(),
                    }
                }
                SlotKind::Format => {
                    let f = pick_distinct(lx.formats(), &mut used_fmt, rng)
                        .ok_or_else(|| exhausted("format"))?;
                    Filler {
                        surface: f.to_string(),
                        dsl: dsl::print_value(&dsl::Value::FormatClass(f.to_string())),
                    }
                }
            };
            out.push((slot, filler));
        }
        Ok(out)
    }

    /// Fills slots until the concrete target is a valid specification.
    fn instantiate(
        &self,
        seed: &SeedTemplate,
        rng: &mut impl Rng,
    ) -> Result<(Vec<(Slot, Filler)>, Option<String>), SynthError> {
        for _ in 0..MAX_FILL_TRIES {
            let fills = self.fill(seed, rng)?;
            let Some(target) = &seed.target else {
                return Ok((fills, None));
            };
            let lookup = |s: &Slot| {
                fills
                    .iter()
                    .find(|(t, _)| t == s)
                    .map(|(_, f)| f.dsl.clone())
                    .unwrap_or_default()
            };
            match dsl::parse_spec(&substitute(target, lookup)) {
                Ok(spec) => return Ok((fills, Some(dsl::print_spec(&spec)))),
                Err(DslError::IntervalOrder { .. }) | Err(DslError::UnitMismatch { .. }) => {
                    continue
                }
                Err(source) => {
                    return Err(SynthError::TargetSyntax {
                        seed: seed.id.clone(),
                        source,
                    })
                }
            }
        }
        Err(SynthError::SlotRange {
            seed: seed.id.clone(),
            tries: MAX_FILL_TRIES,
        })
    }

    /// Concrete target of `seed` for the slot fillers `rng` would draw;
    /// `compose` with an identically seeded generator uses the same fillers.
    pub fn concrete_target(
        &self,
        seed: &SeedTemplate,
        rng: &mut impl Rng,
    ) -> Result<Option<String>, SynthError> {
        Ok(self.instantiate(seed, rng)?.1)
    }

    fn token_len(&self, text: &str) -> usize {
        let (tagged, _) = self.tagger.tag_text(text, &self.keywords);
        tokenize_tagged(&tagged).len() + 1
    }

    /// Composes a sample from any seed; positive seeds give labeled
    /// positives, negative seeds give negatives.
    pub fn compose(
        &self,
        seed: &SeedTemplate,
        id: impl Into<String>,
        rng: &mut impl Rng,
    ) -> Result<LabeledSample, SynthError> {
        let (fills, concrete) = self.instantiate(seed, rng)?;
        let sentence = substitute(&seed.template, |s| {
            fills
                .iter()
                .find(|(t, _)| t == s)
                .map(|(_, f)| f.surface.clone())
                .unwrap_or_default()
        });

        let n_distractors = rng.gen_range(0..=2usize);
        let picked: Vec<&String> = self
            .distractors
            .choose_multiple(rng, n_distractors)
            .collect();
        let n_before = rng.gen_range(0..=picked.len());
        let mut before: Vec<&str> = picked[..n_before].iter().map(|s| s.as_str()).collect();
        let mut after: Vec<&str> = picked[n_before..].iter().map(|s| s.as_str()).collect();
        let join = |b: &[&str], a: &[&str]| {
            let mut parts: Vec<&str> = b.to_vec();
            parts.push(&sentence);
            parts.extend_from_slice(a);
            parts.join(" ")
        };
        let mut text = join(&before, &after);
        while self.token_len(&text) > self.max_len {
            if after.pop().is_none() && before.pop().is_none() {
                return Err(SynthError::TooLong {
                    seed: seed.id.clone(),
                    tokens: self.token_len(&text),
                    limit: self.max_len,
                });
            }
            text = join(&before, &after);
        }

        let (tagged, tags) = self.tagger.tag_text(&text, &self.keywords);
        let mut target = Vec::new();
        if let (Some(pattern), Some(expected)) = (&seed.target, &concrete) {
            let mut missing = None;
            let tagged_target = substitute(pattern, |s| {
                let (_, f) = fills.iter().find(|(t, _)| t == s).expect("validated slots");
                let surface = match s.kind {
                    SlotKind::Keyword => f.surface.clone(),
                    _ => f.surface.to_ascii_lowercase(),
                };
                match tags.find(s.kind.tag_class(), &surface) {
                    Some(id) => id.token(),
                    None => {
                        missing.get_or_insert_with(|| s.to_string());
                        String::new()
                    }
                }
            });
            if let Some(slot) = missing {
                return Err(SynthError::SlotNotTagged {
                    seed: seed.id.clone(),
                    slot,
                });
            }
            target = split_spec_tokens(&tagged_target);
            let got = self.tagger.detag(&target, &tags).map_err(|e| SynthError::LabelMismatch {
                seed: seed.id.clone(),
                expected: expected.clone(),
                got: e.to_string(),
            })?;
            if &got != expected {
                return Err(SynthError::LabelMismatch {
                    seed: seed.id.clone(),
                    expected: expected.clone(),
                    got,
                });
            }
        }
        Ok(LabeledSample {
            id: id.into(),
            text: tagged,
            tags,
            label: seed.is_positive(),
            target,
            category: seed.category,
            extraction_type: seed.extraction_type,
            seed: seed.id.clone(),
        })
    }

    /// Positive sample from `seed` with a generator seeded by `rng_seed`.
    pub fn compose_positive(
        &self,
        seed: &SeedTemplate,
        rng_seed: u64,
    ) -> Result<LabeledSample, SynthError> {
        if !seed.is_positive() {
            return Err(SynthError::InvalidSeed {
                seed: seed.id.clone(),
                msg: "seed has no target".into(),
            });
        }
        self.compose(seed, format!("{}-{rng_seed}", seed.id), &mut sample_rng(rng_seed, 0))
    }

    /// Negative sample from a randomly chosen negative template.
    pub fn compose_negative(
        &self,
        negatives: &[SeedTemplate],
        rng_seed: u64,
    ) -> Result<LabeledSample, SynthError> {
        let mut rng = sample_rng(rng_seed, 0);
        let seed = negatives
            .iter()
            .filter(|s| !s.is_positive())
            .collect::<Vec<_>>()
            .choose(&mut rng)
            .copied()
            .ok_or_else(|| SynthError::InsufficientSeeds("no negative templates".into()))?;
        self.compose(seed, format!("{}-{rng_seed}", seed.id), &mut rng)
    }
}

/// How the test split relates to the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Train and test draw from the same seeds.
    BySample,
    /// This many positive seeds are reserved for the test split.
    HeldOutTemplates(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub positive_fraction: f64,
    pub rng_seed: u64,
    pub split: SplitMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 3000,
            n_test: 250,
            positive_fraction: 0.3,
            rng_seed: 42,
            split: SplitMode::BySample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub manifest: serde_json::Value,
}

/// Largest-remainder apportionment of `total` over `weights`; ties go to
/// the lower index.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rem: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (total * w % sum, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Seeds of each extraction type, in library order.
fn by_type(seeds: &[&SeedTemplate]) -> Vec<(ExtractionType, Vec<usize>)> {
    ExtractionType::ALL
        .iter()
        .map(|&t| {
            let idx = seeds
                .iter()
                .enumerate()
                .filter(|(_, s)| s.extraction_type == t)
                .map(|(i, _)| i)
                .collect();
            (t, idx)
        })
        .collect()
}

/// Per-sample seed plan for one split: positives stratified by type in
/// proportion to the positive seeds, round-robin over seeds within a type,
/// negatives using the same type shares.
fn plan_split<'a>(
    positives: &[&'a SeedTemplate],
    negatives: &[&'a SeedTemplate],
    n: usize,
    fraction: f64,
) -> Result<Vec<&'a SeedTemplate>, SynthError> {
    let n_pos = ((n as f64) * fraction).round() as usize;
    let n_neg = n - n_pos;
    let pos_types = by_type(positives);
    let weights: Vec<usize> = pos_types.iter().map(|(_, v)| v.len()).collect();
    let mut plan = Vec::with_capacity(n);
    for ((_, idx), count) in pos_types.iter().zip(apportion(n_pos, &weights)) {
        for j in 0..count {
            plan.push(positives[idx[j % idx.len()]]);
        }
    }
    let neg_types = by_type(negatives);
    for (((t, idx), count), w) in neg_types
        .iter()
        .zip(apportion(n_neg, &weights))
        .zip(&weights)
    {
        if count == 0 {
            continue;
        }
        if idx.is_empty() {
            // no negative template of this type: impossible to mirror the
            // positive type shares
            return Err(SynthError::InsufficientSeeds(format!(
                "{count} negatives of type {t} requested ({w} positive seeds) but no negative template has that type"
            )));
        }
        for j in 0..count {
            plan.push(negatives[idx[j % idx.len()]]);
        }
    }
    Ok(plan)
}

const TRAIN_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1 << 32;
const SHUFFLE_STREAM: u64 = 1 << 40;

fn compose_split(
    composer: &Composer,
    mut plan: Vec<&SeedTemplate>,
    cfg: &DatasetConfig,
    stream_base: u64,
    prefix: &str,
) -> Result<Vec<LabeledSample>, SynthError> {
    plan.shuffle(&mut sample_rng(cfg.rng_seed, SHUFFLE_STREAM + stream_base));
    plan.iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = sample_rng(cfg.rng_seed, stream_base + i as u64);
            composer.compose(seed, format!("{prefix}-{i:05}"), &mut rng)
        })
        .collect()
}

/// Builds train and test splits with a manifest of their class balance.
pub fn build_dataset(
    library: &SeedLibrary,
    composer: &Composer,
    cfg: &DatasetConfig,
) -> Result<Dataset, SynthError> {
    if !(cfg.positive_fraction > 0.0 && cfg.positive_fraction < 1.0) {
        return Err(SynthError::InvalidConfig(format!(
            "positive fraction {} is outside (0, 1)",
            cfg.positive_fraction
        )));
    }
    if cfg.n_train < 10 {
        return Err(SynthError::InvalidConfig(format!(
            "at least 10 training samples are required, got {}",
            cfg.n_train
        )));
    }
    if library.positives.is_empty() {
        return Err(SynthError::InsufficientSeeds("no positive seeds".into()));
    }
    let positives: Vec<&SeedTemplate> = library.positives.iter().collect();
    let negatives: Vec<&SeedTemplate> = library.negatives.iter().collect();
    let (train_pos, test_pos) = match cfg.split {
        SplitMode::BySample => (positives.clone(), positives.clone()),
        SplitMode::HeldOutTemplates(k) => {
            if k == 0 || k >= positives.len() {
                return Err(SynthError::InsufficientSeeds(format!(
                    "cannot hold out {k} of {} positive seeds",
                    positives.len()
                )));
            }
            let mut order: Vec<usize> = (0..positives.len()).collect();
            order.shuffle(&mut sample_rng(cfg.rng_seed, SHUFFLE_STREAM + 2));
            let held: BTreeSet<usize> = order[..k].iter().copied().collect();
            let (test, train): (Vec<_>, Vec<_>) = positives
                .iter()
                .enumerate()
                .partition(|(i, _)| held.contains(i));
            (
                train.into_iter().map(|(_, s)| *s).collect(),
                test.into_iter().map(|(_, s)| *s).collect(),
            )
        }
    };
    let train_plan = plan_split(&train_pos, &negatives, cfg.n_train, cfg.positive_fraction)?;
    let test_plan = plan_split(&test_pos, &negatives, cfg.n_test, cfg.positive_fraction)?;
    let train = compose_split(composer, train_plan, cfg, TRAIN_STREAM, "train")?;
    let test = compose_split(composer, test_plan, cfg, TEST_STREAM, "test")?;
    let manifest = manifest(library, cfg, &train, &test);
    Ok(Dataset {
        train,
        test,
        manifest,
    })
}

#[derive(Debug, Default, Serialize)]
struct ClassCounts {
    positive: usize,
    negative: usize,
}

#[derive(Debug, Default, Serialize)]
struct SplitCounts {
    total: usize,
    positive: usize,
    negative: usize,
    by_type: BTreeMap<String, ClassCounts>,
    by_category: BTreeMap<String, usize>,
}

/// Recounts class, type and category totals of a split.
fn count_split(samples: &[LabeledSample]) -> SplitCounts {
    let mut c = SplitCounts {
        total: samples.len(),
        ..Default::default()
    };
    for s in samples {
        let t = c.by_type.entry(s.extraction_type.to_string()).or_default();
        if s.label {
            c.positive += 1;
            t.positive += 1;
        } else {
            c.negative += 1;
            t.negative += 1;
        }
        if let Some(cat) = s.category {
            *c.by_category.entry(cat.to_string()).or_default() += 1;
        }
    }
    c
}

/// Manifest JSON: configuration plus per-split class, type and category
/// counts.
pub fn manifest(
    library: &SeedLibrary,
    cfg: &DatasetConfig,
    train: &[LabeledSample],
    test: &[LabeledSample],
) -> serde_json::Value {
    serde_json::json!({
        "rng_seed": cfg.rng_seed,
        "positive_fraction": cfg.positive_fraction,
        "positive_fraction_note": "assumed default; real spec-bearing text ratio is not known",
        "split": cfg.split,
        "seeds": {
            "positive": library.positives.len(),
            "negative": library.negatives.len(),
        },
        "train": count_split(train),
        "test": count_split(test),
    })
}

pub fn write_jsonl(path: &Path, samples: &[LabeledSample]) -> Result<(), SynthError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("samples serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledSample>, SynthError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledSample = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if s.label == s.target.is_empty() {
            return Err(SynthError::Parse {
                line: i + 1,
                msg: "label disagrees with target presence".into(),
            });
        }
        out.push(s);
    }
    Ok(out)
}
