//! Command-line entry point: `ingest`, `compose`, `train`, `synthesize`,
//! `eval` and `check`.
//!
//! Every subcommand that writes files also writes
//! `<subcommand>.effective.json` next to its outputs, recording the resolved
//! arguments. Logs go to standard error. Input and I/O errors end the run
//! with status 2 and a one-line diagnostic.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::conformance::{self, ConfigFormat, ConformanceError};
use crate::corpus::{self, CorpusError, DocumentFormat, KeywordSet};
use crate::dsl::{self, DslError};
use crate::eval::{self, EvalError, EvaluationReport};
use crate::lexicon::{LexiconError, Lexicons, LEXICON_DIR_ENV};
use crate::model::{
    self, LossCoefficients, ModelConfig, ModelError, SpecModel, TrainConfig, Vocab,
    DEFAULT_MAX_GEN_LEN,
};
use crate::synthdata::{self, Composer, DatasetConfig, SeedLibrary, SplitMode, SynthError};
use crate::tagger::Tagger;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConformanceError,
    },
    #[error("{path}:{line}: {source}")]
    SpecFile {
        path: String,
        line: usize,
        #[source]
        source: DslError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "specsyn", version, about = "Synthesize configuration specifications from documentation")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a document into keyword-bearing candidate texts.
    Ingest(IngestArgs),
    /// Compose labeled training and test sets from seed templates.
    Compose(ComposeArgs),
    /// Train the detection and generation model.
    Train(TrainArgs),
    /// Extract specifications from a document with a trained model.
    Synthesize(SynthesizeArgs),
    /// Score a trained model on a labeled dataset.
    Eval(EvalArgs),
    /// Check a configuration file against specifications.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DocFormat {
    Plain,
    Html,
    Comments,
}

impl From<DocFormat> for DocumentFormat {
    fn from(f: DocFormat) -> Self {
        match f {
            DocFormat::Plain => DocumentFormat::PlainText,
            DocFormat::Html => DocumentFormat::HtmlStripped,
            DocFormat::Comments => DocumentFormat::SourceComments,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CfgFormat {
    Kv,
    Ini,
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    format: DocFormat,
    #[arg(long)]
    keywords: PathBuf,
    /// Largest number of sentences in a multi-sentence candidate.
    #[arg(long, default_value_t = NonZeroUsize::new(3).unwrap())]
    window: NonZeroUsize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ComposeArgs {
    /// Seed templates (JSONL); defaults to the shipped set.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Distractor sentences, one per line; defaults to the shipped set.
    #[arg(long)]
    distractors: Option<PathBuf>,
    /// Keywords to fill `{kw}` slots; defaults to the shipped pool.
    #[arg(long)]
    keywords: Option<PathBuf>,
    #[arg(long)]
    lexicons: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    #[arg(long, default_value_t = 0.3)]
    pos_frac: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    #[arg(long, default_value_t = 250)]
    test_n: usize,
    /// Reserve this many positive seeds for the test split.
    #[arg(long)]
    held_out_templates: Option<usize>,
    /// Maximum model input length, `[CLS]` included.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, default_value_t = 50)]
    head_hidden: usize,
    #[arg(long, default_value_t = 20)]
    gen_hidden: usize,
    #[arg(long, default_value_t = 32)]
    gen_embed: usize,
    #[arg(long, default_value_t = 1.0)]
    coef_detection: f64,
    #[arg(long, default_value_t = 1.0)]
    coef_generation: f64,
    #[arg(long, default_value_t = 1.0)]
    coef_category: f64,
}

#[derive(Debug, Args, Serialize)]
struct SynthesizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    format: DocFormat,
    #[arg(long)]
    keywords: PathBuf,
    #[arg(long)]
    lexicons: Option<PathBuf>,
    #[arg(long, default_value_t = NonZeroUsize::new(3).unwrap())]
    window: NonZeroUsize,
    #[arg(long, default_value_t = DEFAULT_MAX_GEN_LEN)]
    max_gen_len: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lexicons: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Plain-text tables by type and category.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CheckArgs {
    #[arg(long)]
    specs: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "kv")]
    format: CfgFormat,
    #[arg(long)]
    lexicons: Option<PathBuf>,
    /// Findings as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct Effective<'a, A: Serialize> {
    subcommand: &'a str,
    version: &'a str,
    args: &'a A,
    lexicons: String,
}

fn lexicon_source(explicit: Option<&Path>) -> String {
    match explicit {
        Some(p) => format!("flag: {}", p.display()),
        None => match std::env::var_os(LEXICON_DIR_ENV) {
            Some(d) if !d.is_empty() => format!("env: {}", Path::new(&d).display()),
            _ => "shipped".to_string(),
        },
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_effective<A: Serialize>(
    subcommand: &str,
    args: &A,
    lexicons: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let path = parent_dir(out).join(format!("{subcommand}.effective.json"));
    write_json(
        &path,
        &Effective {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            args,
            lexicons: lexicon_source(lexicons),
        },
    )
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(io_err(path))
}

fn ingest(a: &IngestArgs) -> Result<i32, CliError> {
    let keywords = KeywordSet::load(&a.keywords)?;
    let sentences = corpus::ingest(&read(&a.input)?, a.format.into())?;
    let doc_id = a.input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let candidates = corpus::extract_candidates(&doc_id, &sentences, &keywords, a.window);
    let mut out = String::new();
    for c in &candidates {
        out.push_str(&serde_json::to_string(c).expect("serializable"));
        out.push('\n');
    }
    write_file(&a.out, out.as_bytes())?;
    write_effective("ingest", a, None, &a.out)?;
    log::info!("{} sentences, {} candidates", sentences.len(), candidates.len());
    Ok(0)
}

fn compose(a: &ComposeArgs) -> Result<i32, CliError> {
    let library = match &a.seeds {
        Some(p) => SeedLibrary::load(p)?,
        None => SeedLibrary::shipped(),
    };
    let distractors = match &a.distractors {
        Some(p) => synthdata::load_distractors(p)?,
        None => synthdata::shipped_distractors(),
    };
    let keywords = match &a.keywords {
        Some(p) => KeywordSet::load(p)?,
        None => synthdata::shipped_keywords(),
    };
    let tagger = Tagger::new(Lexicons::resolve(a.lexicons.as_deref())?);
    let composer = Composer::new(tagger, keywords, distractors, a.max_len)?;
    let cfg = DatasetConfig {
        n_train: a.n,
        n_test: a.test_n,
        positive_fraction: a.pos_frac,
        rng_seed: a.seed,
        split: a.held_out_templates.map_or(SplitMode::BySample, SplitMode::HeldOutTemplates),
    };
    let ds = synthdata::build_dataset(&library, &composer, &cfg)?;
    synthdata::write_jsonl(&a.out, &ds.train)?;
    synthdata::write_jsonl(&a.test_out, &ds.test)?;
    write_json(&parent_dir(&a.out).join("compose.manifest.json"), &ds.manifest)?;
    write_effective("compose", a, a.lexicons.as_deref(), &a.out)?;
    log::info!("{} training and {} test samples", ds.train.len(), ds.test.len());
    Ok(0)
}

fn train(a: &TrainArgs) -> Result<i32, CliError> {
    let samples = synthdata::read_jsonl(&a.data)?;
    let vocab = Vocab::build(&samples);
    let data = model::prepare(&samples, &vocab);
    if let Some(e) = data.iter().find(|e| e.input.len() > a.max_len) {
        return Err(CliError::Invalid(format!(
            "{}: an input has {} tokens, more than --max-len {}",
            a.data.display(),
            e.input.len(),
            a.max_len
        )));
    }
    if a.heads == 0 || a.d_model % a.heads != 0 {
        return Err(CliError::Invalid(format!(
            "--d-model {} is not divisible by --heads {}",
            a.d_model, a.heads
        )));
    }
    let config = ModelConfig {
        d_model: a.d_model,
        n_blocks: a.blocks,
        n_heads: a.heads,
        max_len: a.max_len,
        d_pool: a.d_model,
        head_hidden: a.head_hidden,
        gen_hidden: a.gen_hidden,
        gen_embed: a.gen_embed,
    };
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        coefficients: LossCoefficients {
            detection: a.coef_detection,
            generation: a.coef_generation,
            category: a.coef_category,
        },
        ..TrainConfig::default()
    };
    let mut net = SpecModel::new(&config, vocab.len(), a.seed);
    log::info!(
        "{} samples, vocabulary {}, {} parameters",
        data.len(),
        vocab.len(),
        model::params::param_count(&net)
    );
    let logs = model::train(&mut net, &data, &tc, |_| {})?;
    model::save(&net, &vocab, &a.out)?;
    if let Some(p) = &a.log {
        let mut csv = String::from("epoch,loss,detection,generation,category\n");
        for l in &logs {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                l.epoch, l.loss, l.detection, l.generation, l.category
            ));
        }
        write_file(p, csv.as_bytes())?;
    }
    write_effective("train", a, None, &a.out)?;
    Ok(0)
}

#[derive(Serialize)]
struct SynthItem {
    source: String,
    #[serde(rename = "type")]
    extraction_type: corpus::ExtractionType,
    tagged: String,
    p_spec: f64,
    detected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<dsl::Category>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct SynthReport {
    candidates: usize,
    detections: usize,
    emitted: usize,
    unparseable: usize,
    items: Vec<SynthItem>,
}

fn synthesize(a: &SynthesizeArgs) -> Result<i32, CliError> {
    let (net, vocab) = model::load(&a.model)?;
    let keywords = KeywordSet::load(&a.keywords)?;
    let tagger = Tagger::new(Lexicons::resolve(a.lexicons.as_deref())?);
    let sentences = corpus::ingest(&read(&a.input)?, a.format.into())?;
    let doc_id = a.input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let candidates = corpus::extract_candidates(&doc_id, &sentences, &keywords, a.window);
    let max_len = net.config().max_len;
    let mut specs: Vec<String> = Vec::new();
    let mut report = SynthReport {
        candidates: candidates.len(),
        detections: 0,
        emitted: 0,
        unparseable: 0,
        items: Vec::new(),
    };
    for c in &candidates {
        let tagged = tagger.tag(c, &keywords);
        let mut input = vocab.encode_input(&tagged.text);
        if input.len() > max_len {
            log::warn!("{}: {} tokens, truncated to {max_len}", c.source, input.len());
            input.truncate(max_len);
        }
        let p = net.predict(&input, a.max_gen_len)?;
        let mut item = SynthItem {
            source: c.source.clone(),
            extraction_type: c.extraction_type,
            tagged: tagged.text.clone(),
            p_spec: p.detection[1],
            detected: p.is_spec(),
            category: None,
            generated: None,
            spec: None,
            error: None,
        };
        if let Some(g) = &p.generation {
            report.detections += 1;
            item.category = Some(p.category());
            let tokens: Vec<String> = g.ids.iter().map(|&i| vocab.token(i).to_string()).collect();
            match tagger.detag(&tokens, &tagged.tags) {
                Ok(spec) => {
                    if !specs.contains(&spec) {
                        specs.push(spec.clone());
                    }
                    item.spec = Some(spec);
                }
                Err(e) => {
                    log::warn!("{}: generation not usable: {e}", c.source);
                    report.unparseable += 1;
                    item.error = Some(e.to_string());
                }
            }
            item.generated = Some(tokens);
        }
        report.items.push(item);
    }
    report.emitted = specs.len();
    let mut text = String::new();
    for s in &specs {
        text.push_str(s);
        text.push('\n');
    }
    write_file(&a.out, text.as_bytes())?;
    if let Some(r) = &a.report {
        write_json(r, &report)?;
    }
    write_effective("synthesize", a, a.lexicons.as_deref(), &a.out)?;
    log::info!(
        "{} candidates, {} detections, {} specifications",
        report.candidates,
        report.detections,
        report.emitted
    );
    Ok(0)
}

fn evaluate(a: &EvalArgs) -> Result<i32, CliError> {
    let (net, vocab) = model::load(&a.model)?;
    let tagger = Tagger::new(Lexicons::resolve(a.lexicons.as_deref())?);
    let samples = synthdata::read_jsonl(&a.data)?;
    let records = eval::evaluate_model(&net, &vocab, &tagger, &samples)?;
    let report = EvaluationReport::from_records(&records)?;
    write_json(&a.report, &report)?;
    if let Some(t) = &a.table {
        write_file(t, report.render_text().as_bytes())?;
    }
    write_effective("eval", a, a.lexicons.as_deref(), &a.report)?;
    log::info!(
        "precision {:.3} recall {:.3} F1 {:.3}, generation exact match {:.3}",
        report.precision,
        report.recall,
        report.f1,
        report.generation.exact_match
    );
    Ok(0)
}

fn check(a: &CheckArgs) -> Result<i32, CliError> {
    let text = String::from_utf8(read(&a.specs)?).map_err(|e| {
        CliError::Invalid(format!(
            "{}: not valid UTF-8 at byte {}",
            a.specs.display(),
            e.utf8_error().valid_up_to()
        ))
    })?;
    let specs = dsl::parse_spec_file(&text).map_err(|(line, source)| CliError::SpecFile {
        path: a.specs.display().to_string(),
        line,
        source,
    })?;
    let format = match a.format {
        CfgFormat::Kv => ConfigFormat::KeyValue,
        CfgFormat::Ini => ConfigFormat::Ini,
    };
    let (config, malformed) =
        conformance::parse_config(&read(&a.config)?, format).map_err(|source| CliError::Config {
            path: a.config.display().to_string(),
            source,
        })?;
    for m in &malformed {
        log::warn!("{}:{}: {}", a.config.display(), m.line, m.reason);
    }
    let lexicons = Lexicons::resolve(a.lexicons.as_deref())?;
    let findings = conformance::check(&config, &specs, &lexicons);
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(conformance::render_table(&findings).as_bytes());
    if let Some(r) = &a.report {
        write_json(r, &findings)?;
        write_effective("check", a, a.lexicons.as_deref(), r)?;
    }
    Ok(conformance::exit_status(&findings))
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv` and runs the subcommand; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("specsyn: {}", first.trim_start_matches("error: ").trim());
            return 2;
        }
        Err(e) => {
            let _ = e.print();
            return 0;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Compose(a) => compose(a),
        Command::Train(a) => train(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Eval(a) => evaluate(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("specsyn: error: {msg}");
            2
        }
    }
}
