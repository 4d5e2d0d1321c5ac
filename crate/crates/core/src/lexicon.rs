//! Surface-form lexicons for the `<bool>`, `<unit>` and `<format>` tag
//! classes. Defaults ship in `data/lexicon/`; a directory holding
//! `bool.lex`, `unit.lex` and `format.lex` can replace them.

use std::fs;
use std::path::Path;

use thiserror::Error;

const DEFAULT_BOOL: &str = include_str!("../data/lexicon/bool.lex");
const DEFAULT_UNIT: &str = include_str!("../data/lexicon/unit.lex");
const DEFAULT_FORMAT: &str = include_str!("../data/lexicon/format.lex");

/// Environment variable naming a lexicon directory.
pub const LEXICON_DIR_ENV: &str = "SPECSYN_LEXICON_DIR";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicons {
    bools: Vec<(String, bool)>,
    units: Vec<String>,
    formats: Vec<String>,
}

fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_bools(file: &str, text: &str) -> Result<Vec<(String, bool)>, LexiconError> {
    entries(text)
        .map(|(line, l)| {
            let malformed = |msg: &str| LexiconError::Malformed {
                file: file.to_string(),
                line,
                msg: msg.to_string(),
            };
            let (surface, value) = l
                .split_once('=')
                .ok_or_else(|| malformed("expected `surface = true|false`"))?;
            let value = match value.trim() {
                "true" => true,
                "false" => false,
                _ => return Err(malformed("polarity must be `true` or `false`")),
            };
            let surface = surface.trim().to_ascii_lowercase();
            if surface.is_empty() {
                return Err(malformed("empty surface"));
            }
            Ok((surface, value))
        })
        .collect()
}

fn parse_list(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (_, l) in entries(text) {
        let l = l.to_ascii_lowercase();
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

impl Default for Lexicons {
    fn default() -> Self {
        Lexicons::from_sources(DEFAULT_BOOL, DEFAULT_UNIT, DEFAULT_FORMAT)
            .expect("shipped lexicons are well formed")
    }
}

impl Lexicons {
    pub fn from_sources(bools: &str, units: &str, formats: &str) -> Result<Self, LexiconError> {
        Ok(Lexicons {
            bools: parse_bools("bool.lex", bools)?,
            units: parse_list(units),
            formats: parse_list(formats),
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self, LexiconError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|source| LexiconError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Self::from_sources(&read("bool.lex")?, &read("unit.lex")?, &read("format.lex")?)
    }

    /// Explicit directory, else `SPECSYN_LEXICON_DIR`, else the shipped set.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, LexiconError> {
        if let Some(dir) = explicit {
            return Self::load_dir(dir);
        }
        match std::env::var_os(LEXICON_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::load_dir(Path::new(&dir)),
            _ => Ok(Self::default()),
        }
    }

    pub fn bools(&self) -> &[(String, bool)] {
        &self.bools
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn formats(&self) -> &[String] {
        &self.formats
    }

    /// Truth value of a boolean surface form, case-insensitive.
    pub fn bool_value(&self, surface: &str) -> Option<bool> {
        let s = surface.trim().to_ascii_lowercase();
        self.bools.iter().find(|(b, _)| *b == s).map(|(_, v)| *v)
    }
}
