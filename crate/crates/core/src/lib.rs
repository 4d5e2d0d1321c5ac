//! Synthesis of configuration specifications from natural-language text.
//!
//! The pipeline runs ingest → tag → detect → generate → detag, producing rules
//! in a small DSL that can then be checked against real configuration files.

pub mod dsl;
pub mod corpus;
pub mod lexicon;
pub mod tagger;
pub mod synthdata;
pub mod model;
pub mod eval;
pub mod conformance;
pub mod cli;
mod text;

pub use text::{normalize_number, parse_prose_number};
