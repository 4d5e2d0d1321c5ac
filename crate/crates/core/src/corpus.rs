//! Document ingestion and keyword-filtered candidate extraction.
//!
//! Documents are split into sentences, and only sentences that mention a
//! configuration keyword survive. Each surviving sentence yields a `Simple`
//! candidate, plus a `Complex` candidate covering it and up to `window - 1`
//! following sentences.

use std::collections::HashSet;
use std::fmt;
use std::num::NonZeroUsize;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{boundary_after, boundary_before};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document is not valid UTF-8 (at byte {0})")]
    Decode(usize),
    #[error("document contains no text")]
    EmptyDocument,
    #[error("keyword set is empty")]
    EmptyKeywordSet,
    #[error("duplicate keyword {0:?}")]
    DuplicateKeyword(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExtractionType {
    Simple,
    #[serde(rename = "Complex_Single")]
    ComplexSingle,
    #[serde(rename = "Complex_Multi")]
    ComplexMulti,
}

impl ExtractionType {
    pub const ALL: [ExtractionType; 3] = [
        ExtractionType::Simple,
        ExtractionType::ComplexSingle,
        ExtractionType::ComplexMulti,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionType::Simple => "Simple",
            ExtractionType::ComplexSingle => "Complex_Single",
            ExtractionType::ComplexMulti => "Complex_Multi",
        }
    }

    pub fn is_complex(self) -> bool {
        self != ExtractionType::Simple
    }
}

impl fmt::Display for ExtractionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    PlainText,
    HtmlStripped,
    SourceComments,
}

impl FromStr for DocumentFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" | "text" => Ok(DocumentFormat::PlainText),
            "html" => Ok(DocumentFormat::HtmlStripped),
            "comments" => Ok(DocumentFormat::SourceComments),
            other => Err(format!("unknown document format {other:?}")),
        }
    }
}

/// The configuration parameter names of one piece of software.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSet {
    software: String,
    keywords: Vec<String>,
    lowered: Vec<String>,
}

impl KeywordSet {
    pub fn new(
        software: impl Into<String>,
        keywords: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut kws = Vec::new();
        for k in keywords {
            let k: String = k.into();
            let k = k.trim().to_string();
            if k.is_empty() {
                continue;
            }
            if !seen.insert(k.clone()) {
                return Err(CorpusError::DuplicateKeyword(k));
            }
            kws.push(k);
        }
        if kws.is_empty() {
            return Err(CorpusError::EmptyKeywordSet);
        }
        let lowered = kws.iter().map(|k| k.to_ascii_lowercase()).collect();
        Ok(KeywordSet {
            software: software.into(),
            keywords: kws,
            lowered,
        })
    }

    /// Parses a keyword file: one keyword per line, `#` comments allowed.
    pub fn parse(software: impl Into<String>, text: &str) -> Result<Self, CorpusError> {
        let kws = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(software, kws)
    }

    /// Loads a keyword file; the software name is the file stem.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let software = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(software, &text)
    }

    pub fn software(&self) -> &str {
        &self.software
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// Longest keyword occurring at byte `pos` of the lowercased text,
    /// returned as (canonical keyword, match length). A `--` prefix
    /// immediately at `pos` is consumed as part of the match.
    pub(crate) fn match_at(&self, lowered: &[u8], pos: usize) -> Option<(&str, usize)> {
        let (start, prefix) = if lowered[pos..].starts_with(b"--") {
            (pos + 2, 2)
        } else {
            (pos, 0)
        };
        if start >= lowered.len() || (prefix == 0 && !boundary_before(lowered, pos)) {
            return None;
        }
        if prefix == 2 && !boundary_before(lowered, pos) {
            return None;
        }
        let mut best: Option<(&str, usize)> = None;
        for (canon, low) in self.keywords.iter().zip(&self.lowered) {
            let lb = low.as_bytes();
            if lowered[start..].starts_with(lb)
                && boundary_after(lowered, start + lb.len())
                && best.is_none_or(|(_, n)| prefix + lb.len() > n)
            {
                best = Some((canon.as_str(), prefix + lb.len()));
            }
        }
        best
    }

    /// Canonical keywords mentioned in `text`, in order of first occurrence.
    pub fn find_in(&self, text: &str) -> Vec<String> {
        let lowered = text.to_ascii_lowercase();
        let bytes = lowered.as_bytes();
        let mut out: Vec<String> = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            if let Some((kw, len)) = self.match_at(bytes, pos) {
                if !out.iter().any(|k| k == kw) {
                    out.push(kw.to_string());
                }
                pos += len;
            } else {
                pos += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateText {
    pub text: String,
    /// Document id plus sentence range, e.g. `manual.txt#4` or `manual.txt#4-6`.
    pub source: String,
    #[serde(rename = "type")]
    pub extraction_type: ExtractionType,
    pub keywords: Vec<String>,
}

/// Decodes and splits a document into sentences.
pub fn ingest(document: &[u8], format: DocumentFormat) -> Result<Vec<String>, CorpusError> {
    let text = std::str::from_utf8(document).map_err(|e| CorpusError::Decode(e.valid_up_to()))?;
    let sentences = match format {
        DocumentFormat::PlainText => split_sentences(text),
        DocumentFormat::HtmlStripped => split_sentences(&strip_html(text)),
        DocumentFormat::SourceComments => extract_comments(text)
            .iter()
            .flat_map(|c| split_sentences(c))
            .collect(),
    };
    if sentences.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    Ok(sentences)
}

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "fig.", "no.", "approx.", "eq.", "sec.", "ch.", "vol.",
    "mr.", "ms.", "dr.", "st.", "resp.", "incl.", "max.", "min.",
];

fn is_abbreviation(sentence_so_far: &str) -> bool {
    let word = sentence_so_far
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits prose into sentences. A sentence ends at `.`, `?` or `!` that is
/// followed by whitespace and a capital letter, or by the end of a
/// paragraph. Blank lines always end a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let normalized = text.replace("\r\n", "\n");
    for para in normalized.split("\n\n") {
        let words: Vec<&str> = para.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let flat = words.join(" ");
        let chars: Vec<char> = flat.chars().collect();
        let mut cur = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            cur.push(c);
            i += 1;
            if !matches!(c, '.' | '?' | '!') {
                continue;
            }
            while i < chars.len() && matches!(chars[i], '"' | '\'' | ')' | ']') {
                cur.push(chars[i]);
                i += 1;
            }
            let at_end = i >= chars.len();
            let next_starts_sentence = i + 1 < chars.len()
                && chars[i] == ' '
                && (chars[i + 1].is_uppercase() || matches!(chars[i + 1], '"' | '(' | '\''));
            if at_end || (next_starts_sentence && !(c == '.' && is_abbreviation(&cur))) {
                let s = cur.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                cur.clear();
            }
        }
        let s = cur.trim().to_string();
        if !s.is_empty() {
            out.push(s);
        }
    }
    out
}

const BLOCK_TAGS: &[&str] = &[
    "p", "br", "div", "li", "ul", "ol", "tr", "td", "th", "table", "h1", "h2", "h3", "h4", "h5",
    "h6", "pre", "dt", "dd", "dl", "section", "article", "blockquote", "hr", "title",
];

/// Removes tags (dropping `<script>`/`<style>` bodies and comments) and
/// decodes entities. Block-level tags become paragraph breaks.
pub fn strip_html(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let lower = html.to_ascii_lowercase();
    let mut i = 0;
    let bytes = html.as_bytes();
    while i < bytes.len() {
        if bytes[i] != b'<' {
            let next = html[i..].find('<').map_or(html.len(), |n| i + n);
            out.push_str(&decode_entities(&html[i..next]));
            i = next;
            continue;
        }
        if lower[i..].starts_with("<!--") {
            i = lower[i..].find("-->").map_or(html.len(), |n| i + n + 3);
            continue;
        }
        let close = match html[i..].find('>') {
            Some(n) => i + n,
            None => {
                out.push_str(&decode_entities(&html[i..]));
                break;
            }
        };
        let tag = lower[i + 1..close].trim_start_matches('/');
        let name: String = tag
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect();
        i = close + 1;
        if (name == "script" || name == "style") && !lower[..close].ends_with('/') {
            let end_tag = format!("</{name}");
            i = lower[i..]
                .find(&end_tag)
                .and_then(|n| lower[i + n..].find('>').map(|m| i + n + m + 1))
                .unwrap_or(html.len());
            continue;
        }
        if BLOCK_TAGS.contains(&name.as_str()) {
            out.push_str("\n\n");
        }
    }
    out
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest.find(';').filter(|&n| n <= 10).and_then(|semi| {
            let ent = &rest[1..semi];
            let ch = match ent {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ => ent
                    .strip_prefix("#x")
                    .or_else(|| ent.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| ent.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommentKind {
    Block,
    Line,
}

#[derive(Debug, Clone)]
struct RawComment {
    kind: CommentKind,
    body: String,
    start_line: usize,
    end_line: usize,
}

fn scan_comments(src: &str) -> Vec<RawComment> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let count_lines = |s: &[u8]| s.iter().filter(|&&c| c == b'\n').count();
    while i < b.len() {
        match b[i] {
            b'\n' => {
                line += 1;
                i += 1;
            }
            q @ (b'"' | b'\'') => {
                i += 1;
                while i < b.len() && b[i] != q && b[i] != b'\n' {
                    i += if b[i] == b'\\' { 2 } else { 1 };
                }
                if i < b.len() && b[i] == q {
                    i += 1;
                }
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                let start = i + 2;
                let end = src[start..].find("*/").map_or(b.len(), |n| start + n);
                let body = &src[start..end];
                let lines = count_lines(body.as_bytes());
                out.push(RawComment {
                    kind: CommentKind::Block,
                    body: body.to_string(),
                    start_line: line,
                    end_line: line + lines,
                });
                line += lines;
                i = (end + 2).min(b.len());
            }
            b'/' if b.get(i + 1) == Some(&b'/') => {
                let start = i + 2;
                let end = src[start..].find('\n').map_or(b.len(), |n| start + n);
                out.push(RawComment {
                    kind: CommentKind::Line,
                    body: src[start..end].to_string(),
                    start_line: line,
                    end_line: line,
                });
                i = end;
            }
            b'#' if matches!(b.get(i + 1), None | Some(b' ' | b'\t' | b'\n' | b'#' | b'\r')) => {
                let start = i + 1;
                let end = src[start..].find('\n').map_or(b.len(), |n| start + n);
                out.push(RawComment {
                    kind: CommentKind::Line,
                    body: src[start..end].to_string(),
                    start_line: line,
                    end_line: line,
                });
                i = end;
            }
            _ => i += 1,
        }
    }
    out
}

/// Raw comment bodies in source order, without delimiters or cleanup.
pub fn comment_bodies(src: &str) -> Vec<String> {
    scan_comments(src).into_iter().map(|c| c.body).collect()
}

const CODE_PUNCT: &[char] = &[
    ';', '{', '}', '(', ')', '[', ']', '=', '<', '>', '&', '|', '+', '*', '/', '!', '%', '^', '~',
    '#', '\\',
];

/// Share of non-whitespace characters that are code punctuation.
pub fn code_punctuation_density(line: &str) -> f64 {
    let mut total = 0usize;
    let mut punct = 0usize;
    for c in line.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if CODE_PUNCT.contains(&c) {
            punct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        punct as f64 / total as f64
    }
}

fn clean_comment_line(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['*', '/', '!', '#'])
        .trim()
}

/// Prose comments from source code. Adjacent line comments are merged into
/// one text; lines that look like commented-out code (punctuation density
/// above 40%) are dropped.
pub fn extract_comments(src: &str) -> Vec<String> {
    let raw = scan_comments(src);
    let mut groups: Vec<Vec<&RawComment>> = Vec::new();
    for c in &raw {
        let merge = c.kind == CommentKind::Line
            && groups.last().is_some_and(|g| {
                let prev = g[g.len() - 1];
                prev.kind == CommentKind::Line && prev.end_line + 1 == c.start_line
            });
        if merge {
            groups.last_mut().expect("checked non-empty").push(c);
        } else {
            groups.push(vec![c]);
        }
    }
    groups
        .into_iter()
        .filter_map(|g| {
            let lines: Vec<&str> = g
                .iter()
                .flat_map(|c| c.body.lines())
                .map(clean_comment_line)
                .filter(|l| !l.is_empty() && code_punctuation_density(l) <= 0.4)
                .collect();
            (!lines.is_empty()).then(|| lines.join(" "))
        })
        .collect()
}

/// Keyword-filtered candidate texts for one document.
pub fn extract_candidates(
    doc_id: &str,
    sentences: &[String],
    keywords: &KeywordSet,
    window: NonZeroUsize,
) -> Vec<CandidateText> {
    let window = window.get();
    let per_sentence: Vec<Vec<String>> = sentences.iter().map(|s| keywords.find_in(s)).collect();
    let mut out = Vec::new();
    for (i, kws) in per_sentence.iter().enumerate() {
        if kws.is_empty() {
            continue;
        }
        out.push(CandidateText {
            text: sentences[i].clone(),
            source: format!("{doc_id}#{i}"),
            extraction_type: ExtractionType::Simple,
            keywords: kws.clone(),
        });
        let end = (i + window).min(sentences.len());
        if end - i >= 2 {
            let mut all: Vec<String> = Vec::new();
            for k in per_sentence[i..end].iter().flatten() {
                if !all.contains(k) {
                    all.push(k.clone());
                }
            }
            let extraction_type = if all.len() >= 2 {
                ExtractionType::ComplexMulti
            } else {
                ExtractionType::ComplexSingle
            };
            out.push(CandidateText {
                text: sentences[i..end].join(" "),
                source: format!("{doc_id}#{i}-{}", end - 1),
                extraction_type,
                keywords: all,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kws(list: &[&str]) -> KeywordSet {
        KeywordSet::new("test", list.iter().copied()).unwrap()
    }

    fn nz(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    #[test]
    fn two_sentences() {
        assert_eq!(
            ingest(b"Set a. Then b.", DocumentFormat::PlainText).unwrap(),
            vec!["Set a.", "Then b."]
        );
    }

    #[test]
    fn version_dots_do_not_split() {
        assert_eq!(
            split_sentences("See page 157 for details of MySQL 11.7.8"),
            vec!["See page 157 for details of MySQL 11.7.8"]
        );
        assert_eq!(
            split_sentences("Use a buffer, e.g. The default one. Next."),
            vec!["Use a buffer, e.g. The default one.", "Next."]
        );
    }

    #[test]
    fn lowercase_after_period_does_not_split() {
        assert_eq!(split_sentences("The file foo.cnf is read. ok"), vec![
            "The file foo.cnf is read. ok"
        ]);
    }

    #[test]
    fn source_comments() {
        assert_eq!(
            ingest(b"/* must be > 0 */ int x; // tmp", DocumentFormat::SourceComments).unwrap(),
            vec!["must be > 0", "tmp"]
        );
    }

    #[test]
    fn commented_out_code_is_dropped() {
        let src = "// x = f(a);\n// The limit applies per thread.\nint y;\n";
        assert_eq!(extract_comments(src), vec!["The limit applies per thread."]);
    }

    #[test]
    fn comment_markers_inside_strings_are_ignored() {
        let src = "url = \"http://example.com\"; /* real */\n#include <x.h>\n# shell note\n";
        assert_eq!(comment_bodies(src), vec![" real ", " shell note"]);
    }

    #[test]
    fn block_comment_cleanup() {
        let src = "/**\n * The cache size.\n * Must be positive.\n */";
        assert_eq!(
            ingest(src.as_bytes(), DocumentFormat::SourceComments).unwrap(),
            vec!["The cache size.", "Must be positive."]
        );
    }

    #[test]
    fn html_is_stripped() {
        let html = "<html><head><style>p{}</style></head><body><p>Set <b>max_rows</b> &gt; 2.</p><p>Done &amp; dusted</p><script>var a=1;</script></body></html>";
        assert_eq!(
            ingest(html.as_bytes(), DocumentFormat::HtmlStripped).unwrap(),
            vec!["Set max_rows > 2.", "Done & dusted"]
        );
    }

    #[test]
    fn decode_and_empty_errors() {
        assert!(matches!(
            ingest(&[0x66, 0xff], DocumentFormat::PlainText),
            Err(CorpusError::Decode(1))
        ));
        assert!(matches!(
            ingest(b"  \n\n ", DocumentFormat::PlainText),
            Err(CorpusError::EmptyDocument)
        ));
    }

    #[test]
    fn keyword_matching() {
        let set = kws(&["user_port", "ssl-ca", "plugin"]);
        assert_eq!(
            set.find_in("Use --ssl-ca with USER_PORT. The --plugin prefix."),
            vec!["ssl-ca", "user_port", "plugin"]
        );
        assert!(set.find_in("the user_ports list").is_empty());
        assert!(set.find_in("my-plugin here").is_empty());
    }

    #[test]
    fn keyword_set_invariants() {
        assert!(matches!(
            KeywordSet::new("x", Vec::<String>::new()),
            Err(CorpusError::EmptyKeywordSet)
        ));
        assert!(matches!(
            KeywordSet::new("x", ["a", "a"]),
            Err(CorpusError::DuplicateKeyword(_))
        ));
        assert!(KeywordSet::new("x", ["a", "A"]).is_ok());
    }

    #[test]
    fn no_keywords_no_candidates() {
        let s = vec!["Nothing here.".to_string(), "Nor here.".to_string()];
        assert!(extract_candidates("d", &s, &kws(&["max_rows"]), nz(3)).is_empty());
    }

    #[test]
    fn complex_single_window() {
        let s = vec![
            "The default pointer size in bytes is used when max_rows option is specified."
                .to_string(),
            "This variable should be between 2 and 7.".to_string(),
        ];
        let c = extract_candidates("d", &s, &kws(&["max_rows"]), nz(2));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].extraction_type, ExtractionType::Simple);
        assert_eq!(c[0].text, s[0]);
        assert_eq!(c[1].extraction_type, ExtractionType::ComplexSingle);
        assert_eq!(c[1].text, format!("{} {}", s[0], s[1]));
        assert_eq!(c[1].source, "d#0-1");
    }

    #[test]
    fn window_one_yields_only_simple() {
        let s = vec!["Set max_rows.".to_string(), "Other.".to_string()];
        let c = extract_candidates("d", &s, &kws(&["max_rows"]), nz(1));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].extraction_type, ExtractionType::Simple);
    }

    #[test]
    fn multi_keyword_window() {
        let s = vec!["Set have_ssl.".to_string(), "And have_open_ssl too.".to_string()];
        let c = extract_candidates("d", &s, &kws(&["have_ssl", "have_open_ssl"]), nz(3));
        assert_eq!(c[1].extraction_type, ExtractionType::ComplexMulti);
        assert_eq!(c[1].keywords, vec!["have_ssl", "have_open_ssl"]);
    }
}
