//! Pattern tagging: concrete keywords, numbers, booleans, units and format
//! classes in a candidate are replaced by indexed tags (`<keyword1>`,
//! `<num2>`, …), producing the pair ⟨C, T⟩ of tagged text and tag map.
//! [`Tagger::detag`] runs the substitution backwards on generated
//! specification tokens.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{CandidateText, KeywordSet};
use crate::dsl::{self, DslError};
use crate::lexicon::Lexicons;
use crate::text::{is_word_byte, normalize_number, scan_number, word_at};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TagClass {
    Keyword,
    Num,
    Bool,
    Unit,
    Format,
}

impl TagClass {
    pub const ALL: [TagClass; 5] = [
        TagClass::Keyword,
        TagClass::Num,
        TagClass::Bool,
        TagClass::Unit,
        TagClass::Format,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TagClass::Keyword => "keyword",
            TagClass::Num => "num",
            TagClass::Bool => "bool",
            TagClass::Unit => "unit",
            TagClass::Format => "format",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Tag identifier: class plus 1-based index, displayed as `num1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TagId {
    pub class: TagClass,
    pub index: u32,
}

impl TagId {
    /// Token form used inside tagged text: `<num1>`.
    pub fn token(&self) -> String {
        format!("<{self}>")
    }

    /// Parses the token form `<num1>`.
    pub fn from_token(tok: &str) -> Option<Self> {
        tok.strip_prefix('<')?.strip_suffix('>')?.parse().ok()
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.name(), self.index)
    }
}

impl FromStr for TagId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let split = s.find(|c: char| c.is_ascii_digit()).ok_or(())?;
        let class = TagClass::from_name(&s[..split]).ok_or(())?;
        let digits = &s[split..];
        if digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(());
        }
        let index = digits.parse().map_err(|_| ())?;
        Ok(TagId { class, index })
    }
}

/// Ordered tag id → surface string map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagMap {
    entries: Vec<(TagId, String)>,
}

impl TagMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: TagId) -> Option<&str> {
        self.entries
            .iter()
            .find(|(t, _)| *t == id)
            .map(|(_, s)| s.as_str())
    }

    /// Id already assigned to `surface` in `class`.
    pub fn find(&self, class: TagClass, surface: &str) -> Option<TagId> {
        self.entries
            .iter()
            .find(|(t, s)| t.class == class && s == surface)
            .map(|(t, _)| *t)
    }

    /// Returns the existing id for the surface, or assigns the next index.
    pub fn intern(&mut self, class: TagClass, surface: &str) -> TagId {
        if let Some(id) = self.find(class, surface) {
            return id;
        }
        let index = self.entries.iter().filter(|(t, _)| t.class == class).count() as u32 + 1;
        let id = TagId { class, index };
        self.entries.push((id, surface.to_string()));
        id
    }

    pub fn iter(&self) -> impl Iterator<Item = (TagId, &str)> {
        self.entries.iter().map(|(t, s)| (*t, s.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a map from explicit entries, checking that indices within each
    /// class run 1..=n.
    pub fn from_entries(mut entries: Vec<(TagId, String)>) -> Result<Self, String> {
        entries.sort_by_key(|(t, _)| *t);
        for class in TagClass::ALL {
            for (expect, (t, _)) in entries.iter().filter(|(t, _)| t.class == class).enumerate() {
                if t.index as usize != expect + 1 {
                    return Err(format!("tag ids for class {} are not consecutive", class.name()));
                }
            }
        }
        Ok(TagMap { entries })
    }
}

impl Serialize for TagMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (t, s) in &self.entries {
            map.serialize_entry(&t.to_string(), s)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for TagMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(deserializer)?;
        let entries = raw
            .into_iter()
            .map(|(k, v)| {
                k.parse::<TagId>()
                    .map(|t| (t, v))
                    .map_err(|_| D::Error::custom(format!("bad tag id {k:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        TagMap::from_entries(entries).map_err(D::Error::custom)
    }
}

/// The ⟨C, T⟩ pair for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedCandidate {
    pub text: String,
    pub tags: TagMap,
    pub origin: CandidateText,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetagError {
    #[error("tag <{0}> has no entry in the tag map")]
    UnknownTag(String),
    #[error("reconstructed specification `{text}` does not parse: {source}")]
    NonParsingOutput {
        text: String,
        #[source]
        source: DslError,
    },
}

/// Splits tagged text C into model tokens: tag atoms, word runs, and single
/// punctuation characters.
pub fn tokenize_tagged(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"<(?:keyword|num|bool|unit|format)[1-9][0-9]*>|[\p{L}\p{N}_]+|\S")
            .expect("static regex")
    });
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

/// Splits a (possibly tagged) DSL string into specification tokens:
/// `"<keyword1> in [<num1>,<num2>]"` → `<keyword1> in [ <num1> , <num2> ]`.
pub fn split_spec_tokens(spec: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r#"<(?:keyword|num|bool|unit|format)[1-9][0-9]*>|==|!=|[<>\[\]{}(),%]|"(?:[^"\\]|\\.)*"|[A-Za-z0-9_.\-]+|\S"#,
        )
        .expect("static regex")
    });
    re.find_iter(spec).map(|m| m.as_str().to_string()).collect()
}

#[derive(Debug, Clone, Copy)]
struct Match {
    class: TagClass,
    len: usize,
}

fn consider<'a>(m: Match, canon: Option<&'a str>, best: &mut Option<(Match, Option<&'a str>)>) {
    if best.is_none_or(|(b, _)| m.len > b.len) {
        *best = Some((m, canon));
    }
}

/// Tags candidates and reconstructs specifications, holding the lexicons.
#[derive(Debug, Clone)]
pub struct Tagger {
    lexicons: Lexicons,
}

impl Default for Tagger {
    fn default() -> Self {
        Tagger::new(Lexicons::default())
    }
}

impl Tagger {
    pub fn new(lexicons: Lexicons) -> Self {
        Tagger { lexicons }
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    fn longest_phrase<'a>(
        hay: &[u8],
        pos: usize,
        phrases: impl Iterator<Item = &'a str>,
    ) -> Option<usize> {
        phrases
            .filter(|p| word_at(hay, pos, p.as_bytes()))
            .map(str::len)
            .max()
    }

    /// Replaces every pattern occurrence with its tag. Single left-to-right
    /// pass; at each position the longest match wins, ties resolved as
    /// keyword > format > num > bool > unit.
    pub fn tag(&self, candidate: &CandidateText, keywords: &KeywordSet) -> TaggedCandidate {
        let (text, tags) = self.tag_text(&candidate.text, keywords);
        TaggedCandidate {
            text,
            tags,
            origin: candidate.clone(),
        }
    }

    pub fn tag_text(&self, text: &str, keywords: &KeywordSet) -> (String, TagMap) {
        let lowered = text.to_ascii_lowercase();
        let hay = lowered.as_bytes();
        let mut out = String::with_capacity(text.len() + 16);
        let mut tags = TagMap::new();
        let mut pos = 0;
        // end offset of the last emitted <num>, so "64mb" can tag the unit
        let mut num_end: Option<usize> = None;
        while pos < hay.len() {
            if !lowered.is_char_boundary(pos) {
                pos += 1;
                continue;
            }
            let mut best: Option<(Match, Option<&str>)> = None;
            if let Some((kw, len)) = keywords.match_at(hay, pos) {
                consider(Match { class: TagClass::Keyword, len }, Some(kw), &mut best);
            }
            if let Some(len) = Self::longest_phrase(hay, pos, self.lexicons.formats().iter().map(String::as_str)) {
                consider(Match { class: TagClass::Format, len }, None, &mut best);
            }
            if let Some(len) = scan_number(hay, pos) {
                let end = pos + len;
                let glued_unit = hay.get(end).is_some_and(|&b| is_word_byte(b))
                    && self.unit_len_at(hay, end, true).is_some();
                let left_ok = pos == 0 || !is_word_byte(hay[pos - 1]);
                let right_ok = match hay.get(end) {
                    Some(&b) if is_word_byte(b) => glued_unit,
                    _ => true,
                };
                if left_ok && right_ok {
                    consider(Match { class: TagClass::Num, len }, None, &mut best);
                }
            }
            if let Some(len) = Self::longest_phrase(hay, pos, self.lexicons.bools().iter().map(|(s, _)| s.as_str())) {
                consider(Match { class: TagClass::Bool, len }, None, &mut best);
            }
            if let Some(len) = self.unit_len_at(hay, pos, num_end == Some(pos)) {
                consider(Match { class: TagClass::Unit, len }, None, &mut best);
            }
            match best {
                Some((m, canon)) => {
                    let surface = match canon {
                        Some(k) => k.to_string(),
                        None => lowered[pos..pos + m.len].to_string(),
                    };
                    let id = tags.intern(m.class, &surface);
                    out.push_str(&id.token());
                    pos += m.len;
                    num_end = (m.class == TagClass::Num).then_some(pos);
                }
                None => {
                    let ch = lowered[pos..].chars().next().expect("char boundary");
                    out.push(ch);
                    pos += ch.len_utf8();
                    num_end = None;
                }
            }
        }
        (out, tags)
    }

    fn unit_len_at(&self, hay: &[u8], pos: usize, after_number: bool) -> Option<usize> {
        self.lexicons
            .units()
            .iter()
            .filter(|u| {
                let ub = u.as_bytes();
                if after_number && hay[pos..].starts_with(ub) {
                    // glued to a number: only the right edge needs a boundary
                    let end = pos + ub.len();
                    !is_word_byte(ub[ub.len() - 1]) || crate::text::boundary_after(hay, end)
                } else {
                    word_at(hay, pos, ub)
                }
            })
            .map(String::len)
            .max()
    }

    fn render_tag(&self, id: TagId, surface: &str) -> Result<String, DetagError> {
        let bad = |text: &str| DetagError::NonParsingOutput {
            text: text.to_string(),
            source: DslError::InvalidValue(format!("cannot render <{id}> surface {surface:?}")),
        };
        Ok(match id.class {
            TagClass::Keyword | TagClass::Unit => surface.to_string(),
            TagClass::Num => normalize_number(surface).ok_or_else(|| bad(surface))?,
            TagClass::Bool => match self.lexicons.bool_value(surface) {
                Some(v) => v.to_string(),
                None => match surface {
                    "true" | "false" => surface.to_string(),
                    _ => return Err(bad(surface)),
                },
            },
            TagClass::Format => dsl::print_value(&dsl::Value::FormatClass(surface.to_string())),
        })
    }

    /// Substitutes tag tokens from `tags` and returns the canonical DSL form.
    pub fn detag(&self, tokens: &[impl AsRef<str>], tags: &TagMap) -> Result<String, DetagError> {
        let mut parts = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let tok = tok.as_ref();
            match TagId::from_token(tok) {
                Some(id) => {
                    let surface = tags
                        .get(id)
                        .ok_or_else(|| DetagError::UnknownTag(id.to_string()))?;
                    parts.push(self.render_tag(id, surface)?);
                }
                None => parts.push(tok.to_string()),
            }
        }
        let text = parts.join(" ");
        dsl::parse_spec(&text)
            .map(|s| dsl::print_spec(&s))
            .map_err(|source| DetagError::NonParsingOutput { text, source })
    }
}

/// Tag ids referenced in tagged text.
pub fn tags_in_text(text: &str) -> Vec<TagId> {
    let mut out: Vec<TagId> = Vec::new();
    for tok in tokenize_tagged(text) {
        if let Some(id) = TagId::from_token(&tok) {
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ExtractionType;

    fn cand(text: &str) -> CandidateText {
        CandidateText {
            text: text.to_string(),
            source: "t#0".into(),
            extraction_type: ExtractionType::Simple,
            keywords: vec![],
        }
    }

    fn tag(text: &str, kws: &[&str]) -> TaggedCandidate {
        let set = KeywordSet::new("t", kws.iter().copied()).unwrap();
        Tagger::default().tag(&cand(text), &set)
    }

    fn entries(t: &TagMap) -> Vec<(String, String)> {
        t.iter().map(|(i, s)| (i.to_string(), s.to_string())).collect()
    }

    #[test]
    fn user_port_sentence() {
        let t = tag(
            "It is necessary to use a number greater than 1500 for user_port",
            &["user_port"],
        );
        assert_eq!(
            t.text,
            "it is necessary to use a number greater than <num1> for <keyword1>"
        );
        assert_eq!(
            entries(&t.tags),
            vec![
                ("num1".to_string(), "1500".to_string()),
                ("keyword1".to_string(), "user_port".to_string())
            ]
        );
    }

    #[test]
    fn thousands_separators_are_one_number() {
        let t = tag("raise the ulimit to 10,000, but more likely 10,240", &["ulimit"]);
        assert_eq!(t.text, "raise the <keyword1> to <num1>, but more likely <num2>");
        assert_eq!(t.tags.get("num1".parse().unwrap()), Some("10,000"));
        assert_eq!(t.tags.get("num2".parse().unwrap()), Some("10,240"));
    }

    #[test]
    fn no_patterns_is_lowercase_identity() {
        let t = tag("Nothing To See Here", &["max_rows"]);
        assert_eq!(t.text, "nothing to see here");
        assert!(t.tags.is_empty());
    }

    #[test]
    fn repeated_surfaces_share_ids() {
        let t = tag("set x to 5, then y to 5 and x on", &["x", "y"]);
        assert_eq!(t.text, "set <keyword1> to <num1>, then <keyword2> to <num1> and <keyword1> <bool1>");
    }

    #[test]
    fn keyword_beats_bool() {
        let t = tag("turn on the on switch", &["on"]);
        assert_eq!(t.text, "turn <keyword1> the <keyword1> switch");
    }

    #[test]
    fn units_formats_and_versions() {
        let t = tag(
            "Set cache_size to 64MB or 10 % and give an Absolute Path. See MySQL 11.7.8.",
            &["cache_size", "MySQL"],
        );
        assert_eq!(
            t.text,
            "set <keyword1> to <num1><unit1> or <num2> <unit2> and give an <format1>. see <keyword2> <num3>."
        );
        assert_eq!(t.tags.get("unit1".parse().unwrap()), Some("mb"));
        assert_eq!(t.tags.get("format1".parse().unwrap()), Some("absolute path"));
        assert_eq!(t.tags.get("num3".parse().unwrap()), Some("11.7.8"));
    }

    #[test]
    fn dashed_flags_are_part_of_the_keyword() {
        let t = tag("Specify --ssl-ca as well.", &["ssl-ca"]);
        assert_eq!(t.text, "specify <keyword1> as well.");
        assert_eq!(t.tags.get("keyword1".parse().unwrap()), Some("ssl-ca"));
    }

    #[test]
    fn words_containing_lexicon_entries_are_untouched() {
        let t = tag("the onion sends bytesize notes", &["zz"]);
        assert!(t.tags.is_empty());
    }

    #[test]
    fn detag_examples() {
        let tagger = Tagger::default();
        let mut t = TagMap::new();
        t.intern(TagClass::Keyword, "user_port");
        t.intern(TagClass::Num, "1500");
        assert_eq!(
            tagger.detag(&["<keyword1>", ">", "<num1>"], &t).unwrap(),
            "user_port > 1500"
        );
        assert_eq!(
            tagger.detag(&["<keyword1>", ">", "<num9>"], &t).unwrap_err(),
            DetagError::UnknownTag("num9".into())
        );
        assert!(matches!(
            tagger.detag(&["<keyword1>", ">"], &t).unwrap_err(),
            DetagError::NonParsingOutput { .. }
        ));
    }

    #[test]
    fn detag_interval_from_complex_candidate() {
        let t = tag(
            "The default pointer size in bytes is used when max_rows option is specified. This variable should be between 2 and 7.",
            &["max_rows"],
        );
        let toks = split_spec_tokens("<keyword1> in [<num1>, <num2>]");
        assert_eq!(toks, ["<keyword1>", "in", "[", "<num1>", ",", "<num2>", "]"]);
        assert_eq!(Tagger::default().detag(&toks, &t.tags).unwrap(), "max_rows in [2, 7]");
    }

    #[test]
    fn detag_renders_bools_formats_and_separators() {
        let tagger = Tagger::default();
        let mut t = TagMap::new();
        t.intern(TagClass::Keyword, "ulimit");
        t.intern(TagClass::Num, "10,240");
        t.intern(TagClass::Bool, "enabled");
        t.intern(TagClass::Format, "absolute path");
        assert_eq!(tagger.detag(&split_spec_tokens("<keyword1> == <num1>"), &t).unwrap(), "ulimit == 10240");
        assert_eq!(tagger.detag(&split_spec_tokens("<keyword1> == <bool1>"), &t).unwrap(), "ulimit == true");
        assert_eq!(
            tagger.detag(&split_spec_tokens("format(<keyword1>, <format1>)"), &t).unwrap(),
            "format(ulimit, \"absolute path\")"
        );
    }

    #[test]
    fn tag_map_serde() {
        let mut t = TagMap::new();
        t.intern(TagClass::Num, "1500");
        t.intern(TagClass::Keyword, "user_port");
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"num1":"1500","keyword1":"user_port"}"#);
        let back: TagMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back.get("keyword1".parse().unwrap()), Some("user_port"));
        assert!(serde_json::from_str::<TagMap>(r#"{"num2":"1"}"#).is_err());
    }

    #[test]
    fn tokenization() {
        assert_eq!(
            tokenize_tagged("set <keyword1> to <num1><unit1>, it's fine."),
            ["set", "<keyword1>", "to", "<num1>", "<unit1>", ",", "it", "'", "s", "fine", "."]
        );
        assert_eq!(tags_in_text("<num1> <keyword1> <num1>").len(), 2);
    }
}
