//! Token vocabulary shared by the encoder input and the generator output.
//!
//! Ids 0–4 are the special tokens, 5–44 the tag tokens `<keyword1>` …
//! `<format8>` in class-major order; remaining ids are the tokens of the
//! training split in sorted order.

use std::collections::{BTreeSet, HashMap};

use crate::synthdata::LabeledSample;
use crate::tagger::{tokenize_tagged, TagClass, TagId};

use super::ModelError;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
pub const BOS: usize = 3;
pub const EOS: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[CLS]", "[UNK]", "[BOS]", "[EOS]"];
/// Highest tag index with its own vocabulary entry; larger indices map to
/// `[UNK]`.
pub const MAX_TAG_INDEX: u32 = 8;
/// Number of reserved ids (specials plus tag tokens).
pub const RESERVED: usize = SPECIALS.len() + 5 * MAX_TAG_INDEX as usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

fn reserved_tokens() -> Vec<String> {
    let mut out: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for class in TagClass::ALL {
        for index in 1..=MAX_TAG_INDEX {
            out.push(TagId { class, index }.token());
        }
    }
    out
}

impl Vocab {
    /// Vocabulary holding only the reserved tokens.
    pub fn reserved() -> Self {
        Self::from_tokens(reserved_tokens()).expect("reserved tokens are unique")
    }

    /// Builds the vocabulary from the tagged texts and targets of a
    /// training split.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>) -> Self {
        let mut tokens = reserved_tokens();
        let reserved: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut extra = BTreeSet::new();
        for s in samples {
            for t in tokenize_tagged(&s.text).into_iter().chain(s.target.iter().cloned()) {
                if TagId::from_token(&t).is_none() && !reserved.contains(&t) {
                    extra.insert(t);
                }
            }
        }
        tokens.extend(extra);
        Self::from_tokens(tokens).expect("tokens are unique")
    }

    /// Restores a vocabulary from its id-ordered token list; the reserved
    /// prefix must be intact.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModelError> {
        let reserved = reserved_tokens();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(ModelError::Checkpoint(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Checkpoint(format!("duplicate vocabulary token {t}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(SPECIALS[UNK])
    }

    /// `[CLS]` followed by the ids of the tagged text.
    pub fn encode_input(&self, tagged_text: &str) -> Vec<usize> {
        std::iter::once(CLS)
            .chain(tokenize_tagged(tagged_text).iter().map(|t| self.id(t)))
            .collect()
    }

    pub fn encode_target(&self, target: &[String]) -> Vec<usize> {
        target.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::reserved();
        assert_eq!(v.len(), RESERVED);
        assert_eq!(RESERVED, 45);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("<keyword1>"), 5);
        assert_eq!(v.id("<keyword8>"), 12);
        assert_eq!(v.id("<num1>"), 13);
        assert_eq!(v.id("<format8>"), 44);
        assert_eq!(v.id("<num9>"), UNK);
        assert_eq!(v.id("never-seen"), UNK);
    }

    #[test]
    fn round_trip_through_token_list() {
        let v = Vocab::reserved();
        let mut toks = v.tokens().to_vec();
        toks.push("greater".into());
        let v2 = Vocab::from_tokens(toks.clone()).unwrap();
        assert_eq!(v2.id("greater"), RESERVED);
        assert_eq!(v2.token(RESERVED), "greater");
        toks.swap(0, 1);
        assert!(Vocab::from_tokens(toks).is_err());
    }

    #[test]
    fn input_encoding_starts_with_cls() {
        let v = Vocab::reserved();
        assert_eq!(v.encode_input("<keyword1> > <num1>"), [CLS, 5, UNK, 13]);
    }
}
