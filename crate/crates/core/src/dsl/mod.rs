//! Rule language for configuration specifications.
//!
//! A [`Specification`] is a non-empty list of [`Rule`]s joined by `and` / `or`
//! connectives. Each rule pairs a configuration keyword with a [`Relation`] and
//! the values that relation needs. The canonical single-line text form is
//! produced by [`print_spec`] and accepted by [`parse_spec`]:
//!
//! ```text
//! user_port > 1500
//! max_rows in [2, 7]
//! have_ssl == true and have_open_ssl == true
//! use(sync)
//! format(basedir, "absolute path")
//! ```

mod parse;
mod print;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_spec, parse_spec_file};
pub use print::{print_spec, print_value};

/// Words that can never be used as a keyword or unit.
pub const RESERVED_WORDS: &[&str] = &["and", "or", "in", "true", "false"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// Advisory suggestion with no concrete bound.
    Recommend,
    Eq,
    Neq,
    Gt,
    Lt,
    Interval,
    SetMembership,
    Use,
    With,
    Prefer,
    StringFormat,
}

impl Relation {
    pub const ALL: [Relation; 11] = [
        Relation::Recommend,
        Relation::Eq,
        Relation::Neq,
        Relation::Gt,
        Relation::Lt,
        Relation::Interval,
        Relation::SetMembership,
        Relation::Use,
        Relation::With,
        Relation::Prefer,
        Relation::StringFormat,
    ];

    /// Human readable arity bound.
    fn arity(self) -> Arity {
        match self {
            Relation::Use | Relation::Recommend => Arity::Exactly(0),
            Relation::Interval => Arity::Exactly(2),
            Relation::SetMembership => Arity::AtLeast(2),
            _ => Arity::Exactly(1),
        }
    }

    /// Prefer, Recommend and Use never produce hard violations.
    pub fn is_advisory(self) -> bool {
        matches!(self, Relation::Use | Relation::Prefer | Relation::Recommend)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Relation::Recommend => "recommend",
            Relation::Eq => "==",
            Relation::Neq => "!=",
            Relation::Gt => ">",
            Relation::Lt => "<",
            Relation::Interval => "interval",
            Relation::SetMembership => "set",
            Relation::Use => "use",
            Relation::With => "with",
            Relation::Prefer => "prefer",
            Relation::StringFormat => "format",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    fn admits(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "exactly {k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number { magnitude: f64, unit: Option<String> },
    Boolean(bool),
    KeywordRef(String),
    FormatClass(String),
    Text(String),
}

impl Value {
    pub fn number(magnitude: f64) -> Self {
        Value::Number {
            magnitude,
            unit: None,
        }
    }

    pub fn number_with_unit(magnitude: f64, unit: impl Into<String>) -> Self {
        Value::Number {
            magnitude,
            unit: Some(unit.into()),
        }
    }

    pub fn keyword(name: impl Into<String>) -> Self {
        Value::KeywordRef(name.into())
    }

    fn validate(&self) -> Result<(), DslError> {
        match self {
            Value::Number { magnitude, unit } => {
                if !magnitude.is_finite() {
                    return Err(DslError::InvalidValue(format!(
                        "number {magnitude} is not finite"
                    )));
                }
                if let Some(u) = unit {
                    if !is_valid_unit(u) {
                        return Err(DslError::InvalidValue(format!("bad unit {u:?}")));
                    }
                }
                Ok(())
            }
            Value::KeywordRef(k) => check_keyword(k),
            Value::Boolean(_) | Value::FormatClass(_) | Value::Text(_) => Ok(()),
        }
    }
}

/// True when `s` lexes as a single DSL word.
fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(parse::is_word_char)
}

pub(crate) fn is_dsl_number(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

/// Keywords must survive a print/parse cycle as a single identifier.
pub fn is_valid_keyword(s: &str) -> bool {
    is_word(s) && !is_dsl_number(s) && !RESERVED_WORDS.contains(&s)
}

fn is_valid_unit(s: &str) -> bool {
    s == "%" || is_valid_keyword(s)
}

fn check_keyword(k: &str) -> Result<(), DslError> {
    if is_valid_keyword(k) {
        Ok(())
    } else {
        Err(DslError::InvalidValue(format!("bad keyword {k:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    keyword: String,
    relation: Relation,
    values: Vec<Value>,
}

impl Rule {
    /// Builds a rule, enforcing arity, payload kinds and interval ordering.
    pub fn new(
        keyword: impl Into<String>,
        relation: Relation,
        values: Vec<Value>,
    ) -> Result<Self, DslError> {
        let keyword = keyword.into();
        check_keyword(&keyword)?;
        let arity = relation.arity();
        if !arity.admits(values.len()) {
            return Err(DslError::Arity {
                relation,
                expected: arity.to_string(),
                got: values.len(),
            });
        }
        for v in &values {
            v.validate()?;
        }
        let kind_ok = |pred: fn(&Value) -> bool| values.iter().all(pred);
        let ok = match relation {
            Relation::Use | Relation::Recommend => true,
            Relation::With | Relation::Prefer => kind_ok(|v| matches!(v, Value::KeywordRef(_))),
            Relation::StringFormat => kind_ok(|v| matches!(v, Value::FormatClass(_))),
            Relation::Gt | Relation::Lt | Relation::Interval => {
                kind_ok(|v| matches!(v, Value::Number { .. }))
            }
            Relation::Eq | Relation::Neq | Relation::SetMembership => {
                kind_ok(|v| !matches!(v, Value::FormatClass(_)))
            }
        };
        if !ok {
            return Err(DslError::InvalidValue(format!(
                "payload kind not allowed for relation `{relation}`"
            )));
        }
        if relation == Relation::Interval {
            if let (
                Value::Number {
                    magnitude: lo,
                    unit: lu,
                },
                Value::Number {
                    magnitude: hi,
                    unit: hu,
                },
            ) = (&values[0], &values[1])
            {
                if lu != hu {
                    return Err(DslError::UnitMismatch {
                        lo: lu.clone().unwrap_or_default(),
                        hi: hu.clone().unwrap_or_default(),
                    });
                }
                if lo > hi {
                    return Err(DslError::IntervalOrder { lo: *lo, hi: *hi });
                }
            }
        }
        Ok(Rule {
            keyword,
            relation,
            values,
        })
    }

    pub fn keyword(&self) -> &str {
        &self.keyword
    }

    pub fn relation(&self) -> Relation {
        self.relation
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    /// Every keyword this rule mentions, including keyword-valued payloads.
    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.keyword.as_str()).chain(self.values.iter().filter_map(|v| match v {
            Value::KeywordRef(k) => Some(k.as_str()),
            _ => None,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connective {
    And,
    Or,
}

impl fmt::Display for Connective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connective::And => "and",
            Connective::Or => "or",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    rules: Vec<Rule>,
    connectives: Vec<Connective>,
}

impl Specification {
    pub fn new(rules: Vec<Rule>, connectives: Vec<Connective>) -> Result<Self, DslError> {
        if rules.is_empty() {
            return Err(DslError::EmptySpecification);
        }
        if connectives.len() != rules.len() - 1 {
            return Err(DslError::ConnectiveCount {
                rules: rules.len(),
                connectives: connectives.len(),
            });
        }
        Ok(Specification { rules, connectives })
    }

    pub fn single(rule: Rule) -> Self {
        Specification {
            rules: vec![rule],
            connectives: Vec::new(),
        }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn connectives(&self) -> &[Connective] {
        &self.connectives
    }
}

impl fmt::Display for Specification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_spec(self))
    }
}

impl std::str::FromStr for Specification {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_spec(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Quantitative,
    Utilization,
    Interrelation,
    Attribute,
    Generic,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Quantitative,
        Category::Utilization,
        Category::Interrelation,
        Category::Attribute,
        Category::Generic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Quantitative => "Quantitative",
            Category::Utilization => "Utilization",
            Category::Interrelation => "Interrelation",
            Category::Attribute => "Attribute",
            Category::Generic => "Generic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structural category of a specification; multi-rule specs take the
/// category of their first rule.
pub fn infer_category(spec: &Specification) -> Category {
    match spec.rules[0].relation {
        Relation::Eq
        | Relation::Neq
        | Relation::Gt
        | Relation::Lt
        | Relation::Interval
        | Relation::SetMembership => Category::Quantitative,
        Relation::Use => Category::Utilization,
        Relation::With | Relation::Prefer => Category::Interrelation,
        Relation::StringFormat => Category::Attribute,
        Relation::Recommend => Category::Generic,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at offset {position}: expected {expected}, found {found}")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("relation `{relation}` takes {expected} value(s), got {got}")]
    Arity {
        relation: Relation,
        expected: String,
        got: usize,
    },
    #[error("interval bounds out of order: {lo} > {hi}")]
    IntervalOrder { lo: f64, hi: f64 },
    #[error("interval bounds use different units ({lo:?} vs {hi:?})")]
    UnitMismatch { lo: String, hi: String },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("a specification needs at least one rule")]
    EmptySpecification,
    #[error("{rules} rules need {} connectives, got {connectives}", rules - 1)]
    ConnectiveCount { rules: usize, connectives: usize },
}
