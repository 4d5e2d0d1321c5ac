//! Checking configuration files against specifications.
//!
//! Hard rules (comparisons, intervals, sets, `with`, `format`) yield
//! violations that fail a check; `use`, `prefer` and `recommend` only ever
//! yield advisories. Within a specification `and` binds tighter than `or`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::IpAddr;

use serde::Serialize;
use thiserror::Error;

use crate::dsl::{print_spec, Connective, Relation, Rule, Specification, Value};
use crate::lexicon::Lexicons;
use crate::parse_prose_number;

#[derive(Debug, Error)]
pub enum ConformanceError {
    #[error("configuration is not valid UTF-8 at byte {offset}")]
    Decode { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConfigFormat {
    /// `key = value` or `key value` per line.
    KeyValue,
    /// Key-value lines under `[section]` headers, flattened to
    /// `section.key`.
    Ini,
}

/// A line that could not be parsed; parsing continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigEntry {
    pub key: String,
    /// Trimmed value text; empty for a bare key.
    pub value: String,
    pub line: usize,
    /// Lines of earlier definitions this entry overrides.
    pub overridden_lines: Vec<usize>,
}

/// Configuration entries in first-definition order. Lookups treat `-` and
/// `_` in keys as the same character.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfigMap {
    entries: Vec<ConfigEntry>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

fn normalize_key(key: &str) -> String {
    key.replace('-', "_")
}

impl ConfigMap {
    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>, line: usize) {
        let key = key.into();
        let value = value.into();
        let norm = normalize_key(&key);
        match self.index.get(&norm) {
            Some(&i) => {
                let e = &mut self.entries[i];
                e.overridden_lines.push(e.line);
                e.value = value;
                e.line = line;
            }
            None => {
                self.index.insert(norm, self.entries.len());
                self.entries.push(ConfigEntry {
                    key,
                    value,
                    line,
                    overridden_lines: Vec::new(),
                });
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&ConfigEntry> {
        self.index.get(&normalize_key(key)).map(|&i| &self.entries[i])
    }

    /// Exact key, or else every `section.key` entry whose last segment is
    /// `key`.
    pub fn lookup(&self, key: &str) -> Vec<&ConfigEntry> {
        if let Some(e) = self.get(key) {
            return vec![e];
        }
        let suffix = format!(".{}", normalize_key(key));
        self.entries
            .iter()
            .filter(|e| normalize_key(&e.key).ends_with(&suffix))
            .collect()
    }

    pub fn entries(&self) -> &[ConfigEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_key(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses a configuration file. Invalid UTF-8 is fatal; malformed lines are
/// collected and skipped.
pub fn parse_config(
    bytes: &[u8],
    format: ConfigFormat,
) -> Result<(ConfigMap, Vec<MalformedLine>), ConformanceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ConformanceError::Decode {
        offset: e.valid_up_to(),
    })?;
    let mut map = ConfigMap::default();
    let mut errors = Vec::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with(';') {
            continue;
        }
        let mut bad = |reason: &str| {
            errors.push(MalformedLine {
                line,
                text: raw.to_string(),
                reason: reason.to_string(),
            })
        };
        if l.starts_with('[') {
            match (format, l.strip_prefix('[').and_then(|s| s.strip_suffix(']'))) {
                (ConfigFormat::Ini, Some(name)) if is_key(name.trim()) => {
                    section = Some(name.trim().to_string());
                }
                (ConfigFormat::Ini, _) => bad("malformed section header"),
                (ConfigFormat::KeyValue, _) => bad("section headers need the ini format"),
            }
            continue;
        }
        let (key, value) = match l.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => match l.split_once(char::is_whitespace) {
                Some((k, v)) => (k, v.trim()),
                None => (l, ""),
            },
        };
        if !is_key(key) {
            bad("expected `key = value`");
            continue;
        }
        let key = match &section {
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        };
        map.insert(key, value, line);
    }
    Ok((map, errors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    ValueOutOfRange,
    WrongType,
    MissingKey,
    FormatMismatch,
    AdvisoryOnly,
}

impl Verdict {
    pub fn is_hard(self) -> bool {
        self != Verdict::AdvisoryOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Canonical text of the rule's enclosing specification.
    pub spec: String,
    pub rule: Rule,
    pub key: String,
    pub observed: Option<String>,
    pub line: Option<usize>,
    pub verdict: Verdict,
}

/// Evaluates rules against one configuration.
pub struct Checker<'a> {
    config: &'a ConfigMap,
    lexicons: &'a Lexicons,
}

fn unquote(s: &str) -> &str {
    for q in ['"', '\''] {
        if let Some(inner) = s.strip_prefix(q).and_then(|r| r.strip_suffix(q)) {
            return inner;
        }
    }
    s
}

fn is_domain(s: &str) -> bool {
    let labels: Vec<&str> = s.trim_end_matches('.').split('.').collect();
    labels.len() >= 2
        && labels.iter().all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && !l.starts_with('-')
                && !l.ends_with('-')
                && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
        })
        && !labels.last().is_some_and(|l| l.chars().all(|c| c.is_ascii_digit()))
}

fn is_url(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once("://") else {
        return false;
    };
    let scheme_ok = scheme
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic())
        && scheme
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    let authority = rest.split(['/', '?', '#']).next().unwrap_or("");
    let host = authority.rsplit('@').next().unwrap_or("");
    let host = match host.rsplit_once(':') {
        Some((h, port)) if port.chars().all(|c| c.is_ascii_digit()) => h,
        _ => host,
    };
    scheme_ok && (host == "localhost" || is_domain(host) || host.parse::<IpAddr>().is_ok())
}

/// Syntactic check of `value` against a format class; `None` for classes
/// without a checker.
pub fn format_matches(class: &str, value: &str) -> Option<bool> {
    let v = value.trim();
    Some(match class.to_ascii_lowercase().as_str() {
        "absolute path" => v.starts_with('/') || v.starts_with('\\'),
        "relative path" => !v.is_empty() && !v.starts_with('/') && !v.starts_with('\\'),
        "email address" | "email" => match v.split_once('@') {
            Some((user, host)) => !user.is_empty() && !host.is_empty() && !host.contains('@'),
            None => false,
        },
        "domain name" | "domain" => is_domain(v),
        "url" => is_url(v),
        "ip address" | "ip" => v.parse::<IpAddr>().is_ok(),
        _ => return None,
    })
}

enum Coerced {
    Ok(bool),
    WrongType,
}

impl<'a> Checker<'a> {
    pub fn new(config: &'a ConfigMap, lexicons: &'a Lexicons) -> Self {
        Checker { config, lexicons }
    }

    fn number(observed: &str, unit: Option<&str>) -> Option<f64> {
        let s = observed.trim();
        if let Some(x) = parse_prose_number(s) {
            return Some(x);
        }
        let u = unit?;
        let lower = s.to_ascii_lowercase();
        let body = lower.strip_suffix(&u.to_ascii_lowercase())?;
        parse_prose_number(body.trim_end())
    }

    fn boolean(&self, observed: &str) -> Option<bool> {
        if observed.is_empty() {
            // a bare key switches an option on
            return Some(true);
        }
        self.lexicons.bool_value(observed).or(match observed.trim() {
            "1" => Some(true),
            "0" => Some(false),
            _ => None,
        })
    }

    /// Whether `observed` equals `v` after coercion to `v`'s kind.
    fn equals(&self, observed: &str, v: &Value) -> Coerced {
        match v {
            Value::Number { magnitude, unit } => match Self::number(observed, unit.as_deref()) {
                Some(x) => Coerced::Ok(x == *magnitude),
                None => Coerced::WrongType,
            },
            Value::Boolean(b) => match self.boolean(observed) {
                Some(x) => Coerced::Ok(x == *b),
                None => Coerced::WrongType,
            },
            Value::KeywordRef(s) | Value::Text(s) => Coerced::Ok(observed.eq_ignore_ascii_case(s)),
            Value::FormatClass(c) => Coerced::Ok(format_matches(c, observed).unwrap_or(true)),
        }
    }
}

fn num(v: &Value) -> Option<(f64, Option<&str>)> {
    match v {
        Value::Number { magnitude, unit } => Some((*magnitude, unit.as_deref())),
        _ => None,
    }
}

impl<'a> Checker<'a> {
    fn value_verdict(&self, rule: &Rule, observed: &str) -> Option<Verdict> {
        let values = rule.values();
        let range = |ok: bool| (!ok).then_some(Verdict::ValueOutOfRange);
        match rule.relation() {
            Relation::Eq | Relation::Neq => match self.equals(observed, &values[0]) {
                Coerced::WrongType => Some(Verdict::WrongType),
                Coerced::Ok(eq) => range(eq == (rule.relation() == Relation::Eq)),
            },
            Relation::Gt | Relation::Lt => {
                let (bound, unit) = num(&values[0])?;
                match Self::number(observed, unit) {
                    None => Some(Verdict::WrongType),
                    Some(x) if rule.relation() == Relation::Gt => range(x > bound),
                    Some(x) => range(x < bound),
                }
            }
            Relation::Interval => {
                let (lo, unit) = num(&values[0])?;
                let (hi, _) = num(&values[1])?;
                match Self::number(observed, unit) {
                    None => Some(Verdict::WrongType),
                    Some(x) => range(lo <= x && x <= hi),
                }
            }
            Relation::SetMembership => {
                let mut any_typed = false;
                for v in values {
                    if let Coerced::Ok(eq) = self.equals(observed, v) {
                        any_typed = true;
                        if eq {
                            return None;
                        }
                    }
                }
                Some(if any_typed {
                    Verdict::ValueOutOfRange
                } else {
                    Verdict::WrongType
                })
            }
            Relation::StringFormat => match &values[0] {
                Value::FormatClass(c) => match format_matches(c, unquote(observed)) {
                    Some(false) => Some(Verdict::FormatMismatch),
                    _ => None,
                },
                _ => None,
            },
            Relation::Use | Relation::Recommend | Relation::With | Relation::Prefer => None,
        }
    }

    /// Findings for one rule: hard violations and advisories.
    pub fn check_rule(&self, rule: &Rule, spec_text: &str) -> Vec<Violation> {
        let found = self.config.lookup(rule.keyword());
        let make = |key: &str, entry: Option<&ConfigEntry>, verdict| Violation {
            spec: spec_text.to_string(),
            rule: rule.clone(),
            key: key.to_string(),
            observed: entry.map(|e| e.value.clone()),
            line: entry.map(|e| e.line),
            verdict,
        };
        let other = || match rule.values().first() {
            Some(Value::KeywordRef(k)) => Some(k.as_str()),
            _ => None,
        };
        match rule.relation() {
            Relation::Use | Relation::Recommend => {
                if found.is_empty() {
                    vec![make(rule.keyword(), None, Verdict::AdvisoryOnly)]
                } else {
                    Vec::new()
                }
            }
            Relation::Prefer => {
                // triggered when only the alternative is configured
                let alt = other().map(|k| self.config.lookup(k)).unwrap_or_default();
                match alt.first() {
                    Some(e) if found.is_empty() => {
                        vec![make(&e.key, Some(e), Verdict::AdvisoryOnly)]
                    }
                    _ => Vec::new(),
                }
            }
            Relation::With => {
                let Some(partner) = other() else {
                    return Vec::new();
                };
                if !found.is_empty() && self.config.lookup(partner).is_empty() {
                    vec![make(partner, None, Verdict::MissingKey)]
                } else {
                    Vec::new()
                }
            }
            _ => {
                if found.is_empty() {
                    return vec![make(rule.keyword(), None, Verdict::MissingKey)];
                }
                found
                    .into_iter()
                    .filter_map(|e| {
                        self.value_verdict(rule, unquote(&e.value))
                            .map(|v| make(&e.key, Some(e), v))
                    })
                    .collect()
            }
        }
    }

    pub fn rule_violated(&self, rule: &Rule) -> bool {
        self.check_rule(rule, "").iter().any(|v| v.verdict.is_hard())
    }

    /// Findings for a specification: the hard violations of its violated
    /// `and`-groups when every group is violated, plus all advisories.
    pub fn check_spec(&self, spec: &Specification) -> Vec<Violation> {
        let text = print_spec(spec);
        let per_rule: Vec<Vec<Violation>> =
            spec.rules().iter().map(|r| self.check_rule(r, &text)).collect();
        let groups = and_groups(spec);
        let group_violated = |g: &[usize]| {
            g.iter()
                .any(|&i| per_rule[i].iter().any(|v| v.verdict.is_hard()))
        };
        let violated = groups.iter().all(|g| group_violated(g));
        per_rule
            .into_iter()
            .flatten()
            .filter(|v| violated || !v.verdict.is_hard())
            .collect()
    }

    pub fn spec_violated(&self, spec: &Specification) -> bool {
        self.check_spec(spec).iter().any(|v| v.verdict.is_hard())
    }
}

/// Rule indices grouped into maximal `and`-chains; a spec holds when any
/// group holds.
fn and_groups(spec: &Specification) -> Vec<Vec<usize>> {
    let mut groups = vec![vec![0]];
    for (i, c) in spec.connectives().iter().enumerate() {
        match c {
            Connective::And => groups.last_mut().expect("non-empty").push(i + 1),
            Connective::Or => groups.push(vec![i + 1]),
        }
    }
    groups
}

/// All findings for `specs` against `config`, in spec order.
pub fn check(config: &ConfigMap, specs: &[Specification], lexicons: &Lexicons) -> Vec<Violation> {
    let checker = Checker::new(config, lexicons);
    specs.iter().flat_map(|s| checker.check_spec(s)).collect()
}

/// 0 when there are no hard violations, 1 otherwise.
pub fn exit_status(violations: &[Violation]) -> i32 {
    i32::from(violations.iter().any(|v| v.verdict.is_hard()))
}

/// One line per finding.
pub fn render_table(violations: &[Violation]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16}{:<24}{:>6}  {:<16}{}",
        "verdict", "key", "line", "observed", "rule"
    );
    for v in violations {
        let rule = Specification::single(v.rule.clone());
        let _ = writeln!(
            out,
            "{:<16}{:<24}{:>6}  {:<16}{}",
            format!("{:?}", v.verdict),
            v.key,
            v.line.map_or("-".to_string(), |l| l.to_string()),
            v.observed.as_deref().unwrap_or("-"),
            print_spec(&rule)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;

    fn kv(text: &str) -> ConfigMap {
        let (m, errs) = parse_config(text.as_bytes(), ConfigFormat::KeyValue).unwrap();
        assert!(errs.is_empty(), "{errs:?}");
        m
    }

    fn findings(config: &str, spec: &str) -> Vec<Violation> {
        check(&kv(config), &[parse_spec(spec).unwrap()], &Lexicons::default())
    }

    #[test]
    fn parses_both_line_forms() {
        let m = kv("user_port = 1433\n# comment\n; other\nmax_rows 5\nskip-networking\n");
        assert_eq!(m.get("user_port").unwrap().value, "1433");
        assert_eq!(m.get("max_rows").unwrap().value, "5");
        assert_eq!(m.get("skip_networking").unwrap().value, "");
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn later_duplicate_wins() {
        let text = "a = 1\nb = 2\nx = 1\n\n\n\n\n\nx = 9\n";
        let m = kv(text);
        let e = m.get("x").unwrap();
        assert_eq!((e.value.as_str(), e.line, e.overridden_lines.as_slice()), ("9", 9, &[3][..]));
    }

    #[test]
    fn ini_sections_are_flattened() {
        let (m, errs) = parse_config(b"[mysqld]\nmax_rows=5\n", ConfigFormat::Ini).unwrap();
        assert!(errs.is_empty());
        assert_eq!(m.get("mysqld.max_rows").unwrap().value, "5");
        assert_eq!(m.lookup("max_rows").len(), 1);
    }

    #[test]
    fn malformed_lines_are_collected() {
        let (m, errs) =
            parse_config(b"= 3\n[broken\nok = 1\n", ConfigFormat::Ini).unwrap();
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(m.get("ok").unwrap().value, "1");
        assert!(matches!(
            parse_config(b"a = \xff", ConfigFormat::KeyValue),
            Err(ConformanceError::Decode { offset: 4 })
        ));
    }

    #[test]
    fn user_port_below_bound() {
        let v = findings("user_port = 1433\n", "user_port > 1500");
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].verdict, Verdict::ValueOutOfRange);
        assert_eq!(v[0].observed.as_deref(), Some("1433"));
        assert_eq!(v[0].line, Some(1));
        assert_eq!(exit_status(&v), 1);
    }

    #[test]
    fn interval_and_types() {
        assert!(findings("max_rows = 5", "max_rows in [2, 7]").is_empty());
        assert_eq!(findings("max_rows = 9", "max_rows in [2, 7]")[0].verdict, Verdict::ValueOutOfRange);
        assert_eq!(findings("max_rows = many", "max_rows in [2, 7]")[0].verdict, Verdict::WrongType);
        assert!(findings("max_rows = 1,000", "max_rows > 999").is_empty());
        assert!(findings("buf = 64MB", "buf > 32 MB").is_empty());
    }

    #[test]
    fn booleans_use_the_lexicon() {
        assert!(findings("sync = on", "sync == true").is_empty());
        assert!(findings("sync", "sync == true").is_empty());
        assert_eq!(findings("sync = off", "sync == true")[0].verdict, Verdict::ValueOutOfRange);
        assert_eq!(findings("sync = maybe", "sync == true")[0].verdict, Verdict::WrongType);
    }

    #[test]
    fn conjunction_reports_missing_second_key() {
        let v = findings("have_ssl = true", "have_ssl == true and have_open_ssl == true");
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].verdict, Verdict::MissingKey);
        assert_eq!(v[0].key, "have_open_ssl");
    }

    #[test]
    fn with_needs_partner() {
        let v = findings("ssl_ca = /etc/ca.pem", "with(ssl_ca, ssl_cert)");
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "ssl_cert");
        assert!(findings("ssl_cert = x", "with(ssl_ca, ssl_cert)").is_empty());
        assert!(findings("ssl_ca = a\nssl_cert = b", "with(ssl_ca, ssl_cert)").is_empty());
    }

    #[test]
    fn advisories_never_fail() {
        let v = findings("x = 1", "use(sync)");
        assert_eq!(v[0].verdict, Verdict::AdvisoryOnly);
        assert_eq!(exit_status(&v), 0);
        let v = findings("b = 1", "prefer(a, b)");
        assert_eq!(v[0].verdict, Verdict::AdvisoryOnly);
        assert!(findings("a = 1\nb = 1", "prefer(a, b)").is_empty());
        assert_eq!(exit_status(&findings("x = 1", "recommend(y)")), 0);
    }

    #[test]
    fn format_checkers() {
        assert_eq!(format_matches("absolute path", "/var/lib"), Some(true));
        assert_eq!(format_matches("absolute path", "var/lib"), Some(false));
        assert_eq!(format_matches("email address", "a@b.org"), Some(true));
        assert_eq!(format_matches("email address", "a@@b"), Some(false));
        assert_eq!(format_matches("email address", "@b"), Some(false));
        assert_eq!(format_matches("domain name", "db.example.com"), Some(true));
        assert_eq!(format_matches("domain name", "-bad.com"), Some(false));
        assert_eq!(format_matches("url", "https://example.com:8080/x"), Some(true));
        assert_eq!(format_matches("url", "example.com"), Some(false));
        assert_eq!(format_matches("ip address", "10.0.0.1"), Some(true));
        assert_eq!(format_matches("ip address", "10.0.0.300"), Some(false));
        assert_eq!(format_matches("colour", "red"), None);
        let v = findings("basedir = data", "format(basedir, \"absolute path\")");
        assert_eq!(v[0].verdict, Verdict::FormatMismatch);
        assert!(findings("basedir = \"/opt\"", "format(basedir, \"absolute path\")").is_empty());
    }

    #[test]
    fn or_and_precedence() {
        // (a and b) or c
        let spec = "a == 1 and b == 1 or c == 1";
        assert!(findings("c = 1", spec).is_empty());
        assert!(findings("a = 1\nb = 1", spec).is_empty());
        assert!(!findings("a = 1", spec).is_empty());
    }
}
