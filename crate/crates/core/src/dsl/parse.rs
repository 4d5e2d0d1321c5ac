use super::{is_dsl_number, Connective, DslError, Relation, Rule, Specification, Value};

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Op(Relation),
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Percent,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(_) => "string".into(),
            Tok::Op(r) => format!("`{r}`"),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Percent => "`%`".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, DslError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c == ' ' || c == '\t' {
            chars.next();
            continue;
        }
        let simple = match c {
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '%' => Some(Tok::Percent),
            '>' => Some(Tok::Op(Relation::Gt)),
            '<' => Some(Tok::Op(Relation::Lt)),
            _ => None,
        };
        if let Some(tok) = simple {
            chars.next();
            out.push((pos, tok));
            continue;
        }
        match c {
            '=' | '!' => {
                chars.next();
                match chars.peek() {
                    Some(&(_, '=')) => {
                        chars.next();
                        let rel = if c == '=' { Relation::Eq } else { Relation::Neq };
                        out.push((pos, Tok::Op(rel)));
                    }
                    _ => {
                        return Err(DslError::Syntax {
                            position: pos,
                            expected: format!("`{c}=`"),
                            found: format!("`{c}`"),
                        })
                    }
                }
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, '"')) => break,
                        Some((epos, '\\')) => match chars.next() {
                            Some((_, '"')) => s.push('"'),
                            Some((_, '\\')) => s.push('\\'),
                            Some((_, 'n')) => s.push('\n'),
                            Some((_, 't')) => s.push('\t'),
                            other => {
                                return Err(DslError::Syntax {
                                    position: epos,
                                    expected: "escape sequence".into(),
                                    found: other
                                        .map(|(_, c)| format!("`\\{c}`"))
                                        .unwrap_or_else(|| "end of input".into()),
                                })
                            }
                        },
                        Some((_, ch)) => s.push(ch),
                        None => {
                            return Err(DslError::Syntax {
                                position: text.len(),
                                expected: "closing `\"`".into(),
                                found: "end of input".into(),
                            })
                        }
                    }
                }
                out.push((pos, Tok::Str(s)));
            }
            c if is_word_char(c) => {
                let mut w = String::new();
                while let Some(&(_, ch)) = chars.peek() {
                    if !is_word_char(ch) {
                        break;
                    }
                    w.push(ch);
                    chars.next();
                }
                out.push((pos, Tok::Word(w)));
            }
            other => {
                return Err(DslError::Syntax {
                    position: pos,
                    expected: "a token".into(),
                    found: format!("`{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Tok> {
        self.toks.get(self.idx + ahead).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map_or(self.len, |(p, _)| *p)
    }

    fn error(&self, expected: &str) -> DslError {
        DslError::Syntax {
            position: self.pos(),
            expected: expected.to_string(),
            found: self
                .peek()
                .map_or_else(|| "end of input".to_string(), Tok::describe),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), DslError> {
        if self.peek() == Some(&want) {
            self.idx += 1;
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn keyword(&mut self) -> Result<String, DslError> {
        match self.peek() {
            Some(Tok::Word(w)) if super::is_valid_keyword(w) => {
                let w = w.clone();
                self.idx += 1;
                Ok(w)
            }
            _ => Err(self.error("keyword")),
        }
    }

    fn spec(&mut self) -> Result<Specification, DslError> {
        let mut rules = vec![self.rule()?];
        let mut connectives = Vec::new();
        while let Some(tok) = self.peek() {
            let conn = match tok {
                Tok::Word(w) if w == "and" => Connective::And,
                Tok::Word(w) if w == "or" => Connective::Or,
                _ => return Err(self.error("`and`, `or` or end of input")),
            };
            self.idx += 1;
            connectives.push(conn);
            rules.push(self.rule()?);
        }
        Specification::new(rules, connectives)
    }

    fn rule(&mut self) -> Result<Rule, DslError> {
        if let (Some(Tok::Word(w)), Some(Tok::LParen)) = (self.peek(), self.peek_at(1)) {
            let rel = match w.as_str() {
                "use" => Some(Relation::Use),
                "recommend" => Some(Relation::Recommend),
                "with" => Some(Relation::With),
                "prefer" => Some(Relation::Prefer),
                "format" => Some(Relation::StringFormat),
                _ => None,
            };
            if let Some(rel) = rel {
                self.idx += 2;
                return self.call(rel);
            }
        }
        let key = self.keyword()?;
        match self.bump() {
            Some(Tok::Op(rel)) => {
                let v = self.value()?;
                Rule::new(key, rel, vec![v])
            }
            Some(Tok::Word(w)) if w == "in" => match self.bump() {
                Some(Tok::LBracket) => {
                    let vals = self.value_list(Tok::RBracket, "`,` or `]`")?;
                    Rule::new(key, Relation::Interval, vals)
                }
                Some(Tok::LBrace) => {
                    let vals = self.value_list(Tok::RBrace, "`,` or `}`")?;
                    Rule::new(key, Relation::SetMembership, vals)
                }
                _ => {
                    self.idx -= 1;
                    Err(self.error("`[` or `{`"))
                }
            },
            Some(_) => {
                self.idx -= 1;
                Err(self.error("relation operator or `in`"))
            }
            None => Err(self.error("relation operator or `in`")),
        }
    }

    fn call(&mut self, rel: Relation) -> Result<Rule, DslError> {
        let key = self.keyword()?;
        let mut vals = Vec::new();
        while self.peek() == Some(&Tok::Comma) {
            self.idx += 1;
            let v = if rel == Relation::StringFormat {
                match self.peek() {
                    Some(Tok::Str(s)) => {
                        let s = s.clone();
                        self.idx += 1;
                        Value::FormatClass(s)
                    }
                    _ => return Err(self.error("format string")),
                }
            } else {
                Value::KeywordRef(self.keyword()?)
            };
            vals.push(v);
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        Rule::new(key, rel, vals)
    }

    fn value_list(&mut self, close: Tok, what: &str) -> Result<Vec<Value>, DslError> {
        let mut vals = vec![self.value()?];
        loop {
            match self.peek() {
                Some(Tok::Comma) => {
                    self.idx += 1;
                    vals.push(self.value()?);
                }
                Some(t) if *t == close => {
                    self.idx += 1;
                    return Ok(vals);
                }
                _ => return Err(self.error(what)),
            }
        }
    }

    fn value(&mut self) -> Result<Value, DslError> {
        match self.peek().cloned() {
            Some(Tok::Str(s)) => {
                self.idx += 1;
                Ok(Value::Text(s))
            }
            Some(Tok::Word(w)) if w == "true" || w == "false" => {
                self.idx += 1;
                Ok(Value::Boolean(w == "true"))
            }
            Some(Tok::Word(w)) if is_dsl_number(&w) => {
                self.idx += 1;
                let magnitude: f64 = w.parse().map_err(|_| DslError::Syntax {
                    position: self.pos(),
                    expected: "number".into(),
                    found: w.clone(),
                })?;
                let unit = match self.peek() {
                    Some(Tok::Percent) => {
                        self.idx += 1;
                        Some("%".to_string())
                    }
                    Some(Tok::Word(u)) if super::is_valid_keyword(u) => {
                        let u = u.clone();
                        self.idx += 1;
                        Some(u)
                    }
                    _ => None,
                };
                Ok(Value::Number { magnitude, unit })
            }
            Some(Tok::Word(w)) if super::is_valid_keyword(&w) => {
                self.idx += 1;
                Ok(Value::KeywordRef(w))
            }
            _ => Err(self.error("value")),
        }
    }
}

/// Parses one specification in the canonical grammar.
///
/// Whitespace between tokens is free-form, so `x in [2,7]` and
/// `x in [2, 7]` parse to the same value.
pub fn parse_spec(text: &str) -> Result<Specification, DslError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        idx: 0,
        len: text.len(),
    };
    p.spec()
}

/// Parses a spec file: one specification per line, `#` comment lines and
/// blank lines skipped. Errors carry the 1-based line number.
pub fn parse_spec_file(text: &str) -> Result<Vec<Specification>, (usize, DslError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| parse_spec(l.trim()).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(s: &str) -> Rule {
        let spec = parse_spec(s).unwrap();
        assert_eq!(spec.rules().len(), 1);
        spec.rules()[0].clone()
    }

    #[test]
    fn greater_than() {
        assert_eq!(
            rule("user_port > 1500"),
            Rule::new("user_port", Relation::Gt, vec![Value::number(1500.0)]).unwrap()
        );
    }

    #[test]
    fn interval() {
        assert_eq!(
            rule("max_rows in [2, 7]"),
            Rule::new(
                "max_rows",
                Relation::Interval,
                vec![Value::number(2.0), Value::number(7.0)]
            )
            .unwrap()
        );
        assert_eq!(rule("max_rows in [2,7]"), rule("max_rows in [2, 7]"));
    }

    #[test]
    fn conjunction() {
        let spec = parse_spec("have_ssl == true and have_open_ssl == true").unwrap();
        assert_eq!(spec.rules().len(), 2);
        assert_eq!(spec.connectives(), &[Connective::And]);
        assert_eq!(spec.rules()[1].keyword(), "have_open_ssl");
        assert_eq!(spec.rules()[1].values(), &[Value::Boolean(true)]);
    }

    #[test]
    fn interval_order_rejected() {
        assert_eq!(
            parse_spec("x in [7, 2]").unwrap_err(),
            DslError::IntervalOrder { lo: 7.0, hi: 2.0 }
        );
    }

    #[test]
    fn arity_errors() {
        assert!(matches!(
            parse_spec("x in [1, 2, 3]").unwrap_err(),
            DslError::Arity { got: 3, .. }
        ));
        assert!(matches!(
            parse_spec("x in {1}").unwrap_err(),
            DslError::Arity { got: 1, .. }
        ));
        assert!(matches!(
            parse_spec("use(a, b)").unwrap_err(),
            DslError::Arity { got: 1, .. }
        ));
        assert!(matches!(
            parse_spec("with(a)").unwrap_err(),
            DslError::Arity { got: 0, .. }
        ));
    }

    #[test]
    fn units_and_sets() {
        let r = rule("buffer in {1 mb, 2 mb, 10 %}");
        assert_eq!(r.relation(), Relation::SetMembership);
        assert_eq!(r.values()[2], Value::number_with_unit(10.0, "%"));
        let r = rule("timeout > 30 ms");
        assert_eq!(r.values()[0], Value::number_with_unit(30.0, "ms"));
    }

    #[test]
    fn function_forms() {
        assert_eq!(rule("use(sync)").relation(), Relation::Use);
        assert_eq!(rule("use ( sync )"), rule("use(sync)"));
        let r = rule("format(p, \"absolute path\")");
        assert_eq!(r.values(), &[Value::FormatClass("absolute path".into())]);
        let r = rule("prefer(a, b)");
        assert_eq!(r.values(), &[Value::keyword("b")]);
    }

    #[test]
    fn keywords_named_like_functions() {
        let r = rule("use == 5");
        assert_eq!(r.keyword(), "use");
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_spec("x >").unwrap_err() {
            DslError::Syntax {
                position, found, ..
            } => {
                assert_eq!(position, 3);
                assert_eq!(found, "end of input");
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            parse_spec("x = 5").unwrap_err(),
            DslError::Syntax { position: 2, .. }
        ));
        assert!(matches!(
            parse_spec("x > 5 xor y > 3").unwrap_err(),
            DslError::Syntax { .. }
        ));
        assert!(matches!(parse_spec("").unwrap_err(), DslError::Syntax { .. }));
        assert!(matches!(
            parse_spec("and > 5").unwrap_err(),
            DslError::Syntax { .. }
        ));
        assert!(matches!(
            parse_spec("x > 5 @").unwrap_err(),
            DslError::Syntax { position: 6, .. }
        ));
    }

    #[test]
    fn string_escapes() {
        let r = rule(r#"motd == "say \"hi\"\n""#);
        assert_eq!(r.values(), &[Value::Text("say \"hi\"\n".into())]);
    }

    #[test]
    fn spec_file_skips_comments() {
        let specs = parse_spec_file("# mined\n\nuser_port > 1500\n  # x\nuse(sync)\n").unwrap();
        assert_eq!(specs.len(), 2);
        let err = parse_spec_file("use(sync)\nx >\n").unwrap_err();
        assert_eq!(err.0, 2);
    }
}
