use std::fmt::Write;

use super::{Relation, Rule, Specification, Value};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical text of a single value. Numbers use the shortest
/// representation that reads back to the same `f64`.
pub fn print_value(v: &Value) -> String {
    match v {
        Value::Number { magnitude, unit } => match unit {
            Some(u) => format!("{magnitude} {u}"),
            None => format!("{magnitude}"),
        },
        Value::Boolean(b) => b.to_string(),
        Value::KeywordRef(k) => k.clone(),
        Value::FormatClass(s) | Value::Text(s) => quote(s),
    }
}

fn print_rule(out: &mut String, r: &Rule) {
    let key = r.keyword();
    let vals: Vec<String> = r.values().iter().map(print_value).collect();
    // write! into a String cannot fail
    let _ = match r.relation() {
        Relation::Eq | Relation::Neq | Relation::Gt | Relation::Lt => {
            write!(out, "{key} {} {}", r.relation(), vals[0])
        }
        Relation::Interval => write!(out, "{key} in [{}]", vals.join(", ")),
        Relation::SetMembership => write!(out, "{key} in {{{}}}", vals.join(", ")),
        Relation::Use => write!(out, "use({key})"),
        Relation::Recommend => write!(out, "recommend({key})"),
        Relation::With => write!(out, "with({key}, {})", vals[0]),
        Relation::Prefer => write!(out, "prefer({key}, {})", vals[0]),
        Relation::StringFormat => write!(out, "format({key}, {})", vals[0]),
    };
}

/// Prints the single canonical form of `spec`.
pub fn print_spec(spec: &Specification) -> String {
    let mut out = String::new();
    print_rule(&mut out, &spec.rules()[0]);
    for (conn, rule) in spec.connectives().iter().zip(&spec.rules()[1..]) {
        let _ = write!(out, " {conn} ");
        print_rule(&mut out, rule);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;

    fn single(r: Rule) -> String {
        print_spec(&Specification::single(r))
    }

    #[test]
    fn examples() {
        assert_eq!(
            single(Rule::new("user_port", Relation::Gt, vec![Value::number(1500.0)]).unwrap()),
            "user_port > 1500"
        );
        assert_eq!(
            single(Rule::new("sync", Relation::Use, vec![]).unwrap()),
            "use(sync)"
        );
        assert_eq!(
            single(
                Rule::new(
                    "p",
                    Relation::StringFormat,
                    vec![Value::FormatClass("absolute path".into())]
                )
                .unwrap()
            ),
            "format(p, \"absolute path\")"
        );
    }

    #[test]
    fn numbers_have_no_superfluous_zeros() {
        assert_eq!(print_value(&Value::number(2.50)), "2.5");
        assert_eq!(print_value(&Value::number(7.0)), "7");
        assert_eq!(print_value(&Value::number(-0.125)), "-0.125");
        assert_eq!(print_value(&Value::number(1e21)), "1000000000000000000000");
    }

    #[test]
    fn canonical_spacing() {
        for s in [
            "max_rows in [2, 7]",
            "x in {1 mb, 2 %, true, \"a\", y}",
            "a == true and b != false or c < 3",
            "with(ssl_ca, ssl_cert)",
            "prefer(a, b)",
            "recommend(--ssl-ca)",
        ] {
            assert_eq!(print_spec(&parse_spec(s).unwrap()), s);
        }
        assert_eq!(
            print_spec(&parse_spec("  x  in [2,7]  ").unwrap()),
            "x in [2, 7]"
        );
    }
}
