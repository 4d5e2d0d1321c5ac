mod common;

use proptest::prelude::*;
use specsyn::dsl::{infer_category, parse_spec, print_spec, Category, Relation, Specification};

fn expected_category(r: Relation) -> Category {
    match r {
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

/// Byte offsets of `s` that lie outside string literals.
fn unquoted_offsets(s: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        out.push(i);
        if c == '"' {
            in_str = true;
        }
    }
    out.push(s.len());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_then_parse_is_identity(s in common::spec()) {
        let text = print_spec(&s);
        prop_assert_eq!(parse_spec(&text).unwrap(), s, "{}", text);
    }

    #[test]
    fn printing_is_canonical(s in common::spec()) {
        let once = print_spec(&s);
        let again = print_spec(&parse_spec(&once).unwrap());
        prop_assert_eq!(&once, &again);
        let offsets = unquoted_offsets(&once);
        let doubled = offsets.windows(2).any(|w| {
            w[1] == w[0] + 1 && once[w[0]..].starts_with("  ")
        });
        prop_assert!(!doubled, "{}", once);
        prop_assert_eq!(once.trim(), once.as_str());
    }

    #[test]
    fn category_is_total(s in common::spec()) {
        prop_assert_eq!(infer_category(&s), expected_category(s.rules()[0].relation()));
    }

    #[test]
    fn illegal_characters_are_rejected(
        s in common::spec(),
        c in prop::sample::select(vec!['@', '$', '`', '~', '^', '&', '|', ';', '?', '*', '+', '/', '\\', ':', '\'', '\n']),
        pick in any::<prop::sample::Index>(),
    ) {
        let text = print_spec(&s);
        let offsets = unquoted_offsets(&text);
        let at = offsets[pick.index(offsets.len())];
        let mut bad = text.clone();
        bad.insert(at, c);
        prop_assert!(parse_spec(&bad).is_err(), "{:?} parsed", bad);
    }

    #[test]
    fn whitespace_variants_parse_equal(s in common::spec()) {
        let text = print_spec(&s);
        let offsets = unquoted_offsets(&text);
        // widen every unquoted space
        let mut wide = String::new();
        let mut last = 0;
        for &i in &offsets {
            if i < text.len() && text.as_bytes()[i] == b' ' {
                wide.push_str(&text[last..i]);
                wide.push_str(" \t ");
                last = i + 1;
            }
        }
        wide.push_str(&text[last..]);
        prop_assert_eq!(parse_spec(&wide).unwrap(), s);
    }
}

#[test]
fn sampler_covers_every_relation() {
    let specs: Vec<Specification> = common::sample_specs(110);
    for r in Relation::ALL {
        assert!(specs.iter().any(|s| s.rules()[0].relation() == r), "{r:?}");
    }
}
