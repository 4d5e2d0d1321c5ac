//! Shared generators for integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use specsyn::dsl::{is_valid_keyword, Connective, Relation, Rule, Specification, Value};

pub fn keyword() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_.-]{1,14}".prop_filter("valid keyword", |s| is_valid_keyword(s))
}

pub fn unit() -> impl Strategy<Value = Option<String>> {
    prop_oneof![
        3 => Just(None),
        1 => Just(Some("%".to_string())),
        2 => keyword().prop_map(Some),
    ]
}

pub fn magnitude() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-100_000i64..100_000).prop_map(|i| i as f64),
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

pub fn number() -> impl Strategy<Value = Value> {
    (magnitude(), unit()).prop_map(|(magnitude, unit)| Value::Number { magnitude, unit })
}

pub fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            4 => any::<char>(),
            1 => prop::sample::select(vec!['"', '\\', '\n', '\t', ' ', ',']),
        ],
        0..12,
    )
    .prop_map(|cs| cs.into_iter().collect())
}

/// Payload for `==`, `!=` and set members.
pub fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        number(),
        any::<bool>().prop_map(Value::Boolean),
        keyword().prop_map(Value::KeywordRef),
        text().prop_map(Value::Text),
    ]
}

pub fn rule(relation: Relation) -> BoxedStrategy<Rule> {
    let values: BoxedStrategy<Vec<Value>> = match relation {
        Relation::Use | Relation::Recommend => Just(vec![]).boxed(),
        Relation::Eq | Relation::Neq => scalar().prop_map(|v| vec![v]).boxed(),
        Relation::Gt | Relation::Lt => number().prop_map(|v| vec![v]).boxed(),
        Relation::Interval => (magnitude(), magnitude(), unit())
            .prop_map(|(a, b, unit)| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                vec![
                    Value::Number { magnitude: lo, unit: unit.clone() },
                    Value::Number { magnitude: hi, unit },
                ]
            })
            .boxed(),
        Relation::SetMembership => prop::collection::vec(scalar(), 2..5).boxed(),
        Relation::With | Relation::Prefer => keyword().prop_map(|k| vec![Value::KeywordRef(k)]).boxed(),
        Relation::StringFormat => text().prop_map(|f| vec![Value::FormatClass(f)]).boxed(),
    };
    (keyword(), values)
        .prop_map(move |(k, v)| Rule::new(k, relation, v).expect("generated rule is valid"))
        .boxed()
}

pub fn any_rule() -> impl Strategy<Value = Rule> {
    prop::sample::select(Relation::ALL.to_vec()).prop_flat_map(rule)
}

fn connective() -> impl Strategy<Value = Connective> {
    prop_oneof![Just(Connective::And), Just(Connective::Or)]
}

/// Specification whose first rule has `first`'s relation.
pub fn spec_starting_with(first: Relation) -> BoxedStrategy<Specification> {
    (
        rule(first),
        prop::collection::vec((connective(), any_rule()), 0..3),
    )
        .prop_map(|(r0, rest)| {
            let (conns, mut rules): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
            rules.insert(0, r0);
            Specification::new(rules, conns).expect("connective count matches")
        })
        .boxed()
}

pub fn spec() -> impl Strategy<Value = Specification> {
    prop::sample::select(Relation::ALL.to_vec()).prop_flat_map(spec_starting_with)
}

/// `n` specifications from a fixed-seed runner, cycling the relation of
/// the first rule through all relations.
pub fn sample_specs(n: usize) -> Vec<Specification> {
    let mut runner = TestRunner::deterministic();
    (0..n)
        .map(|i| {
            spec_starting_with(Relation::ALL[i % Relation::ALL.len()])
                .new_tree(&mut runner)
                .expect("strategy yields a value")
                .current()
        })
        .collect()
}
