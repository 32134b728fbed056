mod support;

use proptest::prelude::*;
use support::EXPECTED_TIERS;
use terraseg::schema::SchemaError;
use terraseg::{ClassSchema, Tier};

const NAMES: [&str; 10] = [
    "Trees",
    "Lush Bushes",
    "Dry Grass",
    "Dry Bushes",
    "Ground Clutter",
    "Flowers",
    "Logs",
    "Rocks",
    "Landscape",
    "Sky",
];

#[test]
fn default_schema_has_ten_classes_in_order() {
    let s = ClassSchema::default();
    assert_eq!(s.len(), 10);
    assert_eq!(s.names(), NAMES);
    for (i, c) in s.classes().iter().enumerate() {
        assert_eq!(c.index as usize, i);
        assert_eq!(c.raw_value as usize, 100 + 10 * i);
    }
    assert_eq!(s.ignore_value(), None);
}

#[test]
fn default_weights_match_published_vector() {
    let expected = [1.0, 3.5, 1.2, 1.3, 2.5, 4.5, 5.0, 2.0, 0.6, 0.4];
    assert_eq!(ClassSchema::default().weights(), expected);
}

#[test]
fn default_tiers_match_published_lists() {
    let s = ClassSchema::default();
    for (name, tier) in EXPECTED_TIERS {
        assert_eq!(s.tier(s.index_of(name).unwrap()), Some(tier), "{name}");
    }
    assert_eq!(s.tier(s.index_of("Flowers").unwrap()), Some(Tier::Caution));
}

#[test]
fn raw_value_lookup() {
    let s = ClassSchema::default();
    assert_eq!(s.index_for_raw(100), Some(0));
    assert_eq!(s.index_for_raw(190), Some(9));
    assert_eq!(s.index_for_raw(7), None);
}

fn doc(entries: &[&str]) -> String {
    format!(r#"{{"classes": [{}]}}"#, entries.join(","))
}

const A: &str = r#"{"index": 0, "name": "A", "raw_value": 100, "color": [1,2,3], "weight": 1.0, "tier": "Safe"}"#;

#[test]
fn duplicate_raw_value_is_rejected() {
    let b = r#"{"index": 1, "name": "B", "raw_value": 100, "color": [4,5,6], "weight": 1.0, "tier": "Caution"}"#;
    match ClassSchema::from_json(&doc(&[A, b])) {
        Err(SchemaError::DuplicateRawValue { entry, raw_value, .. }) => {
            assert_eq!(entry, "B");
            assert_eq!(raw_value, 100);
        }
        other => panic!("expected DuplicateRawValue, got {other:?}"),
    }
}

#[test]
fn duplicate_index_is_rejected() {
    let b = r#"{"index": 0, "name": "B", "raw_value": 101, "color": [4,5,6], "weight": 1.0, "tier": "Caution"}"#;
    assert!(matches!(
        ClassSchema::from_json(&doc(&[A, b])),
        Err(SchemaError::DuplicateIndex { .. })
    ));
}

#[test]
fn non_positive_weight_is_rejected() {
    let b = r#"{"index": 1, "name": "B", "raw_value": 101, "color": [4,5,6], "weight": 0.0, "tier": "Caution"}"#;
    assert!(matches!(
        ClassSchema::from_json(&doc(&[A, b])),
        Err(SchemaError::NonPositiveWeight { .. })
    ));
}

#[test]
fn missing_field_names_the_entry() {
    let b = r#"{"index": 1, "name": "B", "raw_value": 101, "color": [4,5,6], "tier": "Caution"}"#;
    assert_eq!(
        ClassSchema::from_json(&doc(&[A, b])),
        Err(SchemaError::MissingField {
            entry: "B".into(),
            field: "weight"
        })
    );
}

#[test]
fn ignore_value_may_not_collide() {
    let text = format!(r#"{{"classes": [{A}], "ignore_value": 100}}"#);
    assert_eq!(ClassSchema::from_json(&text), Err(SchemaError::IgnoreCollision(100)));
}

#[test]
fn default_round_trips_through_json() {
    let s = ClassSchema::default();
    let back = ClassSchema::from_json(&s.to_json()).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.digest(), s.digest());
}

proptest! {
    #[test]
    fn random_schemas_round_trip(
        n in 1usize..20,
        base in 0u8..100,
        weights in prop::collection::vec(0.01f64..100.0, 20),
        ignore in prop::option::of(200u8..=255),
    ) {
        let classes: Vec<_> = (0..n)
            .map(|i| terraseg::ClassDef {
                index: i as u8,
                name: format!("class-{i}"),
                raw_value: base + i as u8,
                color: [i as u8, 0, 255 - i as u8],
                weight: weights[i],
                tier: [Tier::Safe, Tier::Caution, Tier::Obstacle][i % 3],
            })
            .collect();
        let s = ClassSchema::new(classes, ignore).unwrap();
        let again = ClassSchema::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(&again, &s);
        prop_assert_eq!(ClassSchema::from_json(&s.to_json()).unwrap(), again);
    }
}
