//! Pseudo-sentence rendering: the text form of a scenario fed to the
//! semantic encoder.

use serde::{Deserialize, Serialize};

use crate::ingest::ScenarioRecord;
use crate::schema::{self, FieldSchema};

pub const SEPARATOR: &str = ", ";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PseudoSentence {
    pub source_id: String,
    pub text: String,
    pub field_count: usize,
}

/// Commas would collide with the field separator and newlines are not
/// allowed in a sentence.
fn clean_value(value: &str) -> String {
    value
        .trim()
        .replace(',', ";")
        .replace(['\r', '\n'], " ")
}

pub fn build_pseudo_sentence(record: &ScenarioRecord, schema: &FieldSchema) -> PseudoSentence {
    let mut parts: Vec<String> = Vec::new();
    let mut push = |field: &str, value: String| {
        if schema.render_field_names {
            parts.push(format!("{}: {}", schema::field_label(field), value));
        } else {
            parts.push(value);
        }
    };

    for field in schema.field_order() {
        let value = match field {
            schema::COUNTERMEASURE_NAME => Some(clean_value(&record.countermeasure_name)),
            schema::START_YEAR => match (record.start_year, record.end_year) {
                (Some(s), Some(e)) => Some(format!("from {s} to {e}")),
                _ => None,
            },
            schema::END_YEAR => None,
            other => record.get(other).map(clean_value),
        };
        if let Some(v) = value.filter(|v| !v.is_empty()) {
            push(field, v);
        }
    }

    PseudoSentence {
        source_id: record.id.clone(),
        field_count: parts.len(),
        text: parts.join(SEPARATOR),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::schema::Facility;

    fn roadway() -> FieldSchema {
        FieldSchema::for_facility(Facility::Roadway)
    }

    #[test]
    fn table_example_renders_in_order() {
        let rec = ScenarioRecord::new("1", Facility::Roadway, "Widen paved shoulder from 3 ft to 4 ft", 0.9)
            .with(schema::AREA_TYPE, "Rural")
            .with(schema::COUNTERMEASURE_CATEGORY, "Shoulder treatments");
        let s = build_pseudo_sentence(&rec, &roadway());
        assert_eq!(
            s.text,
            "Widen paved shoulder from 3 ft to 4 ft, Shoulder treatments, Rural"
        );
        assert_eq!(s.field_count, 3);
        assert_eq!(s.source_id, "1");
    }

    #[test]
    fn name_only_record() {
        let rec = ScenarioRecord::new("1", Facility::Roadway, "Install rumble strips", 0.8);
        let s = build_pseudo_sentence(&rec, &roadway());
        assert_eq!(s.text, "Install rumble strips");
        assert_eq!(s.field_count, 1);
    }

    #[test]
    fn six_fields_five_separators() {
        let rec = ScenarioRecord::new("1", Facility::Roadway, "Add lighting", 0.8)
            .with(schema::COUNTERMEASURE_CATEGORY, "Highway lighting")
            .with(schema::CRASH_TYPE, "All")
            .with(schema::AREA_TYPE, "Urban")
            .with(schema::ROADWAY_TYPE, "Principal Arterial")
            .with_years(Some(2001), Some(2006));
        let s = build_pseudo_sentence(&rec, &roadway());
        assert_eq!(s.field_count, 6);
        assert_eq!(s.text.matches(SEPARATOR).count(), 5);
        assert!(s.text.contains("from 2001 to 2006"));
    }

    #[test]
    fn single_year_is_skipped() {
        let rec = ScenarioRecord::new("1", Facility::Roadway, "x", 0.8).with_years(Some(2001), None);
        assert_eq!(build_pseudo_sentence(&rec, &roadway()).text, "x");
    }

    #[test]
    fn commas_and_newlines_in_values_are_neutralized() {
        let rec = ScenarioRecord::new("1", Facility::Roadway, "Convert, then\nrestripe", 0.8)
            .with(schema::AREA_TYPE, "Rural, flat");
        let s = build_pseudo_sentence(&rec, &roadway());
        assert_eq!(s.text, "Convert; then restripe, Rural; flat");
        assert_eq!(s.text.matches(SEPARATOR).count(), s.field_count - 1);
    }

    #[test]
    fn field_names_can_be_rendered() {
        let mut schema = roadway();
        schema.render_field_names = true;
        let rec = ScenarioRecord::new("1", Facility::Roadway, "x", 0.8).with(schema::AREA_TYPE, "Rural");
        assert_eq!(
            build_pseudo_sentence(&rec, &schema).text,
            "countermeasure: x, area type: Rural"
        );
    }

    #[test]
    fn intersection_block_uses_intersection_fields() {
        let schema = FieldSchema::for_facility(Facility::Intersection);
        let rec = ScenarioRecord::new("1", Facility::Intersection, "Add signal", 0.8)
            .with(schema::INTERSECTION_TYPE, "Four-leg")
            .with(schema::ROADWAY_TYPE, "ignored for intersections");
        assert_eq!(build_pseudo_sentence(&rec, &schema).text, "Add signal, Four-leg");
    }

    fn value() -> impl Strategy<Value = Option<String>> {
        proptest::option::of("[A-Za-z0-9 ]{1,8}[A-Za-z0-9]")
    }

    proptest! {
        #[test]
        fn no_newlines_and_count_matches(name in "[a-z]{1,10}", area in value(), crash in value(), years in proptest::option::of((1990i32..2020, 1990i32..2020))) {
            let mut rec = ScenarioRecord::new("p", Facility::Roadway, name, 1.0);
            if let Some(a) = area { rec = rec.with(schema::AREA_TYPE, a); }
            if let Some(c) = crash { rec = rec.with(schema::CRASH_TYPE, c); }
            if let Some((s, e)) = years { rec = rec.with_years(Some(s), Some(e)); }
            let s = build_pseudo_sentence(&rec, &roadway());
            prop_assert!(!s.text.contains('\n'));
            prop_assert_eq!(s.text.matches(SEPARATOR).count() + 1, s.field_count);
        }

        #[test]
        fn differing_present_field_changes_sentence(a in "[A-Za-z]{1,8}", b in "[A-Za-z]{1,8}") {
            prop_assume!(a != b);
            let base = ScenarioRecord::new("p", Facility::Roadway, "x", 1.0);
            let s1 = build_pseudo_sentence(&base.clone().with(schema::COUNTRY, a), &roadway());
            let s2 = build_pseudo_sentence(&base.with(schema::COUNTRY, b), &roadway());
            prop_assert_ne!(s1.text, s2.text);
        }

        #[test]
        fn insertion_order_does_not_matter(area in "[A-Za-z]{1,8}", crash in "[A-Za-z]{1,8}") {
            let base = ScenarioRecord::new("p", Facility::Roadway, "x", 1.0);
            let r1 = base.clone().with(schema::AREA_TYPE, area.clone()).with(schema::CRASH_TYPE, crash.clone());
            let r2 = base.with(schema::CRASH_TYPE, crash).with(schema::AREA_TYPE, area);
            prop_assert_eq!(build_pseudo_sentence(&r1, &roadway()), build_pseudo_sentence(&r2, &roadway()));
        }
    }
}
