//! Field layout shared by ingestion, pseudo-sentence rendering and encoding.
//!
//! The canonical order of fields is versioned: it determines the order in
//! which values appear in a pseudo sentence, so changing it changes every
//! embedding downstream.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "cmf-fields/1";

pub const COUNTERMEASURE_NAME: &str = "countermeasure_name";
pub const COUNTERMEASURE_CATEGORY: &str = "countermeasure_category";
pub const COUNTERMEASURE_SUBCATEGORY: &str = "countermeasure_subcategory";
pub const CRASH_TYPE: &str = "crash_type";
pub const CRASH_TIME_OF_DAY: &str = "crash_time_of_day";
pub const CRASH_SEVERITY: &str = "crash_severity";
pub const AREA_TYPE: &str = "area_type";
pub const COUNTRY: &str = "country";
pub const STATE_CITY: &str = "state_city";
pub const START_YEAR: &str = "start_year";
pub const END_YEAR: &str = "end_year";
pub const INTERSECTION_TYPE: &str = "intersection_type";
pub const INTERSECTION_GEOMETRY: &str = "intersection_geometry";
pub const TRAFFIC_CONTROL_TYPE: &str = "traffic_control_type";
pub const INTERSECTION_PRIOR_CONDITION: &str = "intersection_prior_condition";
pub const ROADWAY_TYPE: &str = "roadway_type";
pub const ROAD_DIVISION_TYPE: &str = "road_division_type";
pub const NUMBER_OF_LANES: &str = "number_of_lanes";
pub const ROADWAY_PRIOR_CONDITION: &str = "roadway_prior_condition";
pub const CMF: &str = "cmf";

const SHARED_CATEGORICAL: [&str; 8] = [
    COUNTERMEASURE_CATEGORY,
    COUNTERMEASURE_SUBCATEGORY,
    CRASH_TYPE,
    CRASH_TIME_OF_DAY,
    CRASH_SEVERITY,
    AREA_TYPE,
    COUNTRY,
    STATE_CITY,
];

const INTERSECTION_CATEGORICAL: [&str; 3] =
    [INTERSECTION_TYPE, INTERSECTION_GEOMETRY, TRAFFIC_CONTROL_TYPE];
const ROADWAY_CATEGORICAL: [&str; 3] = [ROADWAY_TYPE, ROAD_DIVISION_TYPE, NUMBER_OF_LANES];

/// Placeholder cell values that mean "no value" (compared case-insensitively).
pub const DEFAULT_PLACEHOLDERS: [&str; 6] = ["", "n/a", "na", "-", "unspecified", "not specified"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facility {
    Roadway,
    Intersection,
}

impl Facility {
    pub const ALL: [Facility; 2] = [Facility::Roadway, Facility::Intersection];

    pub fn as_str(self) -> &'static str {
        match self {
            Facility::Roadway => "roadway",
            Facility::Intersection => "intersection",
        }
    }

    /// Field holding the site-condition type used for subgroup grids.
    pub fn site_condition_field(self) -> &'static str {
        match self {
            Facility::Roadway => ROADWAY_TYPE,
            Facility::Intersection => INTERSECTION_TYPE,
        }
    }

    /// Maps a clearinghouse facility label onto a facility, if recognized.
    pub fn from_label(label: &str) -> Option<Facility> {
        let l = label.trim().to_ascii_lowercase();
        if l.starts_with("intersection") {
            Some(Facility::Intersection)
        } else if l.starts_with("roadway") || l == "segment" || l == "road segment" {
            Some(Facility::Roadway)
        } else {
            None
        }
    }
}

impl fmt::Display for Facility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "roadway" => Ok(Facility::Roadway),
            "intersection" => Ok(Facility::Intersection),
            _ => Err(Error::UnknownFacility(s.to_string())),
        }
    }
}

/// Canonical, versioned field order for a facility type: countermeasure
/// fields, crash fields, local-area fields, the time span, then the
/// facility-specific block.
pub fn canonical_field_order(facility: Facility) -> Vec<&'static str> {
    let mut order = vec![
        COUNTERMEASURE_NAME,
        COUNTERMEASURE_CATEGORY,
        COUNTERMEASURE_SUBCATEGORY,
        CRASH_TYPE,
        CRASH_TIME_OF_DAY,
        CRASH_SEVERITY,
        AREA_TYPE,
        COUNTRY,
        STATE_CITY,
        START_YEAR,
        END_YEAR,
    ];
    match facility {
        Facility::Intersection => {
            order.extend(INTERSECTION_CATEGORICAL);
            order.push(INTERSECTION_PRIOR_CONDITION);
        }
        Facility::Roadway => {
            order.extend(ROADWAY_CATEGORICAL);
            order.push(ROADWAY_PRIOR_CONDITION);
        }
    }
    order
}

/// Human-readable label used when field names are rendered into sentences.
pub fn field_label(field: &str) -> &str {
    match field {
        COUNTERMEASURE_NAME => "countermeasure",
        COUNTERMEASURE_CATEGORY => "category",
        COUNTERMEASURE_SUBCATEGORY => "subcategory",
        CRASH_TYPE => "crash type",
        CRASH_TIME_OF_DAY => "crash time of day",
        CRASH_SEVERITY => "crash severity",
        AREA_TYPE => "area type",
        COUNTRY => "country",
        STATE_CITY => "state or city",
        START_YEAR | END_YEAR => "period",
        INTERSECTION_TYPE => "intersection type",
        INTERSECTION_GEOMETRY => "intersection geometry",
        TRAFFIC_CONTROL_TYPE => "traffic control",
        INTERSECTION_PRIOR_CONDITION | ROADWAY_PRIOR_CONDITION => "prior condition",
        ROADWAY_TYPE => "roadway type",
        ROAD_DIVISION_TYPE => "road division",
        NUMBER_OF_LANES => "number of lanes",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub version: String,
    pub facility: Facility,
    pub text_fields: Vec<String>,
    pub categorical_fields: Vec<String>,
    pub numeric_fields: Vec<String>,
    pub target_field: String,
    /// Cell values treated as missing, compared case-insensitively after trimming.
    pub placeholders: Vec<String>,
    /// Render "name: value" instead of bare values in pseudo sentences.
    #[serde(default)]
    pub render_field_names: bool,
}

impl FieldSchema {
    pub fn for_facility(facility: Facility) -> Self {
        let (categorical_block, prior): (&[&str], &str) = match facility {
            Facility::Intersection => (&INTERSECTION_CATEGORICAL, INTERSECTION_PRIOR_CONDITION),
            Facility::Roadway => (&ROADWAY_CATEGORICAL, ROADWAY_PRIOR_CONDITION),
        };
        let categorical_fields = SHARED_CATEGORICAL
            .iter()
            .chain(categorical_block)
            .map(|s| s.to_string())
            .collect();
        FieldSchema {
            version: SCHEMA_VERSION.to_string(),
            facility,
            text_fields: vec![COUNTERMEASURE_NAME.to_string(), prior.to_string()],
            categorical_fields,
            numeric_fields: vec![START_YEAR.to_string(), END_YEAR.to_string()],
            target_field: CMF.to_string(),
            placeholders: DEFAULT_PLACEHOLDERS.iter().map(|s| s.to_string()).collect(),
            render_field_names: false,
        }
    }

    pub fn with_placeholders<I, S>(mut self, placeholders: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.placeholders = placeholders.into_iter().map(Into::into).collect();
        self
    }

    pub fn field_order(&self) -> Vec<&'static str> {
        canonical_field_order(self.facility)
    }

    /// Context fields carried on a record: everything except the
    /// countermeasure name, the years and the target.
    pub fn context_fields(&self) -> impl Iterator<Item = &str> {
        self.categorical_fields
            .iter()
            .chain(self.text_fields.iter().skip(1))
            .map(String::as_str)
    }

    pub fn is_context_field(&self, field: &str) -> bool {
        self.context_fields().any(|f| f == field)
    }

    pub fn is_placeholder(&self, cell: &str) -> bool {
        let cell = cell.trim();
        self.placeholders
            .iter()
            .any(|p| p.trim().eq_ignore_ascii_case(cell))
    }
}
