//! Seeded synthetic scenario data with a known CMF-generating function.
//!
//! The true CMF is additive in three effects: a treatment token inside the
//! countermeasure name, the area type, and the crash severity. Every other
//! field is drawn independently of the target (and sometimes left missing),
//! and the rest of the name is filler drawn from small word lists.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::ingest::{Dataset, ScenarioRecord};
use crate::schema::{self, Facility, FieldSchema};

/// Treatment tokens and their base CMF.
pub const TREATMENTS: [(&str, f64); 8] = [
    ("lighting", 0.72),
    ("rumble", 0.84),
    ("median", 0.66),
    ("signage", 0.93),
    ("resurfacing", 1.02),
    ("narrowing", 1.22),
    ("parking", 1.34),
    ("chevrons", 0.78),
];

pub const AREA_EFFECTS: [(&str, f64); 3] = [("Urban", 0.06), ("Rural", -0.08), ("Suburban", 0.0)];

pub const SEVERITY_EFFECTS: [(&str, f64); 4] = [
    ("Fatal", -0.10),
    ("Serious injury", -0.04),
    ("Minor injury", 0.03),
    ("Property damage only", 0.09),
];

const VERBS: [&str; 6] = ["install", "add", "provide", "implement", "apply", "upgrade"];
const PLACES: [&str; 12] = [
    "on curves",
    "at approaches",
    "along corridor",
    "near schools",
    "on bridges",
    "in work zones",
    "at ramps",
    "on tangents",
    "near transit stops",
    "on grades",
    "at crossings",
    "in downtown",
];

const CATEGORIES: [&str; 5] = ["Roadway", "Signs", "Lighting", "Delineation", "Access management"];
const CRASH_TYPES: [&str; 5] = ["All", "Rear end", "Head on", "Angle", "Run off road"];
const TIMES: [&str; 3] = ["All", "Day time", "Night time"];
const STATES: [&str; 6] = ["CA", "TX", "NC", "FL", "MN", "WA"];
const ROADWAY_TYPES: [&str; 3] = ["Principal arterial", "Minor arterial", "Collector"];
const DIVISIONS: [&str; 2] = ["Divided", "Undivided"];
const LANES: [&str; 4] = ["1", "2", "3", "4"];
const INTERSECTION_TYPES: [&str; 2] = ["Roadway/roadway", "Roadway/rail"];
const GEOMETRIES: [&str; 2] = ["3-leg", "4-leg"];
const CONTROLS: [&str; 3] = ["Signalized", "Stop-controlled", "Uncontrolled"];
const PRIORS: [&str; 3] = ["Existing curb", "No prior treatment", "Previous overlay"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub facility: Facility,
    pub records: usize,
    pub noise_sd: f64,
    /// Probability that a distractor field is left empty.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            facility: Facility::Roadway,
            records: 2000,
            noise_sd: 0.03,
            missing_rate: 0.15,
            seed: 7,
        }
    }
}

/// Noise-free CMF for a treatment/area/severity combination.
pub fn true_cmf(treatment: usize, area: usize, severity: usize) -> f64 {
    TREATMENTS[treatment].1 + AREA_EFFECTS[area].1 + SEVERITY_EFFECTS[severity].1
}

pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sd)
        .map_err(|e| crate::Error::Config(format!("invalid noise sd: {e}")))?;
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).expect("non-empty");

    let mut records = Vec::with_capacity(config.records);
    for i in 0..config.records {
        let t = rng.gen_range(0..TREATMENTS.len());
        let a = rng.gen_range(0..AREA_EFFECTS.len());
        let s = rng.gen_range(0..SEVERITY_EFFECTS.len());
        let cmf = (true_cmf(t, a, s) + noise.sample(&mut rng)).clamp(0.05, 2.0);
        let name = format!("{} {} {}", pick(&mut rng, &VERBS), TREATMENTS[t].0, pick(&mut rng, &PLACES));
        let mut r = ScenarioRecord::new(format!("syn-{i:05}"), config.facility, name, cmf)
            .with(schema::AREA_TYPE, AREA_EFFECTS[a].0)
            .with(schema::CRASH_SEVERITY, SEVERITY_EFFECTS[s].0);

        let mut distractors: Vec<(&str, &str)> = vec![
            (schema::COUNTERMEASURE_CATEGORY, pick(&mut rng, &CATEGORIES)),
            (schema::CRASH_TYPE, pick(&mut rng, &CRASH_TYPES)),
            (schema::CRASH_TIME_OF_DAY, pick(&mut rng, &TIMES)),
            (schema::COUNTRY, "USA"),
            (schema::STATE_CITY, pick(&mut rng, &STATES)),
        ];
        match config.facility {
            Facility::Roadway => distractors.extend([
                (schema::ROADWAY_TYPE, pick(&mut rng, &ROADWAY_TYPES)),
                (schema::ROAD_DIVISION_TYPE, pick(&mut rng, &DIVISIONS)),
                (schema::NUMBER_OF_LANES, pick(&mut rng, &LANES)),
                (schema::ROADWAY_PRIOR_CONDITION, pick(&mut rng, &PRIORS)),
            ]),
            Facility::Intersection => distractors.extend([
                (schema::INTERSECTION_TYPE, pick(&mut rng, &INTERSECTION_TYPES)),
                (schema::INTERSECTION_GEOMETRY, pick(&mut rng, &GEOMETRIES)),
                (schema::TRAFFIC_CONTROL_TYPE, pick(&mut rng, &CONTROLS)),
                (schema::INTERSECTION_PRIOR_CONDITION, pick(&mut rng, &PRIORS)),
            ]),
        }
        for (field, value) in distractors {
            if !rng.gen_bool(config.missing_rate) {
                r = r.with(field, value);
            }
        }
        let start = rng.gen_range(1985..2016);
        let end = start + rng.gen_range(1..6);
        let years = if rng.gen_bool(config.missing_rate) {
            (None, None)
        } else {
            (Some(start), Some(end))
        };
        records.push(r.with_years(years.0, years.1));
    }
    Dataset::new(FieldSchema::for_facility(config.facility), records)
}
