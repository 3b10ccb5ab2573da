//! Loading and normalizing CMF Clearinghouse exports.
//!
//! A CSV export is read into [`RawRecord`]s keyed by schema field name (via a
//! [`ColumnMapping`] from export headers), normalized into
//! [`ScenarioRecord`]s, filtered for outlying CMF values and split by
//! facility type.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::schema::{self, Facility, FieldSchema};

pub const ID_FIELD: &str = "id";
pub const FACILITY_FIELD: &str = "facility";

/// Cells of one data row, keyed by mapped field name. Columns without a
/// mapping keep their original header. Values are verbatim apart from
/// surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    /// 1-based data row index (the header is row 0).
    pub row: usize,
    /// Physical line in the source file where the row starts.
    pub line: u64,
    pub cells: BTreeMap<String, String>,
}

impl RawRecord {
    pub fn get(&self, field: &str) -> Option<&str> {
        self.cells.get(field).map(String::as_str)
    }
}

/// Export header → schema field name. Unmapped headers are carried through
/// untouched; mapped fields outside the schema become record extras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub columns: BTreeMap<String, String>,
    #[serde(default)]
    pub placeholders: Option<Vec<String>>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        let pairs = [
            ("CMF ID", ID_FIELD),
            ("Facility Type", FACILITY_FIELD),
            ("Countermeasure", schema::COUNTERMEASURE_NAME),
            ("Category", schema::COUNTERMEASURE_CATEGORY),
            ("Subcategory", schema::COUNTERMEASURE_SUBCATEGORY),
            ("Crash Type", schema::CRASH_TYPE),
            ("Crash Time of Day", schema::CRASH_TIME_OF_DAY),
            ("Crash Severity", schema::CRASH_SEVERITY),
            ("Area Type", schema::AREA_TYPE),
            ("Country", schema::COUNTRY),
            ("State/City", schema::STATE_CITY),
            ("Start Year", schema::START_YEAR),
            ("End Year", schema::END_YEAR),
            ("Intersection Type", schema::INTERSECTION_TYPE),
            ("Intersection Geometry", schema::INTERSECTION_GEOMETRY),
            ("Traffic Control", schema::TRAFFIC_CONTROL_TYPE),
            ("Intersection Prior Condition", schema::INTERSECTION_PRIOR_CONDITION),
            ("Roadway Type", schema::ROADWAY_TYPE),
            ("Road Division Type", schema::ROAD_DIVISION_TYPE),
            ("Number of Lanes", schema::NUMBER_OF_LANES),
            ("Roadway Prior Condition", schema::ROADWAY_PRIOR_CONDITION),
            ("CMF", schema::CMF),
            ("Star Quality Rating", "star_quality"),
        ];
        ColumnMapping {
            columns: pairs
                .iter()
                .map(|(h, f)| (h.to_string(), f.to_string()))
                .collect(),
            placeholders: None,
        }
    }
}

impl ColumnMapping {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn schema(&self, facility: Facility) -> FieldSchema {
        let schema = FieldSchema::for_facility(facility);
        match &self.placeholders {
            Some(p) => schema.with_placeholders(p.iter().cloned()),
            None => schema,
        }
    }

    fn header_for(&self, field: &str) -> Option<&str> {
        self.columns
            .iter()
            .find(|(_, f)| f.as_str() == field)
            .map(|(h, _)| h.as_str())
    }

    fn required_headers(&self) -> Vec<String> {
        [FACILITY_FIELD, schema::COUNTERMEASURE_NAME, schema::CMF]
            .iter()
            .map(|f| self.header_for(f).unwrap_or(f).to_string())
            .collect()
    }
}

/// Reads a CSV export. Fails with the line number on unbalanced quoting and
/// with the list of absent columns when required headers are missing.
pub fn load_clearinghouse_csv(path: &Path, mapping: &ColumnMapping) -> Result<Vec<RawRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_clearinghouse_csv(&bytes, mapping)
}

pub fn parse_clearinghouse_csv(bytes: &[u8], mapping: &ColumnMapping) -> Result<Vec<RawRecord>> {
    check_quote_balance(bytes)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();

    let missing: Vec<String> = mapping
        .required_headers()
        .into_iter()
        .filter(|h| !headers.contains(h))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }

    let keys: Vec<String> = headers
        .iter()
        .map(|h| mapping.columns.get(h).cloned().unwrap_or_else(|| h.clone()))
        .collect();

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(&e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cells = keys
            .iter()
            .cloned()
            .zip(row.iter().map(str::to_string))
            .collect();
        records.push(RawRecord {
            row: i + 1,
            line,
            cells,
        });
    }
    tracing::info!(rows = records.len(), "loaded clearinghouse export");
    Ok(records)
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::CsvParse {
        line,
        message: e.to_string(),
    }
}

/// RFC-4180 quote scan: a quoted field left open at end of input is an error
/// reported at the line where the quote opened.
fn check_quote_balance(bytes: &[u8]) -> Result<()> {
    let mut line = 1u64;
    let mut in_quotes = false;
    let mut opened_at = 0u64;
    let mut at_field_start = true;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_quotes {
            if b == b'"' {
                if bytes.get(i + 1) == Some(&b'"') {
                    i += 1;
                } else {
                    in_quotes = false;
                }
            } else if b == b'\n' {
                line += 1;
            }
        } else {
            match b {
                b'"' if at_field_start => {
                    in_quotes = true;
                    opened_at = line;
                }
                b'\n' => {
                    line += 1;
                    at_field_start = true;
                    i += 1;
                    continue;
                }
                b',' => {
                    at_field_start = true;
                    i += 1;
                    continue;
                }
                b' ' | b'\t' | b'\r' => {
                    i += 1;
                    continue;
                }
                _ => {}
            }
            at_field_start = false;
        }
        i += 1;
    }
    if in_quotes {
        return Err(Error::CsvParse {
            line: opened_at,
            message: "unbalanced quote: quoted field never closed".to_string(),
        });
    }
    Ok(())
}

/// One CMF study row after normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub facility: Facility,
    pub countermeasure_name: String,
    /// Present context values only; an absent key means the value is missing.
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    #[serde(default)]
    pub start_year: Option<i32>,
    #[serde(default)]
    pub end_year: Option<i32>,
    pub cmf: f64,
    /// Ingested but unmodeled columns (quality rating, study details).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
}

impl ScenarioRecord {
    pub fn new(id: impl Into<String>, facility: Facility, name: impl Into<String>, cmf: f64) -> Self {
        ScenarioRecord {
            id: id.into(),
            facility,
            countermeasure_name: name.into(),
            context: BTreeMap::new(),
            start_year: None,
            end_year: None,
            cmf,
            extras: BTreeMap::new(),
        }
    }

    pub fn with(mut self, field: &str, value: impl Into<String>) -> Self {
        self.context.insert(field.to_string(), value.into());
        self
    }

    pub fn with_years(mut self, start: Option<i32>, end: Option<i32>) -> Self {
        self.start_year = start;
        self.end_year = end;
        self
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.context.get(field).map(String::as_str)
    }

    /// Countermeasure category, used for subgroup reports.
    pub fn category(&self) -> Option<&str> {
        self.get(schema::COUNTERMEASURE_CATEGORY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadTarget,
    BadFacility,
    EmptyName,
    DuplicateId,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BadTarget => "bad_target",
            RejectReason::BadFacility => "bad_facility",
            RejectReason::EmptyName => "empty_name",
            RejectReason::DuplicateId => "duplicate_id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

fn reject(raw: &RawRecord, reason: RejectReason, detail: impl Into<String>) -> Rejection {
    Rejection {
        row: raw.row,
        reason,
        detail: detail.into(),
    }
}

fn parse_year(cell: &str) -> Option<i32> {
    let cell = cell.trim();
    if let Ok(y) = cell.parse::<i32>() {
        return Some(y);
    }
    match cell.parse::<f64>() {
        Ok(y) if y.is_finite() && y.fract() == 0.0 && y.abs() < 1e5 => Some(y as i32),
        _ => None,
    }
}

/// Normalizes one raw row. The facility column decides which schema applies.
pub fn normalize_record(raw: &RawRecord, mapping: &ColumnMapping) -> Result<ScenarioRecord, Rejection> {
    let label = raw.get(FACILITY_FIELD).unwrap_or("");
    let facility = Facility::from_label(label)
        .ok_or_else(|| reject(raw, RejectReason::BadFacility, label))?;
    let schema = mapping.schema(facility);
    let present = |field: &str| raw.get(field).filter(|v| !schema.is_placeholder(v));

    let cmf_cell = raw.get(schema::CMF).unwrap_or("");
    let cmf = cmf_cell
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| reject(raw, RejectReason::BadTarget, cmf_cell))?;

    let name = present(schema::COUNTERMEASURE_NAME)
        .ok_or_else(|| reject(raw, RejectReason::EmptyName, ""))?;

    let id = raw
        .get(ID_FIELD)
        .filter(|v| !v.trim().is_empty())
        .map(str::to_string)
        .unwrap_or_else(|| format!("row-{}", raw.row));

    let mut record = ScenarioRecord::new(id, facility, name, cmf);
    for field in schema.context_fields() {
        if let Some(v) = present(field) {
            record.context.insert(field.to_string(), v.to_string());
        }
    }
    record.start_year = present(schema::START_YEAR).and_then(parse_year);
    record.end_year = present(schema::END_YEAR).and_then(parse_year);

    let known: HashSet<&str> = schema
        .field_order()
        .into_iter()
        .chain([ID_FIELD, FACILITY_FIELD, schema::CMF])
        .collect();
    let mapped: HashSet<&str> = mapping.columns.values().map(String::as_str).collect();
    for (k, v) in &raw.cells {
        if mapped.contains(k.as_str()) && !known.contains(k.as_str()) && !schema.is_placeholder(v) {
            record.extras.insert(k.clone(), v.clone());
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, Default)]
pub struct NormalizeOutcome {
    pub records: Vec<ScenarioRecord>,
    pub rejections: Vec<Rejection>,
}

/// Normalizes every row, keeping the first occurrence of a duplicated id.
pub fn normalize_all(raws: &[RawRecord], mapping: &ColumnMapping) -> NormalizeOutcome {
    let mut out = NormalizeOutcome::default();
    let mut seen = HashSet::new();
    for raw in raws {
        match normalize_record(raw, mapping) {
            Ok(rec) => {
                if seen.insert(rec.id.clone()) {
                    out.records.push(rec);
                } else {
                    tracing::warn!(row = raw.row, id = %rec.id, "duplicate CMF id, keeping first occurrence");
                    out.rejections
                        .push(reject(raw, RejectReason::DuplicateId, rec.id));
                }
            }
            Err(rej) => out.rejections.push(rej),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<ScenarioRecord>,
    pub removed: usize,
}

pub const DEFAULT_CMF_MAX: f64 = 2.0;

/// Keeps records with `0 < cmf <= cmf_max`, preserving order.
pub fn filter_outliers(records: Vec<ScenarioRecord>, cmf_max: f64) -> FilterOutcome {
    let before = records.len();
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| r.cmf > 0.0 && r.cmf <= cmf_max)
        .collect();
    let removed = before - kept.len();
    if removed > 0 {
        tracing::info!(removed, cmf_max, "filtered outlying CMF values");
    }
    FilterOutcome { kept, removed }
}

/// All records of one facility type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub facility: Facility,
    pub schema: FieldSchema,
    pub records: Vec<ScenarioRecord>,
}

impl Dataset {
    pub fn new(schema: FieldSchema, records: Vec<ScenarioRecord>) -> Result<Self> {
        let facility = schema.facility;
        let mut ids = HashSet::new();
        for r in &records {
            if r.facility != facility {
                return Err(Error::Domain(format!(
                    "record {} is {} but dataset is {}",
                    r.id, r.facility, facility
                )));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Domain(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(Dataset {
            facility,
            schema,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same schema, different records (used for fold subsets).
    pub fn subset(&self, records: Vec<ScenarioRecord>) -> Dataset {
        Dataset {
            facility: self.facility,
            schema: self.schema.clone(),
            records,
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write_jsonl(path, &self.records)
    }

    pub fn read_jsonl(path: &Path, schema: FieldSchema) -> Result<Self> {
        Dataset::new(schema, jsonl::read_jsonl(path)?)
    }
}

/// Partitions records by facility. Both facilities are always present.
pub fn split_by_facility(
    records: Vec<ScenarioRecord>,
    mapping: &ColumnMapping,
) -> BTreeMap<Facility, Dataset> {
    let mut out: BTreeMap<Facility, Dataset> = Facility::ALL
        .iter()
        .map(|&f| {
            (
                f,
                Dataset {
                    facility: f,
                    schema: mapping.schema(f),
                    records: Vec::new(),
                },
            )
        })
        .collect();
    for r in records {
        out.get_mut(&r.facility)
            .expect("every facility has a dataset")
            .records
            .push(r);
    }
    out
}

/// Fraction of records lacking a value, per modeled field, in canonical order.
pub fn missing_rates(dataset: &Dataset) -> Vec<(String, f64)> {
    let n = dataset.len().max(1) as f64;
    dataset
        .schema
        .field_order()
        .into_iter()
        .map(|field| {
            let missing = dataset
                .records
                .iter()
                .filter(|r| match field {
                    schema::COUNTERMEASURE_NAME => r.countermeasure_name.is_empty(),
                    schema::START_YEAR => r.start_year.is_none(),
                    schema::END_YEAR => r.end_year.is_none(),
                    f => r.get(f).is_none(),
                })
                .count();
            (field.to_string(), missing as f64 / n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "CMF ID,Facility Type,Countermeasure,Category,Crash Time of Day,Area Type,Start Year,End Year,CMF,Star Quality Rating\n";

    fn parse(body: &str) -> Result<Vec<RawRecord>> {
        parse_clearinghouse_csv(format!("{HEADER}{body}").as_bytes(), &ColumnMapping::default())
    }

    fn raw(cells: &[(&str, &str)]) -> RawRecord {
        RawRecord {
            row: 1,
            line: 2,
            cells: cells
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    #[test]
    fn header_only_yields_no_records() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn three_row_fixture_is_verbatim() {
        let rows = parse(
            "1,Roadway,Install rumble strips,Roadway,Night,Rural,2001,2005,0.84,4\n\
             2,Intersection,\"Convert to roundabout, single lane\",Intersection geometry,,Urban,,,0.52,\n\
             3,Roadway,  Widen shoulder  ,Shoulder treatments,N/A,Rural,1999,2003,1.07,3\n",
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].get("countermeasure_name"), Some("Install rumble strips"));
        assert_eq!(rows[0].get("cmf"), Some("0.84"));
        assert_eq!(rows[0].get("star_quality"), Some("4"));
        assert_eq!(
            rows[1].get("countermeasure_name"),
            Some("Convert to roundabout, single lane")
        );
        assert_eq!(rows[1].get("crash_time_of_day"), Some(""));
        assert_eq!(rows[2].get("countermeasure_name"), Some("Widen shoulder"));
        assert_eq!(rows[2].get("crash_time_of_day"), Some("N/A"));
        assert_eq!(rows[2].row, 3);
    }

    #[test]
    fn unbalanced_quote_names_line() {
        let err = parse("1,Roadway,ok,Roadway,,,,,0.9,\n2,Roadway,\"broken,Roadway,,,,,0.9,\n").unwrap_err();
        match err {
            Error::CsvParse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_required_columns_are_listed() {
        let err = parse_clearinghouse_csv(b"CMF ID,Category\n1,x\n", &ColumnMapping::default())
            .unwrap_err();
        match err {
            Error::MissingColumns(cols) => {
                assert_eq!(cols, vec!["Facility Type", "Countermeasure", "CMF"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_clearinghouse_csv(Path::new("/nonexistent/x.csv"), &ColumnMapping::default())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn normalize_reads_values_and_blanks() {
        let r = raw(&[
            ("facility", "Roadway"),
            ("countermeasure_name", "Install rumble strips"),
            ("crash_time_of_day", ""),
            ("area_type", "Rural"),
            ("start_year", "2001"),
            ("end_year", "N/A"),
            ("cmf", "0.37"),
        ]);
        let rec = normalize_record(&r, &ColumnMapping::default()).unwrap();
        assert_eq!(rec.cmf, 0.37);
        assert_eq!(rec.get(schema::CRASH_TIME_OF_DAY), None);
        assert_eq!(rec.get(schema::AREA_TYPE), Some("Rural"));
        assert_eq!(rec.start_year, Some(2001));
        assert_eq!(rec.end_year, None);
        assert_eq!(rec.id, "row-1");
    }

    #[test]
    fn placeholder_variants_are_missing() {
        for cell in ["", "N/A", "-", "Unspecified", "UNSPECIFIED", "not specified"] {
            let r = raw(&[
                ("facility", "Intersection"),
                ("countermeasure_name", "x"),
                ("area_type", cell),
                ("cmf", "1"),
            ]);
            let rec = normalize_record(&r, &ColumnMapping::default()).unwrap();
            assert_eq!(rec.get(schema::AREA_TYPE), None, "{cell:?}");
        }
    }

    #[test]
    fn bad_target_and_facility_are_rejected() {
        let r = raw(&[("facility", "Roadway"), ("countermeasure_name", "x"), ("cmf", "abc")]);
        assert_eq!(
            normalize_record(&r, &ColumnMapping::default()).unwrap_err().reason,
            RejectReason::BadTarget
        );
        let r = raw(&[("facility", "Bridge"), ("countermeasure_name", "x"), ("cmf", "0.9")]);
        let rej = normalize_record(&r, &ColumnMapping::default()).unwrap_err();
        assert_eq!(rej.reason, RejectReason::BadFacility);
        assert_eq!(rej.reason.to_string(), "bad_facility");
    }

    #[test]
    fn duplicates_keep_first_and_are_counted() {
        let rows = parse(
            "7,Roadway,a,Roadway,,,,,0.9,\n7,Roadway,b,Roadway,,,,,0.8,\n8,Roadway,c,Roadway,,,,,abc,\n",
        )
        .unwrap();
        let out = normalize_all(&rows, &ColumnMapping::default());
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].countermeasure_name, "a");
        let reasons: Vec<_> = out.rejections.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, vec![RejectReason::DuplicateId, RejectReason::BadTarget]);
    }

    #[test]
    fn star_rating_is_an_extra_not_context() {
        let rows = parse("1,Roadway,a,Roadway,,,,,0.9,5\n").unwrap();
        let rec = normalize_record(&rows[0], &ColumnMapping::default()).unwrap();
        assert_eq!(rec.extras.get("star_quality").map(String::as_str), Some("5"));
        assert!(!rec.context.contains_key("star_quality"));
    }

    fn cmf_records(cmfs: &[f64]) -> Vec<ScenarioRecord> {
        cmfs.iter()
            .enumerate()
            .map(|(i, &c)| ScenarioRecord::new(i.to_string(), Facility::Roadway, "x", c))
            .collect()
    }

    #[test]
    fn filter_boundaries() {
        let out = filter_outliers(cmf_records(&[2.5, 2.0, 0.0, -0.1, 1e-9]), DEFAULT_CMF_MAX);
        let kept: Vec<f64> = out.kept.iter().map(|r| r.cmf).collect();
        assert_eq!(kept, vec![2.0, 1e-9]);
        assert_eq!(out.removed, 3);
    }

    #[test]
    fn filter_mixed_fixture() {
        let out = filter_outliers(cmf_records(&[0.5, 1.0, 2.01]), DEFAULT_CMF_MAX);
        let kept: Vec<f64> = out.kept.iter().map(|r| r.cmf).collect();
        assert_eq!(kept, vec![0.5, 1.0]);
    }

    #[test]
    fn filter_is_idempotent() {
        let once = filter_outliers(cmf_records(&[0.3, 2.4, 1.9, 0.0, 1.1]), 2.0).kept;
        let twice = filter_outliers(once.clone(), 2.0);
        assert_eq!(twice.kept, once);
        assert_eq!(twice.removed, 0);
    }

    #[test]
    fn split_partitions_mixed_fixture() {
        let facilities = [
            Facility::Roadway,
            Facility::Intersection,
            Facility::Intersection,
            Facility::Roadway,
            Facility::Roadway,
            Facility::Intersection,
            Facility::Roadway,
            Facility::Roadway,
            Facility::Intersection,
            Facility::Roadway,
        ];
        let records: Vec<_> = facilities
            .iter()
            .enumerate()
            .map(|(i, &f)| ScenarioRecord::new(format!("r{i}"), f, "x", 1.0))
            .collect();
        let split = split_by_facility(records, &ColumnMapping::default());
        let ids = |f| -> Vec<String> {
            split[&f].records.iter().map(|r| r.id.clone()).collect()
        };
        assert_eq!(ids(Facility::Roadway), ["r0", "r3", "r4", "r6", "r7", "r9"]);
        assert_eq!(ids(Facility::Intersection), ["r1", "r2", "r5", "r8"]);
    }

    #[test]
    fn all_roadway_leaves_intersection_empty() {
        let split = split_by_facility(cmf_records(&[0.9, 1.1]), &ColumnMapping::default());
        assert_eq!(split[&Facility::Roadway].len(), 2);
        assert!(split[&Facility::Intersection].is_empty());
    }

    #[test]
    fn dataset_rejects_mixed_facilities_and_duplicate_ids() {
        let schema = FieldSchema::for_facility(Facility::Roadway);
        let mixed = vec![ScenarioRecord::new("a", Facility::Intersection, "x", 1.0)];
        assert!(Dataset::new(schema.clone(), mixed).is_err());
        let dup = cmf_records(&[1.0, 1.0]).into_iter().map(|mut r| {
            r.id = "same".into();
            r
        });
        assert!(Dataset::new(schema, dup.collect()).is_err());
    }

    #[test]
    fn missing_rates_on_fixture() {
        let recs = vec![
            ScenarioRecord::new("a", Facility::Roadway, "x", 1.0).with(schema::AREA_TYPE, "Rural"),
            ScenarioRecord::new("b", Facility::Roadway, "y", 1.0).with_years(Some(2000), Some(2004)),
            ScenarioRecord::new("c", Facility::Roadway, "z", 1.0),
            ScenarioRecord::new("d", Facility::Roadway, "w", 1.0).with(schema::AREA_TYPE, "Urban"),
        ];
        let ds = Dataset::new(FieldSchema::for_facility(Facility::Roadway), recs).unwrap();
        let rates: BTreeMap<_, _> = missing_rates(&ds).into_iter().collect();
        assert_eq!(rates[schema::COUNTERMEASURE_NAME], 0.0);
        assert_eq!(rates[schema::AREA_TYPE], 0.5);
        assert_eq!(rates[schema::START_YEAR], 0.75);
        assert_eq!(rates[schema::ROADWAY_TYPE], 1.0);
    }

    #[test]
    fn load_then_normalize_is_deterministic() {
        let body = "1,Roadway,a,Roadway,Night,Rural,2001,2005,0.84,4\n2,Intersection,b,X,,,,,1.2,\n";
        let a = normalize_all(&parse(body).unwrap(), &ColumnMapping::default()).records;
        let b = normalize_all(&parse(body).unwrap(), &ColumnMapping::default()).records;
        assert_eq!(a, b);
    }
}
