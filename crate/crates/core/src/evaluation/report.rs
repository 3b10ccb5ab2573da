//! Subgroup tables, the structured-countermeasure case study and the report
//! bundle written by `evaluate`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::{MetricsReport, PredictionRow};
use crate::artifact;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ScenarioRecord};
use crate::jsonl::write_jsonl;

/// Group label for records without a value for a grouping key.
pub const MISSING_GROUP: &str = "(missing)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub values: Vec<String>,
    pub n: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub keys: Vec<String>,
    pub rows: Vec<SubgroupRow>,
}

impl SubgroupReport {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.n).sum()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.keys.clone();
        header.extend(["n", "mae", "rmse", "cr", "pop"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = row.values.clone();
            rec.push(row.n.to_string());
            for v in [row.metrics.mae, row.metrics.rmse, row.metrics.cr, row.metrics.pop] {
                rec.push(format!("{v:.6}"));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Pipeline(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Pipeline(format!("writing csv: {e}"))
}

fn by_id(dataset: &Dataset) -> HashMap<&str, &ScenarioRecord> {
    dataset.records.iter().map(|r| (r.id.as_str(), r)).collect()
}

fn lookup<'a>(index: &HashMap<&str, &'a ScenarioRecord>, row: &PredictionRow) -> Result<&'a ScenarioRecord> {
    index
        .get(row.id.as_str())
        .copied()
        .ok_or_else(|| Error::Domain(format!("prediction for unknown record {}", row.id)))
}

/// Pooled metrics per distinct combination of `keys` values.
pub fn subgroup_report(report: &MetricsReport, dataset: &Dataset, keys: &[&str]) -> Result<SubgroupReport> {
    for k in keys {
        if !dataset.schema.is_context_field(k) {
            return Err(Error::UnknownFeature(k.to_string()));
        }
    }
    let index = by_id(dataset);
    let mut groups: BTreeMap<Vec<String>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in &report.predictions {
        let r = lookup(&index, p)?;
        let key = keys
            .iter()
            .map(|k| r.get(k).unwrap_or(MISSING_GROUP).to_string())
            .collect();
        let e = groups.entry(key).or_default();
        e.0.push(p.cmf);
        e.1.push(p.cmf_hat);
    }
    let rows = groups
        .into_iter()
        .map(|(values, (y, yhat))| {
            Ok(SubgroupRow {
                values,
                n: y.len(),
                metrics: Metrics::compute(&y, &yhat)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubgroupReport {
        keys: keys.iter().map(|k| k.to_string()).collect(),
        rows,
    })
}

/// Default structured-countermeasure filter: shoulder-width treatments.
pub fn is_shoulder_width(record: &ScenarioRecord) -> bool {
    let mentions = |s: &str| {
        let s = s.to_lowercase();
        s.contains("shoulder") && (s.contains("width") || s.contains("widen"))
    };
    mentions(&record.countermeasure_name)
        || record.category().is_some_and(mentions)
        || record
            .get(crate::schema::COUNTERMEASURE_SUBCATEGORY)
            .is_some_and(mentions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyRow {
    pub id: String,
    pub countermeasure_name: String,
    pub cmf: f64,
    pub cmf_hat: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub rows: Vec<CaseStudyRow>,
    pub warning: Option<String>,
}

impl CaseStudy {
    /// Scatter data: one `(cmf, cmf_hat)` pair per selected record.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "countermeasure_name", "cmf", "cmf_hat", "fold"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.countermeasure_name.clone(),
                r.cmf.to_string(),
                r.cmf_hat.to_string(),
                r.fold.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Pipeline(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn case_study_structured(
    report: &MetricsReport,
    dataset: &Dataset,
    filter: impl Fn(&ScenarioRecord) -> bool,
) -> Result<CaseStudy> {
    let index = by_id(dataset);
    let mut rows = Vec::new();
    for p in &report.predictions {
        let r = lookup(&index, p)?;
        if filter(r) {
            rows.push(CaseStudyRow {
                id: p.id.clone(),
                countermeasure_name: r.countermeasure_name.clone(),
                cmf: p.cmf,
                cmf_hat: p.cmf_hat,
                fold: p.fold,
            });
        }
    }
    let warning = rows
        .is_empty()
        .then(|| "no predictions matched the structured-countermeasure filter".to_string());
    if let Some(w) = &warning {
        tracing::warn!("{w}");
    }
    Ok(CaseStudy { rows, warning })
}

/// Writes `metrics.json`, `predictions.jsonl`, `subgroups.csv` and `config.json`.
pub fn write_report_bundle(
    dir: &Path,
    report: &MetricsReport,
    subgroups: &[SubgroupReport],
    config: &serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = serde_json::to_value(report)?;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("predictions");
    }
    artifact::write_json(&dir.join("metrics.json"), &summary)?;
    write_jsonl(&dir.join("predictions.jsonl"), &report.predictions)?;
    let mut csv = String::new();
    for (i, s) in subgroups.iter().enumerate() {
        let body = s.to_csv()?;
        if i > 0 {
            csv.push('\n');
        }
        csv.push_str(&body);
    }
    artifact::atomic_write(&dir.join("subgroups.csv"), csv.as_bytes())?;
    artifact::write_json(&dir.join("config.json"), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{self, Facility, FieldSchema};

    fn fixture() -> (Dataset, MetricsReport) {
        let cats = ["Lighting", "Shoulder treatments", "Lighting", "Signs"];
        let records: Vec<_> = (0..4)
            .map(|i| {
                let name = if i == 1 { "Widen shoulder width by 2 ft" } else { "Install lighting" };
                ScenarioRecord::new(format!("r{i}"), Facility::Roadway, name, 0.8)
                    .with(schema::COUNTERMEASURE_CATEGORY, cats[i])
            })
            .collect();
        let ds = Dataset::new(FieldSchema::for_facility(Facility::Roadway), records).unwrap();
        let predictions = (0..4)
            .map(|i| PredictionRow {
                id: format!("r{i}"),
                cmf: 0.8,
                cmf_hat: 0.8 + 0.02 * i as f64,
                fold: i % 2,
            })
            .collect();
        let report = MetricsReport {
            model: "test".into(),
            facility: Facility::Roadway,
            k: 2,
            seed: 0,
            folds: vec![],
            average: None,
            predictions,
            model_identifiers: vec![],
            config_digest: String::new(),
            notes: vec![],
            complete: true,
        };
        (ds, report)
    }

    #[test]
    fn group_counts_sum_to_total() {
        let (ds, report) = fixture();
        let s = subgroup_report(&report, &ds, &[schema::COUNTERMEASURE_CATEGORY, schema::ROADWAY_PRIOR_CONDITION])
            .unwrap();
        assert_eq!(s.total(), 4);
        assert!(s.rows.iter().all(|r| r.values[1] == MISSING_GROUP));
        let csv = s.to_csv().unwrap();
        assert!(csv.starts_with("countermeasure_category,roadway_prior_condition,n,mae"));
    }

    #[test]
    fn single_group_equals_overall() {
        let (ds, report) = fixture();
        let s = subgroup_report(&report, &ds, &[schema::COUNTRY]).unwrap();
        assert_eq!(s.rows.len(), 1);
        let y: Vec<f64> = report.predictions.iter().map(|p| p.cmf).collect();
        let yhat: Vec<f64> = report.predictions.iter().map(|p| p.cmf_hat).collect();
        assert_eq!(s.rows[0].metrics, Metrics::compute(&y, &yhat).unwrap());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let (ds, report) = fixture();
        assert!(matches!(subgroup_report(&report, &ds, &["colour"]), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn case_study_is_a_subset() {
        let (ds, report) = fixture();
        let cs = case_study_structured(&report, &ds, is_shoulder_width).unwrap();
        assert_eq!(cs.rows.len(), 1);
        assert!(report.predictions.iter().any(|p| p.id == cs.rows[0].id));
        let none = case_study_structured(&report, &ds, |_| false).unwrap();
        assert!(none.rows.is_empty() && none.warning.is_some());
    }

    #[test]
    fn bundle_files_are_written() {
        let (ds, report) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let s = subgroup_report(&report, &ds, &[schema::COUNTERMEASURE_CATEGORY]).unwrap();
        write_report_bundle(dir.path(), &report, &[s], &serde_json::json!({"seed": 0})).unwrap();
        for f in ["metrics.json", "predictions.jsonl", "subgroups.csv", "config.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
