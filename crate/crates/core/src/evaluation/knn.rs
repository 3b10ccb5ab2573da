//! The non-encoding baseline: k nearest neighbours by field mismatch count.

use crate::ingest::{Dataset, ScenarioRecord};

pub const DEFAULT_K: usize = 10;
/// Width of the year bins used in the distance.
pub const YEAR_BIN: i32 = 5;

/// Fields compared for equality: the countermeasure name, every context
/// field, and both years binned. A missing value equals only another
/// missing value.
fn keys<'a>(record: &'a ScenarioRecord, fields: &[&str]) -> Vec<Option<&'a str>> {
    let mut out = Vec::with_capacity(fields.len() + 1);
    out.push(Some(record.countermeasure_name.as_str()));
    out.extend(fields.iter().map(|f| record.get(f)));
    out
}

fn year_bins(record: &ScenarioRecord) -> [Option<i32>; 2] {
    [
        record.start_year.map(|y| y.div_euclid(YEAR_BIN)),
        record.end_year.map(|y| y.div_euclid(YEAR_BIN)),
    ]
}

pub fn distance(a: &ScenarioRecord, b: &ScenarioRecord, fields: &[&str]) -> usize {
    let text = keys(a, fields)
        .into_iter()
        .zip(keys(b, fields))
        .filter(|(x, y)| x != y)
        .count();
    let years = year_bins(a).iter().zip(year_bins(b).iter()).filter(|(x, y)| x != y).count();
    text + years
}

/// Indices of the `k` nearest training records (ties by training order).
pub fn neighbours(train: &[ScenarioRecord], query: &ScenarioRecord, fields: &[&str], k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, r)| (distance(query, r, fields), i))
        .collect();
    scored.sort_unstable();
    scored.into_iter().take(k.min(train.len())).map(|(_, i)| i).collect()
}

/// Mean CMF of the `k` nearest training records for each test record.
/// Returns an empty vector when `train` is empty.
pub fn knn_baseline(train: &Dataset, test: &Dataset, k: usize) -> Vec<f64> {
    if train.is_empty() {
        return Vec::new();
    }
    let fields: Vec<&str> = train.schema.context_fields().collect();
    test.records
        .iter()
        .map(|q| {
            let nn = neighbours(&train.records, q, &fields, k.max(1));
            nn.iter().map(|&i| train.records[i].cmf).sum::<f64>() / nn.len() as f64
        })
        .collect()
}
