//! Safety-performance similarity between two scenarios and generation of
//! labeled scenario pairs for encoder fine-tuning.
//!
//! The score is `cos(πδ/2)` with `δ = |cmf_i − cmf_j|`, damped by `(δ − 1)²`
//! when the two CMFs lie on opposite sides of 1 (opposite natures) and
//! `δ < 1`. The result is bounded in `[−1, 1]`.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ScenarioRecord;

pub const SCORE_BUCKETS: usize = 8;
/// Above this many candidate pairs, sampling switches from enumeration to
/// rejection sampling.
const ENUMERATION_LIMIT: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Result<Self> {
        if (-1.0..=1.0).contains(&value) {
            Ok(SimilarityScore(value))
        } else {
            Err(Error::Domain(format!("similarity {value} outside [-1, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Index of the equal-width bucket over `[-1, 1]` holding this score.
    pub fn bucket(self) -> usize {
        let width = 2.0 / SCORE_BUCKETS as f64;
        (((self.0 + 1.0) / width).floor() as usize).min(SCORE_BUCKETS - 1)
    }
}

/// Sign with `sgn(0) = 0`, so a CMF of exactly 1 never triggers the penalty.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn safety_similarity(cmf_i: f64, cmf_j: f64) -> Result<SimilarityScore> {
    for c in [cmf_i, cmf_j] {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Domain(format!("CMF must be positive and finite, got {c}")));
        }
    }
    let delta = (cmf_i - cmf_j).abs();
    let base = (PI / 2.0 * delta).cos();
    let nature = sgn(cmf_i - 1.0) * sgn(cmf_j - 1.0) * delta;
    let value = if nature > -1.0 && nature < 0.0 {
        base * (delta - 1.0).powi(2)
    } else {
        base
    };
    SimilarityScore::new(value.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPair {
    pub left_id: String,
    pub right_id: String,
    pub gold_score: SimilarityScore,
    pub delta: f64,
}

/// Default pair budget: twenty pairs per training record.
pub fn default_budget(training_size: usize) -> usize {
    20 * training_size
}

/// Samples distinct unordered pairs, flattened across the eight gold-score
/// buckets as far as each bucket's supply allows. Deterministic in `seed`.
pub fn generate_training_pairs(
    records: &[ScenarioRecord],
    budget: usize,
    seed: u64,
) -> Result<Vec<ScenarioPair>> {
    let n = records.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!(
            "pair generation needs at least 2 records, got {n}"
        )));
    }
    if budget == 0 {
        return Err(Error::Config("pair budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n * (n - 1) / 2;

    let mut chosen: Vec<(usize, usize)> = if total <= budget {
        all_pairs(n).collect()
    } else if total <= ENUMERATION_LIMIT {
        stratified_by_enumeration(records, budget, &mut rng)?
    } else {
        stratified_by_rejection(records, budget, &mut rng)?
    };
    chosen.shuffle(&mut rng);

    chosen
        .into_iter()
        .map(|(i, j)| make_pair(&records[i], &records[j]))
        .collect()
}

fn make_pair(a: &ScenarioRecord, b: &ScenarioRecord) -> Result<ScenarioPair> {
    Ok(ScenarioPair {
        left_id: a.id.clone(),
        right_id: b.id.clone(),
        gold_score: safety_similarity(a.cmf, b.cmf)?,
        delta: (a.cmf - b.cmf).abs(),
    })
}

fn all_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Equal shares per bucket, with the shortfall of under-supplied buckets
/// redistributed to the others.
fn allocate(budget: usize, supply: &[usize; SCORE_BUCKETS]) -> [usize; SCORE_BUCKETS] {
    let mut quota = [0usize; SCORE_BUCKETS];
    let mut remaining = budget;
    loop {
        let open: Vec<usize> = (0..SCORE_BUCKETS).filter(|&b| quota[b] < supply[b]).collect();
        if remaining == 0 || open.is_empty() {
            return quota;
        }
        let share = remaining / open.len();
        let extra = remaining % open.len();
        let mut given = 0;
        for (rank, &b) in open.iter().enumerate() {
            let want = share + usize::from(rank < extra);
            let take = want.min(supply[b] - quota[b]);
            quota[b] += take;
            given += take;
        }
        remaining -= given;
    }
}

fn stratified_by_enumeration(
    records: &[ScenarioRecord],
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let mut by_bucket: Vec<Vec<(usize, usize)>> = vec![Vec::new(); SCORE_BUCKETS];
    for (i, j) in all_pairs(records.len()) {
        let b = safety_similarity(records[i].cmf, records[j].cmf)?.bucket();
        by_bucket[b].push((i, j));
    }
    let supply: [usize; SCORE_BUCKETS] = std::array::from_fn(|b| by_bucket[b].len());
    let quota = allocate(budget, &supply);
    let mut out = Vec::with_capacity(budget);
    for (pairs, q) in by_bucket.iter_mut().zip(quota) {
        let (picked, _) = pairs.partial_shuffle(rng, q);
        out.extend_from_slice(picked);
    }
    Ok(out)
}

fn stratified_by_rejection(
    records: &[ScenarioRecord],
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = records.len();
    let quota = allocate(budget, &[usize::MAX; SCORE_BUCKETS]);
    let mut filled = [0usize; SCORE_BUCKETS];
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(budget * 2);
    let mut out = Vec::with_capacity(budget);
    let max_attempts = budget.saturating_mul(200);

    let draw = |rng: &mut ChaCha8Rng| {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i.min(j), i.max(j))
    };

    let mut attempts = 0;
    while out.len() < budget && attempts < max_attempts {
        attempts += 1;
        let pair = draw(rng);
        if seen.contains(&pair) {
            continue;
        }
        let b = safety_similarity(records[pair.0].cmf, records[pair.1].cmf)?.bucket();
        if filled[b] < quota[b] {
            filled[b] += 1;
            seen.insert(pair);
            out.push(pair);
        }
    }
    // Buckets that could not be filled give their share to uniform draws.
    while out.len() < budget {
        let pair = draw(rng);
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}
