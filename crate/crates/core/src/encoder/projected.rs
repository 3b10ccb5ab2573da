//! Trainable encoder: a learned embedding table over hashed n-gram buckets.
//!
//! A sentence embedding is `W · h(text)` where `h` is the signed n-gram
//! hashing vector of the text and `W` is an `m × input_dim` matrix stored as
//! one `m`-row per hash bucket. At initialization `W` is a seeded Gaussian
//! random projection, so the untuned encoder approximately preserves cosine
//! geometry of the hashed bag of n-grams. Fine-tuning adjusts `W` so that
//! the cosine between paired sentences tracks the pair's gold score.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hashing::HashingConfig;
use crate::artifact::{f64s_to_le_bytes, sha256_hex};
use crate::error::{Error, Result};
use crate::scenario_text::PseudoSentence;
use crate::spsf::ScenarioPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedConfig {
    pub input_dim: usize,
    pub dimension: usize,
    pub max_ngram: usize,
    pub seed: u64,
}

impl Default for ProjectedConfig {
    fn default() -> Self {
        ProjectedConfig {
            input_dim: 4096,
            dimension: 128,
            max_ngram: 2,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedEncoder {
    pub(crate) config: ProjectedConfig,
    /// `input_dim` rows of `dimension` values each.
    pub(crate) table: Vec<f64>,
}

impl ProjectedEncoder {
    pub fn new(config: ProjectedConfig) -> Result<Self> {
        if config.input_dim == 0 || config.dimension == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.dimension as f64).sqrt();
        let table = (0..config.input_dim * config.dimension)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(ProjectedEncoder { config, table })
    }

    pub(crate) fn from_parts(config: ProjectedConfig, table: Vec<f64>) -> Result<Self> {
        if table.len() != config.input_dim * config.dimension {
            return Err(Error::DimensionMismatch {
                expected: config.input_dim * config.dimension,
                actual: table.len(),
            });
        }
        Ok(ProjectedEncoder { config, table })
    }

    pub fn config(&self) -> &ProjectedConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn hashing(&self) -> HashingConfig {
        HashingConfig {
            dimension: self.config.input_dim,
            max_ngram: self.config.max_ngram,
        }
    }

    pub fn weights_bytes(&self) -> Vec<u8> {
        f64s_to_le_bytes(&self.table)
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.weights_bytes())
    }

    pub fn identifier(&self) -> String {
        format!(
            "projected-v1-m{}-h{}-{}",
            self.config.dimension,
            self.config.input_dim,
            &self.digest()[..16]
        )
    }

    pub fn sparse_input(&self, text: &str) -> Vec<(usize, f64)> {
        self.hashing().sparse_features(text)
    }

    pub fn embed_sparse(&self, input: &[(usize, f64)]) -> Vec<f64> {
        let m = self.config.dimension;
        let mut out = vec![0.0; m];
        for &(bucket, weight) in input {
            let row = &self.table[bucket * m..(bucket + 1) * m];
            for (o, w) in out.iter_mut().zip(row) {
                *o += weight * w;
            }
        }
        out
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embed_sparse(&self.sparse_input(text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 4,
            batch_size: 32,
            learning_rate: 5e-3,
            seed: 42,
            validation_fraction: 0.1,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub encoder: ProjectedEncoder,
    pub history: Vec<EpochLoss>,
    /// Mean squared error between embedding cosine and gold score over the
    /// training pairs, under the returned weights.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    /// Indices into the input pair list.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// One pair resolved to sparse inputs.
struct PairInput<'a> {
    left: &'a [(usize, f64)],
    right: &'a [(usize, f64)],
    gold: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pair_cosine(enc: &ProjectedEncoder, p: &PairInput<'_>) -> Option<(Vec<f64>, Vec<f64>, f64, f64, f64)> {
    let u = enc.embed_sparse(p.left);
    let v = enc.embed_sparse(p.right);
    let (nu, nv) = (norm(&u), norm(&v));
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let c = dot(&u, &v) / (nu * nv);
    Some((u, v, nu, nv, c))
}

fn mean_loss(enc: &ProjectedEncoder, pairs: &[PairInput<'_>]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let c = pair_cosine(enc, p).map(|t| t.4).unwrap_or(0.0);
            (c - p.gold).powi(2)
        })
        .sum();
    total / pairs.len() as f64
}

/// Adam state restricted to the rows a batch touches.
struct SparseAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl SparseAdam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn apply(&mut self, table: &mut [f64], grad: &[f64], rows: &[usize], width: usize) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for &r in rows {
            for i in r * width..(r + 1) * width {
                let g = grad[i];
                self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                table[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

/// Siamese fine-tuning: both sentences of a pair go through the same
/// weights, and the squared gap between their cosine and the gold score is
/// minimized with mini-batch Adam.
pub fn fine_tune_projected(
    encoder: &ProjectedEncoder,
    pairs: &[ScenarioPair],
    sentences: &HashMap<String, PseudoSentence>,
    config: &FineTuneConfig,
) -> Result<FineTuneOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("fine-tuning needs at least one pair".into()));
    }

    let mut inputs: HashMap<&str, Vec<(usize, f64)>> = HashMap::new();
    for p in pairs {
        for id in [&p.left_id, &p.right_id] {
            if !inputs.contains_key(id.as_str()) {
                let s = sentences.get(id).ok_or_else(|| {
                    Error::Pipeline(format!("no pseudo sentence for record {id}"))
                })?;
                inputs.insert(id.as_str(), encoder.sparse_input(&s.text));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if pairs.len() >= 2 {
        ((pairs.len() as f64 * config.validation_fraction).round() as usize).clamp(1, pairs.len() - 1)
    } else {
        0
    };
    let resolve = |i: &usize| PairInput {
        left: &inputs[pairs[*i].left_id.as_str()],
        right: &inputs[pairs[*i].right_id.as_str()],
        gold: pairs[*i].gold_score.value(),
    };
    let val: Vec<PairInput<'_>> = order[..n_val].iter().map(resolve).collect();
    let train: Vec<PairInput<'_>> = order[n_val..].iter().map(resolve).collect();

    let mut enc = encoder.clone();
    let width = enc.config.dimension;
    let mut grad = vec![0.0; enc.table.len()];
    let mut touched = vec![false; enc.config.input_dim];
    let mut rows: Vec<usize> = Vec::new();
    let mut adam = SparseAdam {
        m: vec![0.0; enc.table.len()],
        v: vec![0.0; enc.table.len()],
        step: 0,
        lr: config.learning_rate,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        batch_order.shuffle(&mut rng);
        for batch in batch_order.chunks(config.batch_size) {
            let scale = 2.0 / batch.len() as f64;
            for &bi in batch {
                let p = &train[bi];
                let Some((u, v, nu, nv, c)) = pair_cosine(&enc, p) else {
                    continue;
                };
                let dl_dc = scale * (c - p.gold);
                let inv = 1.0 / (nu * nv);
                let du: Vec<f64> = (0..width)
                    .map(|i| dl_dc * (v[i] * inv - c * u[i] / (nu * nu)))
                    .collect();
                let dv: Vec<f64> = (0..width)
                    .map(|i| dl_dc * (u[i] * inv - c * v[i] / (nv * nv)))
                    .collect();
                for (side, d) in [(p.left, &du), (p.right, &dv)] {
                    for &(bucket, weight) in side {
                        if !touched[bucket] {
                            touched[bucket] = true;
                            rows.push(bucket);
                        }
                        let g = &mut grad[bucket * width..(bucket + 1) * width];
                        for (gi, di) in g.iter_mut().zip(d.iter()) {
                            *gi += weight * di;
                        }
                    }
                }
            }
            rows.sort_unstable();
            adam.apply(&mut enc.table, &grad, &rows, width);
            for &r in &rows {
                grad[r * width..(r + 1) * width].fill(0.0);
                touched[r] = false;
            }
            rows.clear();
        }
        let train_loss = mean_loss(&enc, &train);
        let validation_loss = (!val.is_empty()).then(|| mean_loss(&enc, &val));
        tracing::debug!(epoch, train_loss, ?validation_loss, "fine-tune epoch");
        history.push(EpochLoss {
            epoch,
            train_loss,
            validation_loss,
        });
    }

    let train_loss = mean_loss(&enc, &train);
    let validation_loss = (!val.is_empty()).then(|| mean_loss(&enc, &val));
    Ok(FineTuneOutcome {
        encoder: enc,
        history,
        train_loss,
        validation_loss,
        train_indices: order[n_val..].to_vec(),
        validation_indices: order[..n_val].to_vec(),
    })
}
