use std::collections::HashMap;

use cmf_core::encoder::{fine_tune, EncoderBackbone, FineTuneConfig, ProjectedConfig};
use cmf_core::scenario_text::{build_pseudo_sentence, PseudoSentence};
use cmf_core::spsf::{generate_training_pairs, ScenarioPair};
use cmf_core::synthetic::{generate, SyntheticConfig};

fn fixture() -> (EncoderBackbone, Vec<ScenarioPair>, HashMap<String, PseudoSentence>) {
    let ds = generate(&SyntheticConfig {
        records: 120,
        ..Default::default()
    })
    .unwrap();
    let pairs = generate_training_pairs(&ds.records, 500, 3).unwrap();
    assert_eq!(pairs.len(), 500);
    let sentences = ds
        .records
        .iter()
        .map(|r| (r.id.clone(), build_pseudo_sentence(r, &ds.schema)))
        .collect();
    let backbone = EncoderBackbone::projected(ProjectedConfig {
        input_dim: 1024,
        dimension: 32,
        ..Default::default()
    })
    .unwrap();
    (backbone, pairs, sentences)
}

fn config() -> FineTuneConfig {
    FineTuneConfig {
        epochs: 6,
        batch_size: 16,
        validation_fraction: 0.2,
        ..Default::default()
    }
}

fn pair_loss(backbone: &EncoderBackbone, pairs: &[ScenarioPair], idx: &[usize], sentences: &HashMap<String, PseudoSentence>) -> f64 {
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let p = &pairs[i];
            let u = backbone.encode(&sentences[&p.left_id]).unwrap();
            let v = backbone.encode(&sentences[&p.right_id]).unwrap();
            let c = cmf_core::encoder::cosine_similarity(&u, &v).unwrap();
            (c - p.gold_score.value()).powi(2)
        })
        .sum();
    total / idx.len() as f64
}

#[test]
fn held_out_loss_decreases() {
    let (backbone, pairs, sentences) = fixture();
    let (tuned, outcome) = fine_tune(&backbone, &pairs, &sentences, &config()).unwrap();
    let before = pair_loss(&backbone, &pairs, &outcome.validation_indices, &sentences);
    let after = outcome.validation_loss.unwrap();
    assert!(after < before, "validation loss {before} -> {after}");
    assert!((pair_loss(&tuned, &pairs, &outcome.validation_indices, &sentences) - after).abs() < 1e-9);
    assert_ne!(tuned.identifier(), backbone.identifier());
}

#[test]
fn same_seed_reproduces_the_trajectory() {
    let (backbone, pairs, sentences) = fixture();
    let (_, a) = fine_tune(&backbone, &pairs, &sentences, &config()).unwrap();
    let (_, b) = fine_tune(&backbone, &pairs, &sentences, &config()).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!((x.validation_loss.unwrap() - y.validation_loss.unwrap()).abs() <= 1e-6);
    }
}

#[test]
fn reported_train_loss_matches_recomputation() {
    let (backbone, pairs, sentences) = fixture();
    let (tuned, outcome) = fine_tune(&backbone, &pairs, &sentences, &config()).unwrap();
    let mut all: Vec<usize> = outcome.train_indices.iter().chain(&outcome.validation_indices).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..pairs.len()).collect::<Vec<_>>());
    let recomputed = pair_loss(&tuned, &pairs, &outcome.train_indices, &sentences);
    assert!((recomputed - outcome.train_loss).abs() < 1e-9);
}

#[test]
fn hashing_backbone_is_not_trainable() {
    let (_, pairs, sentences) = fixture();
    assert!(fine_tune(&EncoderBackbone::hashing(64), &pairs, &sentences, &config()).is_err());
}
