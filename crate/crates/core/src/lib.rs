//! Crash modification factor (CMF) prediction from countermeasure scenarios.
//!
//! Scenarios from a CMF Clearinghouse export are rendered as pseudo
//! sentences, embedded by a semantic encoder fine-tuned against a
//! safety-performance similarity signal, joined with target-encoded
//! categorical context, and regressed onto CMF values with a small MLP.

pub mod api;
pub mod artifact;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod jsonl;
pub mod predictor;
pub mod regressor;
pub mod scenario_text;
pub mod schema;
pub mod spsf;
pub mod synthetic;
pub mod target_encoder;

pub use error::{Error, Result};
pub use ingest::{Dataset, ScenarioRecord};
pub use schema::{Facility, FieldSchema};
