//! Comparison-based point cloud quality assessment.
//!
//! Rated stimuli are turned into labeled comparison pairs and instruction
//! records for training. At inference time each test stimulus is compared
//! against a small set of anchors, and the resulting level distributions are
//! converted into a single quality score by maximizing a Gaussian interval
//! likelihood.

pub mod adaptation;
pub mod anchors;
pub mod comparator;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod pairgen;
pub mod quality;
pub mod render;
pub mod schedule;
pub mod scoring;
pub mod synth;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use anchors::{build_anchor_set, AnchorSet};
pub use comparator::{
    Comparator, ComparatorQuery, RemoteComparator, ReplayComparator, SimulatedComparator,
};
pub use dataset::{DatasetManifest, Modality, RatedSample};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use pairgen::{ComparisonPair, InstructionRecord, PromptKind};
pub use quality::{LevelDistribution, QualityLevel};
pub use scoring::{
    infer_score, score_dataset, ProbabilityMatrix, ScoreInferenceConfig, ScoreTable,
};

/// Short stable digest of a serializable configuration: the first 16 hex
/// digits of the SHA-256 of its compact JSON form.
pub fn config_digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(&json)[..8]))
}

/// Independent sub-seed for a named stage or item, derived from a global seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
}
