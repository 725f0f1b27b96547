//! Alternating texture/geometry training schedule and the per-example loss.
//!
//! Even steps draw from the texture pool, odd steps from the geometry pool.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::PromptKind;
use crate::quality::{LevelDistribution, QualityLevel};

/// Probabilities are floored at this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingStep {
    pub t: usize,
    pub pool: PromptKind,
    pub record_ids: Vec<String>,
}

pub fn pool_for_step(t: usize) -> PromptKind {
    if t.is_multiple_of(2) {
        PromptKind::Texture
    } else {
        PromptKind::Geometry
    }
}

pub fn plan_schedule(
    texture_pool: &[String],
    geometry_pool: &[String],
    total_steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TrainingStep>> {
    if texture_pool.is_empty() {
        return Err(Error::InsufficientData("texture pool is empty".into()));
    }
    if geometry_pool.is_empty() {
        return Err(Error::InsufficientData("geometry pool is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (0..total_steps)
        .map(|t| {
            let pool = pool_for_step(t);
            let ids = match pool {
                PromptKind::Texture => texture_pool,
                PromptKind::Geometry => geometry_pool,
            };
            let record_ids = (0..batch_size)
                .map(|_| ids[rng.random_range(0..ids.len())].clone())
                .collect();
            TrainingStep {
                t,
                pool,
                record_ids,
            }
        })
        .collect();
    Ok(steps)
}

/// `-ln(max(p[truth], 1e-12))` for a one-hot ground truth.
pub fn cross_entropy(predicted: &[f64], truth: QualityLevel) -> Result<f64> {
    let dist = LevelDistribution::from_slice(predicted)?;
    Ok(-dist.get(truth).max(PROB_FLOOR).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleManifest {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub steps: Vec<TrainingStep>,
}

impl ScheduleManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
