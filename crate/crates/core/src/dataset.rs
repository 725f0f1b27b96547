//! Rated samples and dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Pointcloud,
}

/// One stimulus with its subjective rating statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedSample {
    pub id: String,
    pub modality: Modality,
    /// One image, K view images, or one point cloud file.
    pub asset_refs: Vec<String>,
    pub mos: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl RatedSample {
    pub fn new(id: impl Into<String>, modality: Modality, mos: f64, std: f64) -> Self {
        Self {
            id: id.into(),
            modality,
            asset_refs: Vec::new(),
            mos,
            std,
            dataset: None,
        }
    }

    pub fn with_assets(mut self, refs: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.asset_refs = refs.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: String,
    /// Declared `[min, max]` MOS scale.
    pub score_range: [f64; 2],
    pub samples: Vec<RatedSample>,
}

impl DatasetManifest {
    /// Builds a manifest and checks its invariants.
    pub fn new(
        dataset: impl Into<String>,
        score_range: [f64; 2],
        samples: Vec<RatedSample>,
    ) -> Result<Self> {
        let m = Self {
            dataset: dataset.into(),
            score_range,
            samples,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.score_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!(
                "dataset {}: bad score range [{lo}, {hi}]",
                self.dataset
            )));
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!(
                    "dataset {}: duplicate sample id {:?}",
                    self.dataset, s.id
                )));
            }
            if !(s.std.is_finite() && s.std >= 0.0) {
                return Err(Error::invalid(format!(
                    "sample {:?}: std must be finite and >= 0, got {}",
                    s.id, s.std
                )));
            }
            if !(s.mos.is_finite() && s.mos >= lo && s.mos <= hi) {
                return Err(Error::invalid(format!(
                    "sample {:?}: mos {} outside [{lo}, {hi}]",
                    s.id, s.mos
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&RatedSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
