//! Anchor selection: split a dataset into `beta` MOS intervals and keep the
//! most consistently rated sample of each.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, RatedSample};
use crate::error::{Error, Result};

/// Number of quality intervals used when none is configured.
pub const DEFAULT_BETA: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionRule {
    /// Equal-width MOS intervals over `[min MOS, max MOS]`.
    EqualWidth,
    /// Equal-count chunks of the MOS-sorted samples.
    Quantile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub rule: PartitionRule,
    pub intervals: Vec<Vec<String>>,
}

/// Lower edge of equal-width interval `k`.
fn edge(min: f64, width: f64, k: usize) -> f64 {
    min + k as f64 * width
}

/// Index of the equal-width interval holding `mos`; intervals are
/// `[edge(k), edge(k+1))` except the last, which is closed.
pub(crate) fn width_interval(mos: f64, min: f64, width: f64, beta: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    let mut k = (((mos - min) / width).floor().max(0.0) as usize).min(beta - 1);
    while k > 0 && mos < edge(min, width, k) {
        k -= 1;
    }
    while k + 1 < beta && mos >= edge(min, width, k + 1) {
        k += 1;
    }
    k
}

pub fn partition_intervals(manifest: &DatasetManifest, beta: usize) -> Result<Partition> {
    let n = manifest.samples.len();
    if beta == 0 {
        return Err(Error::invalid("beta must be >= 1"));
    }
    if n < beta {
        return Err(Error::InsufficientData(format!(
            "dataset {} has {n} samples, fewer than beta = {beta}",
            manifest.dataset
        )));
    }

    let (min, max) = manifest
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.mos), hi.max(s.mos))
        });
    let width = (max - min) / beta as f64;
    let mut intervals = vec![Vec::new(); beta];
    for s in &manifest.samples {
        intervals[width_interval(s.mos, min, width, beta)].push(s.id.clone());
    }
    if intervals.iter().all(|iv| !iv.is_empty()) {
        return Ok(Partition {
            rule: PartitionRule::EqualWidth,
            intervals,
        });
    }

    let mut sorted: Vec<&RatedSample> = manifest.samples.iter().collect();
    sorted.sort_by(|a, b| a.mos.total_cmp(&b.mos).then_with(|| a.id.cmp(&b.id)));
    let intervals = (0..beta)
        .map(|k| {
            sorted[k * n / beta..(k + 1) * n / beta]
                .iter()
                .map(|s| s.id.clone())
                .collect()
        })
        .collect();
    Ok(Partition {
        rule: PartitionRule::Quantile,
        intervals,
    })
}

/// The interval member with the smallest rating variance; ties go to the
/// lexicographically smallest id.
pub fn select_anchor<'m>(
    interval: &[String],
    manifest: &'m DatasetManifest,
) -> Result<&'m RatedSample> {
    let mut best: Option<&RatedSample> = None;
    for id in interval {
        let s = manifest.get(id).ok_or_else(|| {
            Error::invalid(format!("sample {id:?} not in dataset {}", manifest.dataset))
        })?;
        let var = s.std * s.std;
        best = match best {
            Some(b) if (b.std * b.std, &b.id) <= (var, &s.id) => Some(b),
            _ => Some(s),
        };
    }
    best.ok_or_else(|| Error::invalid("cannot select an anchor from an empty interval"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub beta: usize,
    pub partition: PartitionRule,
    /// One anchor per interval, sorted by MOS (then id).
    pub anchors: Vec<RatedSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl AnchorSet {
    pub fn ids(&self) -> Vec<&str> {
        self.anchors.iter().map(|a| a.id.as_str()).collect()
    }

    /// `(mos, std)` of each anchor, in anchor order.
    pub fn ratings(&self) -> Vec<(f64, f64)> {
        self.anchors.iter().map(|a| (a.mos, a.std)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text)?;
        if set.anchors.len() != set.beta {
            return Err(Error::invalid(format!(
                "{}: anchor set declares beta = {} but lists {} anchors",
                path.display(),
                set.beta,
                set.anchors.len()
            )));
        }
        Ok(set)
    }
}

pub fn build_anchor_set(manifest: &DatasetManifest, beta: usize) -> Result<AnchorSet> {
    let partition = partition_intervals(manifest, beta)?;
    let mut anchors = partition
        .intervals
        .iter()
        .map(|iv| select_anchor(iv, manifest).cloned())
        .collect::<Result<Vec<_>>>()?;
    anchors.sort_by(|a, b| a.mos.total_cmp(&b.mos).then_with(|| a.id.cmp(&b.id)));
    Ok(AnchorSet {
        beta,
        partition: partition.rule,
        anchors,
        seed: None,
        config_digest: None,
    })
}
