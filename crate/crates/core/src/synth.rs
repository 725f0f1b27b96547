//! Synthetic rated datasets and the end-to-end simulated experiment
//! (dataset, anchors, comparison matrix, scores, metrics).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{build_anchor_set, AnchorSet};
use crate::comparator::{SimulatedComparator, SimulatedComparatorConfig};
use crate::dataset::{DatasetManifest, Modality, RatedSample};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::pairgen::PromptKind;
use crate::scoring::{
    build_probability_matrix, score_dataset, ProbabilityMatrix, ScoreInferenceConfig, ScoreTable,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDatasetConfig {
    pub dataset: String,
    pub samples: usize,
    pub modality: Modality,
    pub score_range: [f64; 2],
    /// Rating stds are drawn uniformly from `[std_min, std_max]`.
    pub std_min: f64,
    pub std_max: f64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            samples: 100,
            modality: Modality::Pointcloud,
            score_range: [0.0, 10.0],
            std_min: 0.65,
            std_max: 0.75,
        }
    }
}

impl SyntheticDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.score_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "score_range must be increasing, got [{lo}, {hi}]"
            )));
        }
        if !(self.std_min >= 0.0 && self.std_min <= self.std_max && self.std_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 <= std_min <= std_max, got {} and {}",
                self.std_min, self.std_max
            )));
        }
        if self.samples < 2 {
            return Err(Error::invalid(
                "a synthetic dataset needs at least 2 samples",
            ));
        }
        Ok(())
    }
}

/// MOS uniform over the score range, std uniform over `[std_min, std_max]`.
pub fn generate_manifest(config: &SyntheticDatasetConfig, seed: u64) -> Result<DatasetManifest> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = config.score_range;
    let width = (config.samples - 1).to_string().len();
    let samples = (0..config.samples)
        .map(|i| {
            let mos = rng.random_range(lo..=hi);
            let std = if config.std_max > config.std_min {
                rng.random_range(config.std_min..=config.std_max)
            } else {
                config.std_min
            };
            RatedSample {
                dataset: Some(config.dataset.clone()),
                ..RatedSample::new(
                    format!("{}_{i:0width$}", config.dataset),
                    config.modality,
                    mos,
                    std,
                )
            }
        })
        .collect();
    DatasetManifest::new(config.dataset.clone(), config.score_range, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetConfig,
    pub beta: usize,
    pub comparator: SimulatedComparatorConfig,
    pub scoring: ScoreInferenceConfig,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetConfig::default(),
            beta: crate::anchors::DEFAULT_BETA,
            comparator: SimulatedComparatorConfig::default(),
            scoring: ScoreInferenceConfig::default(),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.comparator.validate()?;
        self.scoring.validate()?;
        if self.beta == 0 || self.beta >= self.dataset.samples {
            return Err(Error::invalid(format!(
                "beta must be in 1..{}, got {}",
                self.dataset.samples, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub manifest: DatasetManifest,
    pub anchors: AnchorSet,
    pub matrix: ProbabilityMatrix,
    pub scores: ScoreTable,
    /// Predicted scores of the non-anchor samples against their MOS.
    pub report: MetricReport,
}

/// Predicted and ground-truth score vectors for every scored row.
pub fn paired_scores(
    scores: &ScoreTable,
    manifest: &DatasetManifest,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::with_capacity(scores.rows.len());
    let mut gt = Vec::with_capacity(scores.rows.len());
    for row in &scores.rows {
        let sample = manifest.get(&row.test_id).ok_or_else(|| {
            Error::invalid(format!(
                "scored id {:?} not in dataset {}",
                row.test_id, manifest.dataset
            ))
        })?;
        pred.push(row.predicted_score);
        gt.push(sample.mos);
    }
    Ok((pred, gt))
}

/// Generates a dataset, selects anchors, queries the simulated comparator
/// for every non-anchor sample and scores it.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<Experiment> {
    config.validate()?;
    let manifest = generate_manifest(&config.dataset, seed)?;
    let mut anchors = build_anchor_set(&manifest, config.beta)?;
    anchors.seed = Some(seed);
    let anchor_ids = anchors.ids();
    let tests: Vec<RatedSample> = manifest
        .samples
        .iter()
        .filter(|s| !anchor_ids.contains(&s.id.as_str()))
        .cloned()
        .collect();
    let comparator = SimulatedComparator::new(SimulatedComparatorConfig {
        seed: config.comparator.seed ^ seed,
        ..config.comparator
    })?
    .with_manifest(&manifest);
    let kind = PromptKind::for_modality(config.dataset.modality);
    let matrix = build_probability_matrix(&tests, &anchors, &comparator, kind, config.workers)?;
    let scores = score_dataset(&matrix, &anchors, &config.scoring)?;
    let (pred, gt) = paired_scores(&scores, &manifest)?;
    let report = MetricReport::compute(&pred, &gt)?;
    Ok(Experiment {
        manifest,
        anchors,
        matrix,
        scores,
        report,
    })
}
