//! Pipeline configuration: one TOML file, with `--seed` / `--out` overrides.
//!
//! Relative paths inside the file are resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use pcqa_core::comparator::SimulatedComparatorConfig;
use pcqa_core::render::ViewConfig;
use pcqa_core::scoring::ScoreInferenceConfig;
use pcqa_core::synth::{ExperimentConfig, SyntheticDatasetConfig};
use pcqa_core::PromptKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Upper bound on item-level parallelism within a stage.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub pairs: PairsSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub anchors: AnchorsSection,
    #[serde(default)]
    pub render: ViewConfig,
    #[serde(default)]
    pub comparator: ComparatorSection,
    #[serde(default)]
    pub scoring: ScoreInferenceConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            workers: default_workers(),
            datasets: Vec::new(),
            pairs: PairsSection::default(),
            schedule: ScheduleSection::default(),
            anchors: AnchorsSection::default(),
            render: ViewConfig::default(),
            comparator: ComparatorSection::default(),
            scoring: ScoreInferenceConfig::default(),
            metrics: MetricsSection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub manifest: PathBuf,
    /// Number of sampled comparison pairs per modality group.
    #[serde(default = "default_n_k")]
    pub n_k: usize,
    /// Prompt kind used at evaluation; defaults to the samples' modality.
    #[serde(default)]
    pub prompt_kind: Option<PromptKind>,
}

fn default_n_k() -> usize {
    1000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    /// Draw pairs so that every reachable level is about equally frequent.
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub total_steps: usize,
    pub batch_size: usize,
    /// Record files for each pool. When both are empty the pools are
    /// regenerated from the configured datasets.
    pub texture_records: Vec<PathBuf>,
    pub geometry_records: Vec<PathBuf>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            batch_size: 8,
            texture_records: Vec::new(),
            geometry_records: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorsSection {
    pub beta: usize,
}

impl Default for AnchorsSection {
    fn default() -> Self {
        Self {
            beta: pcqa_core::anchors::DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComparatorSection {
    Simulated {
        #[serde(default)]
        noise_scale: f64,
        #[serde(default)]
        mode: pcqa_core::comparator::SimulationMode,
        #[serde(default)]
        seed: u64,
    },
    Replay {
        path: PathBuf,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        inline_media: bool,
    },
}

fn default_timeout() -> f64 {
    30.0
}

impl Default for ComparatorSection {
    fn default() -> Self {
        Self::Simulated {
            noise_scale: 0.0,
            mode: Default::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Score table (CSV) to evaluate.
    pub scores: Option<PathBuf>,
    /// Manifest holding the ground-truth MOS.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub dataset: SyntheticDatasetConfig,
    pub beta: usize,
    pub comparator: SimulatedComparatorConfig,
    /// Optional oracle-noise sweep; each entry is run over `sweep_seeds`
    /// seeds in hard mode with the model noise matched to the oracle.
    pub noise_sweep: Vec<f64>,
    pub sweep_seeds: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetConfig::default(),
            beta: pcqa_core::anchors::DEFAULT_BETA,
            comparator: SimulatedComparatorConfig::default(),
            noise_sweep: Vec::new(),
            sweep_seeds: 10,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut config: Self =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for d in &mut self.datasets {
            fix(&mut d.manifest);
        }
        self.schedule.texture_records.iter_mut().for_each(fix);
        self.schedule.geometry_records.iter_mut().for_each(fix);
        if let ComparatorSection::Replay { path } = &mut self.comparator {
            fix(path);
        }
        if let Some(p) = &mut self.metrics.scores {
            fix(p);
        }
        if let Some(p) = &mut self.metrics.manifest {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Validation("workers must be >= 1".into()));
        }
        self.render.validate()?;
        self.scoring.validate()?;
        if let ComparatorSection::Simulated { noise_scale, .. } = &self.comparator {
            if !(noise_scale.is_finite() && *noise_scale >= 0.0) {
                return Err(CliError::Validation(format!(
                    "comparator.noise_scale must be finite and >= 0, got {noise_scale}"
                )));
            }
        }
        if let ComparatorSection::Remote { timeout_secs, .. } = &self.comparator {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(CliError::Validation(format!(
                    "comparator.timeout_secs must be > 0, got {timeout_secs}"
                )));
            }
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            dataset: self.simulate.dataset.clone(),
            beta: self.simulate.beta,
            comparator: self.simulate.comparator,
            scoring: self.scoring,
            workers: self.workers,
        }
    }

    /// Digest of the effective configuration, stamped on every artifact.
    pub fn digest(&self) -> String {
        pcqa_core::config_digest(self).expect("config serializes to JSON")
    }
}
