//! Probability-matrix aggregation and per-test score inference.
//!
//! Each test row holds one level distribution per anchor. The predicted
//! score maximizes
//!
//! ```text
//! F(q) = sum_k sum_c P[k][c] * ln p_model(c | z_k(q))
//! z_k(q) = (q_k - q) / sqrt(std_k^2 + test_std^2)
//! ```
//!
//! where `p_model` is the same Gaussian interval model the simulated
//! comparator uses, with noise `model_noise`. The maximum is located on a
//! uniform grid and refined with golden-section search.
//!
//! The log masses are evaluated directly, including far tails, instead of
//! flooring `p_model`. A floor clips adjacent levels to the same constant,
//! which breaks the ordering "more mass toward superior never lowers the
//! score".

use std::fs::File;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::comparator::{
    log_interval_probabilities, write_replay_log, Comparator, ComparatorQuery, ReplayEntry,
    Stimulus,
};
use crate::dataset::RatedSample;
use crate::error::{Error, Result};
use crate::pairgen::PromptKind;
use crate::quality::{standardized_difference, LevelDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub test_id: String,
    pub anchor_id: String,
    pub message: String,
}

/// `N x beta` soft comparison results; `None` marks a failed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub prompt_kind: PromptKind,
    pub test_ids: Vec<String>,
    pub anchor_ids: Vec<String>,
    pub cells: Vec<Vec<Option<LevelDistribution>>>,
    pub failures: Vec<CellFailure>,
}

impl ProbabilityMatrix {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.test_ids.len() * self.anchor_ids.len()
    }

    /// Completed cells in the replay-log layout, row-major.
    pub fn replay_entries(&self) -> Vec<ReplayEntry> {
        let mut out = Vec::new();
        for (i, row) in self.cells.iter().enumerate() {
            for (k, cell) in row.iter().enumerate() {
                if let Some(d) = cell {
                    out.push(ReplayEntry {
                        test_id: self.test_ids[i].clone(),
                        anchor_id: self.anchor_ids[k].clone(),
                        prompt_kind: self.prompt_kind,
                        probs: *d,
                    });
                }
            }
        }
        out
    }

    pub fn save_replay_log(&self, path: impl AsRef<Path>) -> Result<usize> {
        write_replay_log(&self.replay_entries(), path)
    }
}

/// Queries `comparator` once per (test, anchor) cell.
///
/// With `workers > 1` and a comparator that declares itself concurrent-safe,
/// cells are evaluated on a bounded thread pool; results are keyed by cell so
/// the matrix does not depend on completion order.
pub fn build_probability_matrix(
    tests: &[RatedSample],
    anchor_set: &AnchorSet,
    comparator: &dyn Comparator,
    prompt_kind: PromptKind,
    workers: usize,
) -> Result<ProbabilityMatrix> {
    if anchor_set.anchors.is_empty() {
        return Err(Error::invalid("anchor set is empty"));
    }
    let beta = anchor_set.anchors.len();
    let cells: Vec<(usize, usize)> = (0..tests.len())
        .flat_map(|i| (0..beta).map(move |k| (i, k)))
        .collect();
    let run = |&(i, k): &(usize, usize)| -> Result<LevelDistribution> {
        let query = ComparatorQuery::new(
            Stimulus::from(&tests[i]),
            Stimulus::from(&anchor_set.anchors[k]),
            prompt_kind,
        )?;
        comparator.compare(&query)
    };

    let results: Vec<Result<LevelDistribution>> = if workers > 1 && comparator.concurrent_safe() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Evaluation(format!("cannot start worker pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };

    let mut matrix = ProbabilityMatrix {
        prompt_kind,
        test_ids: tests.iter().map(|t| t.id.clone()).collect(),
        anchor_ids: anchor_set.anchors.iter().map(|a| a.id.clone()).collect(),
        cells: vec![vec![None; beta]; tests.len()],
        failures: Vec::new(),
    };
    for (&(i, k), result) in cells.iter().zip(results) {
        match result {
            Ok(d) => matrix.cells[i][k] = Some(d),
            Err(e) => matrix.failures.push(CellFailure {
                test_id: matrix.test_ids[i].clone(),
                anchor_id: matrix.anchor_ids[k].clone(),
                message: e.to_string(),
            }),
        }
    }
    if !cells.is_empty() && matrix.failures.len() == cells.len() {
        return Err(Error::Evaluation(format!(
            "all {} comparisons failed; first error: {}",
            cells.len(),
            matrix.failures[0].message
        )));
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreInferenceConfig {
    /// Noise of the level model used in the likelihood (> 0).
    pub model_noise: f64,
    /// Nominal rating std of a test sample; defaults to the mean anchor std.
    pub test_std: Option<f64>,
    /// Search interval padding as a fraction of the anchor MOS span.
    pub search_margin: f64,
    pub grid_points: usize,
    pub refine_tolerance: f64,
}

impl Default for ScoreInferenceConfig {
    fn default() -> Self {
        Self {
            model_noise: 0.25,
            test_std: None,
            search_margin: 0.25,
            grid_points: 512,
            refine_tolerance: 1e-6,
        }
    }
}

impl ScoreInferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.model_noise.is_finite() && self.model_noise > 0.0) {
            return Err(Error::invalid(format!(
                "model_noise must be > 0, got {}",
                self.model_noise
            )));
        }
        if let Some(s) = self.test_std {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!("test_std must be >= 0, got {s}")));
            }
        }
        if !(self.search_margin.is_finite() && self.search_margin >= 0.0) {
            return Err(Error::invalid(format!(
                "search_margin must be >= 0, got {}",
                self.search_margin
            )));
        }
        if self.grid_points < 3 {
            return Err(Error::invalid(format!(
                "grid_points must be >= 3, got {}",
                self.grid_points
            )));
        }
        if !(self.refine_tolerance.is_finite() && self.refine_tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "refine_tolerance must be > 0, got {}",
                self.refine_tolerance
            )));
        }
        Ok(())
    }
}

/// The log-likelihood `F(q)` of one row.
pub fn row_log_likelihood(
    q: f64,
    row: &[(&LevelDistribution, (f64, f64))],
    test_std: f64,
    model_noise: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (dist, (mos, std)) in row {
        let z = standardized_difference(*mos, *std, q, test_std)?;
        let log_model = log_interval_probabilities(z, model_noise)?;
        for (p, lm) in dist.probs().iter().zip(log_model) {
            if *p > 0.0 {
                total += p * lm;
            }
        }
    }
    Ok(total)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes `f` on `[a, b]` by golden-section search; returns `(x, f(x))`.
pub fn golden_section_maximize(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Predicted score of one test row; `None` cells are left out of the sum.
pub fn infer_score(
    row: &[Option<LevelDistribution>],
    anchors: &[(f64, f64)],
    config: &ScoreInferenceConfig,
) -> Result<f64> {
    config.validate()?;
    if row.len() != anchors.len() {
        return Err(Error::Shape {
            expected: anchors.len(),
            actual: row.len(),
        });
    }
    let used: Vec<(&LevelDistribution, (f64, f64))> = row
        .iter()
        .zip(anchors)
        .filter_map(|(cell, a)| cell.as_ref().map(|d| (d, *a)))
        .collect();
    if used.is_empty() {
        return Err(Error::invalid("row has no comparison results"));
    }
    if used.len() < row.len() {
        warn!(
            "{} of {} cells missing; scoring on the rest",
            row.len() - used.len(),
            row.len()
        );
    }

    let test_std = config
        .test_std
        .unwrap_or_else(|| anchors.iter().map(|a| a.1).sum::<f64>() / anchors.len() as f64);
    let (lo_mos, hi_mos) = anchors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
            (lo.min(a.0), hi.max(a.0))
        });
    let span = if hi_mos > lo_mos {
        hi_mos - lo_mos
    } else {
        1.0
    };
    let margin = config.search_margin * span;
    let (lo, hi) = (lo_mos - margin, hi_mos + margin);

    let objective = |q: f64| row_log_likelihood(q, &used, test_std, config.model_noise);
    let n = config.grid_points;
    let step = (hi - lo) / (n - 1) as f64;
    let grid = |i: usize| if i + 1 == n { hi } else { lo + step * i as f64 };

    let mut best_i = 0;
    let mut best_f = objective(grid(0))?;
    for i in 1..n {
        let v = objective(grid(i))?;
        if v > best_f {
            best_i = i;
            best_f = v;
        }
    }
    let a = grid(best_i.saturating_sub(1));
    let b = grid((best_i + 1).min(n - 1));
    let (x, fx) = golden_section_maximize(objective, a, b, config.refine_tolerance)?;
    Ok(if fx >= best_f { x } else { grid(best_i) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub test_id: String,
    pub predicted_score: f64,
    pub anchors_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub test_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub skipped: Vec<SkippedRow>,
}

/// Scores every complete row of `matrix`; incomplete or failing rows are
/// reported in `skipped`.
pub fn score_dataset(
    matrix: &ProbabilityMatrix,
    anchor_set: &AnchorSet,
    config: &ScoreInferenceConfig,
) -> Result<ScoreTable> {
    config.validate()?;
    let ids: Vec<&str> = anchor_set.ids();
    if matrix
        .anchor_ids
        .iter()
        .map(String::as_str)
        .ne(ids.iter().copied())
    {
        return Err(Error::invalid(
            "probability matrix was built against a different anchor set",
        ));
    }
    let ratings = anchor_set.ratings();
    let mut table = ScoreTable::default();
    for (test_id, row) in matrix.test_ids.iter().zip(&matrix.cells) {
        let missing = row.iter().filter(|c| c.is_none()).count();
        if missing > 0 {
            table.skipped.push(SkippedRow {
                test_id: test_id.clone(),
                reason: format!("{missing} of {} comparisons missing", row.len()),
            });
            continue;
        }
        match infer_score(row, &ratings, config) {
            Ok(score) => table.rows.push(ScoreRow {
                test_id: test_id.clone(),
                predicted_score: score,
                anchors_used: row.len(),
            }),
            Err(e) => table.skipped.push(SkippedRow {
                test_id: test_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(table)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreCsvRow {
    test_id: String,
    predicted_score: f64,
    anchors_used: usize,
    config_digest: String,
}

impl ScoreTable {
    /// Writes `test_id,predicted_score,anchors_used,config_digest`.
    pub fn write_csv(&self, path: impl AsRef<Path>, config_digest: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        if self.rows.is_empty() {
            w.write_record([
                "test_id",
                "predicted_score",
                "anchors_used",
                "config_digest",
            ])
            .map_err(csv_err)?;
        }
        for r in &self.rows {
            w.serialize(ScoreCsvRow {
                test_id: r.test_id.clone(),
                predicted_score: r.predicted_score,
                anchors_used: r.anchors_used,
                config_digest: config_digest.to_string(),
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (n, rec) in csv::Reader::from_reader(file)
            .deserialize::<ScoreCsvRow>()
            .enumerate()
        {
            let rec = rec.map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: n + 2,
                message: e.to_string(),
            })?;
            rows.push(ScoreRow {
                test_id: rec.test_id,
                predicted_score: rec.predicted_score,
                anchors_used: rec.anchors_used,
            });
        }
        Ok(Self {
            rows,
            skipped: Vec::new(),
        })
    }
}
