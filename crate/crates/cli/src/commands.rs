//! Subcommand implementations.
//!
//! Each command first loads and checks every input it needs, so that a
//! validation failure leaves the output directory untouched, and only then
//! writes artifacts. Every artifact carries the seed and config digest,
//! either inline or in a `<name>.meta.json` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use pcqa_core::anchors::build_anchor_set;
use pcqa_core::comparator::{
    Comparator, RemoteComparator, ReplayComparator, SimulatedComparator, SimulatedComparatorConfig,
    SimulationMode,
};
use pcqa_core::metrics::{MetricReport, SUMMARY_HEADER};
use pcqa_core::pairgen::{
    export_records, level_histogram, read_records, render_instruction, sample_pairs,
    sample_pairs_balanced,
};
use pcqa_core::render::{render_ply_to_dir, view_file_name};
use pcqa_core::schedule::{plan_schedule as plan, ScheduleManifest};
use pcqa_core::scoring::{build_probability_matrix, score_dataset, ScoreTable};
use pcqa_core::synth::{paired_scores, run_experiment, ExperimentConfig};
use pcqa_core::{
    derive_seed, AnchorSet, DatasetManifest, InstructionRecord, Modality, PromptKind, QualityLevel,
    RatedSample,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{ComparatorSection, PipelineConfig};
use crate::CliError;

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Seed and digest stamped on every artifact.
#[derive(Debug, Clone, Serialize)]
struct Stamp<'a> {
    command: &'a str,
    seed: u64,
    config_digest: String,
}

impl<'a> Stamp<'a> {
    fn new(command: &'a str, config: &PipelineConfig) -> Self {
        Self {
            command,
            seed: config.seed,
            config_digest: config.digest(),
        }
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s);
    path.with_file_name(format!("{stem}.meta.json"))
}

fn write_sidecar(path: &Path, stamp: &Stamp, extra: serde_json::Value) -> Result<(), CliError> {
    let mut value = serde_json::to_value(stamp).map_err(runtime)?;
    value["artifact"] = json!(path.file_name().map(|n| n.to_string_lossy().into_owned()));
    if let serde_json::Value::Object(map) = extra {
        for (k, v) in map {
            value[k] = v;
        }
    }
    write_json(&sidecar_path(path), &value)
}

/// Dataset names and sample ids become file names, so keep them plain.
fn check_file_token(kind: &str, token: &str) -> Result<(), String> {
    let ok = !token.is_empty()
        && token != "."
        && token != ".."
        && token
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(format!(
            "{kind} {token:?} is not usable as a file name (allowed: A-Z a-z 0-9 _ - .)"
        ))
    }
}

struct LoadedDataset {
    manifest: DatasetManifest,
    path: PathBuf,
    n_k: usize,
    prompt_kind: Option<PromptKind>,
}

fn load_datasets(config: &PipelineConfig) -> Result<Vec<LoadedDataset>, CliError> {
    if config.datasets.is_empty() {
        return Err(validation("no datasets configured"));
    }
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for entry in &config.datasets {
        if !entry.manifest.exists() {
            return Err(validation(format!(
                "manifest {} does not exist",
                entry.manifest.display()
            )));
        }
        let manifest = DatasetManifest::load(&entry.manifest)?;
        check_file_token("dataset name", &manifest.dataset).map_err(validation)?;
        if let Some(prev) = seen.insert(manifest.dataset.clone(), entry.manifest.clone()) {
            return Err(validation(format!(
                "dataset name {:?} is used by both {} and {}",
                manifest.dataset,
                prev.display(),
                entry.manifest.display()
            )));
        }
        out.push(LoadedDataset {
            manifest,
            path: entry.manifest.clone(),
            n_k: entry.n_k,
            prompt_kind: entry.prompt_kind,
        });
    }
    Ok(out)
}

/// Samples grouped by modality, in canonical modality order.
fn modality_groups(manifest: &DatasetManifest) -> Vec<(Modality, DatasetManifest)> {
    [Modality::Image, Modality::Pointcloud]
        .into_iter()
        .filter_map(|m| {
            let samples: Vec<RatedSample> = manifest
                .samples
                .iter()
                .filter(|s| s.modality == m)
                .cloned()
                .collect();
            (samples.len() >= 2).then(|| {
                (
                    m,
                    DatasetManifest {
                        dataset: manifest.dataset.clone(),
                        score_range: manifest.score_range,
                        samples,
                    },
                )
            })
        })
        .collect()
}

struct RecordSet {
    dataset: String,
    kind: PromptKind,
    records: Vec<InstructionRecord>,
    level_counts: [usize; 5],
}

fn generate_records(
    config: &PipelineConfig,
    datasets: &[LoadedDataset],
) -> Result<Vec<RecordSet>, CliError> {
    let mut sets = Vec::new();
    for d in datasets {
        let groups = modality_groups(&d.manifest);
        if groups.is_empty() {
            return Err(validation(format!(
                "dataset {} has no modality with at least 2 samples",
                d.manifest.dataset
            )));
        }
        for (modality, group) in groups {
            let kind = PromptKind::for_modality(modality);
            let seed = derive_seed(config.seed, &format!("pairs/{}/{kind}", d.manifest.dataset));
            let pairs = if config.pairs.balanced {
                sample_pairs_balanced(&group, d.n_k, seed)?
            } else {
                sample_pairs(&group, d.n_k, seed)?
            };
            let records = pairs
                .iter()
                .map(|p| render_instruction(p, &group))
                .collect::<pcqa_core::Result<Vec<_>>>()?;
            sets.push(RecordSet {
                dataset: d.manifest.dataset.clone(),
                kind,
                records,
                level_counts: level_histogram(&pairs),
            });
        }
    }
    Ok(sets)
}

fn level_map(counts: &[usize; 5]) -> BTreeMap<String, usize> {
    QualityLevel::ALL
        .iter()
        .map(|l| (l.word().to_string(), counts[l.index()]))
        .collect()
}

pub fn gen_pairs(config: &PipelineConfig) -> Result<String, CliError> {
    let datasets = load_datasets(config)?;
    let sets = generate_records(config, &datasets)?;

    let stamp = Stamp::new("gen-pairs", config);
    let dir = config.output_dir.join("pairs");
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for set in &sets {
        let file = format!("{}_{}.jsonl", set.dataset, set.kind);
        let path = dir.join(&file);
        export_records(&set.records, &path).map_err(runtime)?;
        write_sidecar(&path, &stamp, json!({ "records": set.records.len() }))?;
        entries.push(json!({
            "dataset": set.dataset,
            "prompt_kind": set.kind,
            "file": file,
            "records": set.records.len(),
            "level_counts": level_map(&set.level_counts),
        }));
    }
    write_json(
        &dir.join("summary.json"),
        &json!({ "stamp": stamp, "outputs": entries }),
    )?;
    let total: usize = sets.iter().map(|s| s.records.len()).sum();
    Ok(format!(
        "gen-pairs: wrote {total} records in {} file(s) to {}",
        sets.len(),
        dir.display()
    ))
}

fn record_ids(paths: &[PathBuf], kind: PromptKind) -> Result<Vec<String>, CliError> {
    let mut ids = Vec::new();
    for path in paths {
        if !path.exists() {
            return Err(validation(format!(
                "record file {} does not exist",
                path.display()
            )));
        }
        for r in read_records(path)? {
            if r.prompt_kind != kind {
                return Err(validation(format!(
                    "{}: record {} has prompt kind {} but is listed as a {kind} pool",
                    path.display(),
                    r.id,
                    r.prompt_kind
                )));
            }
            ids.push(r.id);
        }
    }
    Ok(ids)
}

pub fn plan_schedule(config: &PipelineConfig) -> Result<String, CliError> {
    let s = &config.schedule;
    let (tex, geo) = if s.texture_records.is_empty() && s.geometry_records.is_empty() {
        let sets = generate_records(config, &load_datasets(config)?)?;
        let pool = |kind| -> Vec<String> {
            sets.iter()
                .filter(|set| set.kind == kind)
                .flat_map(|set| set.records.iter().map(|r| r.id.clone()))
                .collect()
        };
        (pool(PromptKind::Texture), pool(PromptKind::Geometry))
    } else {
        (
            record_ids(&s.texture_records, PromptKind::Texture)?,
            record_ids(&s.geometry_records, PromptKind::Geometry)?,
        )
    };
    let steps = plan(
        &tex,
        &geo,
        s.total_steps,
        s.batch_size,
        derive_seed(config.seed, "schedule"),
    )?;

    let stamp = Stamp::new("plan-schedule", config);
    let dir = config.output_dir.join("schedule");
    create_dir(&dir)?;
    let manifest = ScheduleManifest {
        seed: config.seed,
        config_digest: Some(stamp.config_digest.clone()),
        steps,
    };
    let path = dir.join("schedule.json");
    manifest.save(&path).map_err(runtime)?;
    let n_tex = manifest
        .steps
        .iter()
        .filter(|st| st.pool == PromptKind::Texture)
        .count();
    Ok(format!(
        "plan-schedule: {} steps ({n_tex} texture, {} geometry) written to {}",
        manifest.steps.len(),
        manifest.steps.len() - n_tex,
        path.display()
    ))
}

fn anchors_for(config: &PipelineConfig, manifest: &DatasetManifest) -> Result<AnchorSet, CliError> {
    let mut set = build_anchor_set(manifest, config.anchors.beta)?;
    set.seed = Some(config.seed);
    set.config_digest = Some(config.digest());
    Ok(set)
}

pub fn build_anchors(config: &PipelineConfig) -> Result<String, CliError> {
    let datasets = load_datasets(config)?;
    let sets = datasets
        .iter()
        .map(|d| anchors_for(config, &d.manifest))
        .collect::<Result<Vec<_>, _>>()?;

    let dir = config.output_dir.join("anchors");
    create_dir(&dir)?;
    let mut lines = Vec::new();
    for (d, set) in datasets.iter().zip(&sets) {
        let path = dir.join(format!("{}.json", d.manifest.dataset));
        set.save(&path).map_err(runtime)?;
        lines.push(format!("{}: {}", d.manifest.dataset, set.ids().join(", ")));
    }
    Ok(format!(
        "build-anchors ({} partition per dataset below)\n{}",
        config.anchors.beta,
        lines.join("\n")
    ))
}

/// Resolves an asset reference against the directory of its manifest.
fn resolve_asset(manifest_path: &Path, asset: &str) -> PathBuf {
    let p = Path::new(asset);
    if p.is_relative() {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    } else {
        p.to_path_buf()
    }
}

pub fn render_views(config: &PipelineConfig) -> Result<String, CliError> {
    let datasets = load_datasets(config)?;

    let stamp = Stamp::new("render-views", config);
    let root = config.output_dir.join("views");
    create_dir(&root)?;
    let (mut rendered, mut attempted) = (0usize, 0usize);
    let mut failures = Vec::new();
    let mut skipped = Vec::new();
    for d in &datasets {
        let dir = root.join(&d.manifest.dataset);
        create_dir(&dir)?;
        for s in d
            .manifest
            .samples
            .iter()
            .filter(|s| s.modality == Modality::Pointcloud)
        {
            let Some(ply) = s
                .asset_refs
                .iter()
                .find(|a| a.to_ascii_lowercase().ends_with(".ply"))
            else {
                skipped.push(
                    json!({ "dataset": d.manifest.dataset, "id": s.id, "reason": "no .ply asset" }),
                );
                continue;
            };
            attempted += 1;
            let result = check_file_token("sample id", &s.id)
                .map_err(pcqa_core::Error::InvalidInput)
                .and_then(|_| {
                    render_ply_to_dir(resolve_asset(&d.path, ply), &s.id, &dir, &config.render)
                });
            match result {
                Ok(paths) => {
                    rendered += 1;
                    let views: Vec<String> =
                        (0..paths.len()).map(|k| view_file_name(&s.id, k)).collect();
                    write_sidecar(
                        &dir.join(format!("{}.views", s.id)),
                        &stamp,
                        json!({ "source": ply, "view_config": config.render, "views": views }),
                    )?;
                }
                Err(e) => {
                    warn!("{}/{}: {e}", d.manifest.dataset, s.id);
                    failures.push(json!({ "dataset": d.manifest.dataset, "id": s.id, "error": e.to_string() }));
                }
            }
        }
    }
    write_json(
        &root.join("summary.json"),
        &json!({
            "stamp": stamp,
            "view_config": config.render,
            "rendered": rendered,
            "failed": failures,
            "skipped": skipped,
        }),
    )?;
    if attempted > 0 && rendered == 0 {
        return Err(runtime(format!(
            "all {attempted} point clouds failed to render; see {}",
            root.join("summary.json").display()
        )));
    }
    Ok(format!(
        "render-views: {rendered} rendered, {} failed, {} skipped; output in {}",
        failures.len(),
        skipped.len(),
        root.display()
    ))
}

fn build_comparator(
    config: &PipelineConfig,
    datasets: &[LoadedDataset],
) -> Result<Box<dyn Comparator>, CliError> {
    Ok(match &config.comparator {
        ComparatorSection::Simulated {
            noise_scale,
            mode,
            seed,
        } => {
            let mut c = SimulatedComparator::new(SimulatedComparatorConfig {
                noise_scale: *noise_scale,
                mode: *mode,
                seed: *seed ^ config.seed,
            })?;
            for d in datasets {
                c.add_samples(&d.manifest.samples);
            }
            Box::new(c)
        }
        ComparatorSection::Replay { path } => {
            if !path.exists() {
                return Err(validation(format!(
                    "replay log {} does not exist",
                    path.display()
                )));
            }
            Box::new(ReplayComparator::load(path)?)
        }
        ComparatorSection::Remote {
            endpoint,
            timeout_secs,
            inline_media,
        } => Box::new(
            RemoteComparator::new(endpoint.clone(), Duration::from_secs_f64(*timeout_secs))
                .with_inline_media(*inline_media),
        ),
    })
}

struct EvalPlan<'a> {
    dataset: &'a LoadedDataset,
    anchors: AnchorSet,
    tests: Vec<RatedSample>,
    kind: PromptKind,
}

fn write_metrics(dir: &Path, stamp: &Stamp, report: &MetricReport) -> Result<(), CliError> {
    write_json(
        &dir.join("metrics.json"),
        &json!({ "stamp": stamp, "report": report }),
    )?;
    let csv = format!(
        "{SUMMARY_HEADER},seed,config_digest\n{},{},{}\n",
        report.summary_row(),
        stamp.seed,
        stamp.config_digest
    );
    fs::write(dir.join("metrics.csv"), csv).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

/// Writes the matrix log, scores and (when possible) metrics of one run.
fn write_scoring_outputs(
    dir: &Path,
    stamp: &Stamp,
    matrix: &pcqa_core::ProbabilityMatrix,
    scores: &ScoreTable,
    manifest: &DatasetManifest,
) -> Result<Option<MetricReport>, CliError> {
    let matrix_path = dir.join("matrix.jsonl");
    let cells = matrix.save_replay_log(&matrix_path).map_err(runtime)?;
    write_sidecar(
        &matrix_path,
        stamp,
        json!({ "prompt_kind": matrix.prompt_kind, "cells": cells, "failures": matrix.failures }),
    )?;
    let scores_path = dir.join("scores.csv");
    scores
        .write_csv(&scores_path, &stamp.config_digest)
        .map_err(runtime)?;
    write_sidecar(
        &scores_path,
        stamp,
        json!({ "scored": scores.rows.len(), "skipped": scores.skipped }),
    )?;

    let (pred, gt) = paired_scores(scores, manifest).map_err(runtime)?;
    if pred.len() < 2 {
        warn!("fewer than 2 scored tests; metrics not computed");
        return Ok(None);
    }
    let report = MetricReport::compute(&pred, &gt).map_err(runtime)?;
    write_metrics(dir, stamp, &report)?;
    Ok(Some(report))
}

pub fn evaluate(config: &PipelineConfig) -> Result<String, CliError> {
    let datasets = load_datasets(config)?;
    let comparator = build_comparator(config, &datasets)?;
    let mut plans = Vec::new();
    for d in &datasets {
        let anchors = anchors_for(config, &d.manifest)?;
        let ids = anchors.ids();
        let tests: Vec<RatedSample> = d
            .manifest
            .samples
            .iter()
            .filter(|s| !ids.contains(&s.id.as_str()))
            .cloned()
            .collect();
        if tests.is_empty() {
            return Err(validation(format!(
                "dataset {} has no samples left to score",
                d.manifest.dataset
            )));
        }
        let kind = d
            .prompt_kind
            .unwrap_or_else(|| PromptKind::for_modality(tests[0].modality));
        plans.push(EvalPlan {
            dataset: d,
            anchors,
            tests,
            kind,
        });
    }

    let stamp = Stamp::new("evaluate", config);
    let root = config.output_dir.join("evaluate");
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for p in &plans {
        let name = &p.dataset.manifest.dataset;
        let dir = root.join(name);
        create_dir(&dir)?;
        p.anchors.save(dir.join("anchors.json")).map_err(runtime)?;
        info!(
            "{name}: {} tests x {} anchors via {}",
            p.tests.len(),
            p.anchors.anchors.len(),
            comparator.name()
        );
        let matrix = match build_probability_matrix(
            &p.tests,
            &p.anchors,
            comparator.as_ref(),
            p.kind,
            config.workers,
        ) {
            Ok(m) => m,
            Err(e) => {
                warn!("{name}: {e}");
                write_json(
                    &dir.join("summary.json"),
                    &json!({ "stamp": stamp, "error": e.to_string() }),
                )?;
                failed.push(name.clone());
                continue;
            }
        };
        for f in &matrix.failures {
            warn!("{name}: {} vs {}: {}", f.test_id, f.anchor_id, f.message);
        }
        let scores = score_dataset(&matrix, &p.anchors, &config.scoring).map_err(runtime)?;
        let report = write_scoring_outputs(&dir, &stamp, &matrix, &scores, &p.dataset.manifest)?;
        write_json(
            &dir.join("summary.json"),
            &json!({
                "stamp": stamp,
                "comparator": comparator.name(),
                "prompt_kind": p.kind,
                "tests": p.tests.len(),
                "anchors": p.anchors.ids(),
                "failed_cells": matrix.failures.len(),
                "scored": scores.rows.len(),
                "skipped": scores.skipped,
            }),
        )?;
        lines.push(match report {
            Some(r) => format!(
                "{name}: scored {}/{} (SROCC {:.4}, PLCC {:.4}, KROCC {:.4}, RMSE {:.4})",
                scores.rows.len(),
                p.tests.len(),
                r.srocc,
                r.plcc_fitted,
                r.krocc,
                r.rmse_fitted
            ),
            None => format!("{name}: scored {}/{}", scores.rows.len(), p.tests.len()),
        });
    }
    if !failed.is_empty() {
        return Err(runtime(format!(
            "evaluation failed for dataset(s): {}",
            failed.join(", ")
        )));
    }
    Ok(format!("evaluate\n{}", lines.join("\n")))
}

pub fn metrics(config: &PipelineConfig) -> Result<String, CliError> {
    let scores_path =
        config.metrics.scores.as_ref().ok_or_else(|| {
            validation("metrics needs a score table (--scores or metrics.scores)")
        })?;
    let manifest_path =
        config.metrics.manifest.as_ref().ok_or_else(|| {
            validation("metrics needs a manifest (--manifest or metrics.manifest)")
        })?;
    for p in [scores_path, manifest_path] {
        if !p.exists() {
            return Err(validation(format!("{} does not exist", p.display())));
        }
    }
    let scores = ScoreTable::read_csv(scores_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let (pred, gt) = paired_scores(&scores, &manifest)?;
    let report = MetricReport::compute(&pred, &gt)?;

    let stamp = Stamp::new("metrics", config);
    let dir = config.output_dir.join("metrics");
    create_dir(&dir)?;
    write_metrics(&dir, &stamp, &report)?;
    Ok(format!("{SUMMARY_HEADER}\n{}", report.summary_row()))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    noise_scale: f64,
    model_noise: f64,
    seeds: usize,
    mean_srocc: f64,
    mean_plcc: f64,
    mean_rmse: f64,
}

fn noise_sweep(
    config: &PipelineConfig,
    base: &ExperimentConfig,
) -> Result<Vec<SweepRow>, CliError> {
    let n = config.simulate.sweep_seeds;
    let mut rows = Vec::new();
    for &s in &config.simulate.noise_sweep {
        let mut exp = base.clone();
        exp.comparator = SimulatedComparatorConfig {
            noise_scale: s,
            mode: SimulationMode::Hard,
            seed: base.comparator.seed,
        };
        if s > 0.0 {
            exp.scoring.model_noise = s;
        }
        let (mut srocc, mut plcc, mut rmse) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let r = run_experiment(&exp, config.seed.wrapping_add(k as u64))
                .map_err(runtime)?
                .report;
            srocc += r.srocc / n as f64;
            plcc += r.plcc_fitted / n as f64;
            rmse += r.rmse_fitted / n as f64;
        }
        rows.push(SweepRow {
            noise_scale: s,
            model_noise: exp.scoring.model_noise,
            seeds: n,
            mean_srocc: srocc,
            mean_plcc: plcc,
            mean_rmse: rmse,
        });
    }
    Ok(rows)
}

pub fn simulate(config: &PipelineConfig) -> Result<String, CliError> {
    let exp = config.experiment();
    exp.validate()?;
    if config
        .simulate
        .noise_sweep
        .iter()
        .any(|s| !(s.is_finite() && *s >= 0.0))
    {
        return Err(validation(
            "simulate.noise_sweep entries must be finite and >= 0",
        ));
    }
    if !config.simulate.noise_sweep.is_empty() && config.simulate.sweep_seeds == 0 {
        return Err(validation("simulate.sweep_seeds must be >= 1"));
    }

    let run = run_experiment(&exp, config.seed).map_err(runtime)?;
    let sweep = noise_sweep(config, &exp)?;

    let stamp = Stamp::new("simulate", config);
    let dir = config.output_dir.join("simulate");
    create_dir(&dir)?;
    let dataset_path = dir.join("dataset.json");
    run.manifest.save(&dataset_path).map_err(runtime)?;
    write_sidecar(&dataset_path, &stamp, json!({ "generator": exp.dataset }))?;
    let mut anchors = run.anchors.clone();
    anchors.config_digest = Some(stamp.config_digest.clone());
    anchors.save(dir.join("anchors.json")).map_err(runtime)?;
    write_scoring_outputs(&dir, &stamp, &run.matrix, &run.scores, &run.manifest)?;

    let mut summary = format!(
        "simulate: N={} beta={} SROCC {:.4} PLCC {:.4} KROCC {:.4} RMSE {:.4}",
        run.manifest.samples.len(),
        run.anchors.beta,
        run.report.srocc,
        run.report.plcc_fitted,
        run.report.krocc,
        run.report.rmse_fitted
    );
    if !sweep.is_empty() {
        let path = dir.join("sweep.csv");
        let mut text =
            String::from("noise_scale,model_noise,seeds,mean_srocc,mean_plcc,mean_rmse\n");
        for r in &sweep {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.noise_scale, r.model_noise, r.seeds, r.mean_srocc, r.mean_plcc, r.mean_rmse
            ));
        }
        fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let monotone = sweep.windows(2).all(|w| w[1].mean_srocc <= w[0].mean_srocc);
        write_sidecar(&path, &stamp, json!({ "monotone_nonincreasing": monotone }))?;
        for r in &sweep {
            summary.push_str(&format!(
                "\n  noise {}: mean SROCC {:.4} over {} seeds",
                r.noise_scale, r.mean_srocc, r.seeds
            ));
        }
    }
    Ok(summary)
}
