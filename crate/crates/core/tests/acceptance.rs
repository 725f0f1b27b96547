//! Acceptance suite: one timed PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`cargo test --test acceptance`). A criterion
//! passes when its check holds and it finishes inside its time budget. The
//! process exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use pcqa_core::adaptation::{
    delta_singular_values, lora_init, synthetic_pools, toy_train, ToyComparatorNet, ToyTrainConfig,
};
use pcqa_core::anchors::PartitionRule;
use pcqa_core::comparator::{SimulatedComparatorConfig, SimulationMode};
use pcqa_core::metrics::MetricReport;
use pcqa_core::quality::{quantize_level, QualityLevel, NUM_LEVELS};
use pcqa_core::render::{
    normalize, parse_ply, render_ply_to_dir, PointCloud, ViewConfig, MAX_VIEWS,
};
use pcqa_core::schedule::{cross_entropy, plan_schedule, pool_for_step};
use pcqa_core::scoring::build_probability_matrix;
use pcqa_core::synth::{run_experiment, ExperimentConfig};
use pcqa_core::{
    build_anchor_set, score_dataset, ComparisonPair, DatasetManifest, Modality, PromptKind,
    RatedSample, ReplayComparator, ScoreInferenceConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

/// Name, time budget and check of one criterion.
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn quantization_conformance() -> Check {
    use QualityLevel::*;
    let interiors = [
        (0.0, Similar),
        (0.5, Similar),
        (-0.5, Similar),
        (1.5, Worse),
        (-1.5, Better),
        (2.5, Inferior),
        (-2.5, Superior),
    ];
    // |z| <= 1 is similar, 1 < |z| <= 2 is worse/better, on both sides
    let boundaries = [
        (1.0, Similar),
        (-1.0, Similar),
        (2.0, Worse),
        (-2.0, Better),
    ];
    for (z, want) in interiors.iter().chain(&boundaries) {
        let got = quantize_level(*z).map_err(err)?;
        ensure(got == *want, || format!("z = {z}: got {got}, want {want}"))?;
    }
    Ok(format!(
        "{} interior and {} boundary points",
        interiors.len(),
        boundaries.len()
    ))
}

fn mirror_symmetry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5171);
    let n = 10_000;
    let mut violations = 0;
    for k in 0..n {
        // coarse grids hit the quantization boundaries exactly
        let (qi, qj, si, sj) = if k % 2 == 0 {
            (
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
            )
        } else {
            (
                rng.random_range(0..=20) as f64 * 0.5,
                rng.random_range(0..=20) as f64 * 0.5,
                [0.0, 0.3, 0.4, 0.5][rng.random_range(0..4)],
                [0.0, 0.3, 0.4, 0.5][rng.random_range(0..4)],
            )
        };
        let a = RatedSample::new("a", Modality::Pointcloud, qi, si);
        let b = RatedSample::new("b", Modality::Pointcloud, qj, sj);
        let ab = ComparisonPair::label(&a, &b).map_err(err)?;
        let ba = ComparisonPair::label(&b, &a).map_err(err)?;
        if ab.level != ba.level.mirror() {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("{n} pairs, 0 violations"))
}

/// Exhaustive anchor oracle: explicit interval membership tests, a full
/// scan for the minimum variance, then MOS order.
fn anchor_oracle(manifest: &DatasetManifest, beta: usize) -> (PartitionRule, Vec<String>) {
    let samples = &manifest.samples;
    let min = samples.iter().map(|s| s.mos).fold(f64::INFINITY, f64::min);
    let max = samples
        .iter()
        .map(|s| s.mos)
        .fold(f64::NEG_INFINITY, f64::max);
    let w = (max - min) / beta as f64;
    let mut groups: Vec<Vec<&RatedSample>> = vec![Vec::new(); beta];
    for s in samples {
        let k = (0..beta).find(|&k| {
            let lo = min + k as f64 * w;
            let hi = min + (k + 1) as f64 * w;
            s.mos >= lo && (s.mos < hi || k == beta - 1)
        });
        if let Some(k) = k {
            groups[k].push(s);
        }
    }
    let covered: usize = groups.iter().map(Vec::len).sum();
    let rule = if covered == samples.len() && groups.iter().all(|g| !g.is_empty()) {
        PartitionRule::EqualWidth
    } else {
        let mut sorted: Vec<&RatedSample> = samples.iter().collect();
        sorted.sort_by(|a, b| a.mos.partial_cmp(&b.mos).unwrap().then(a.id.cmp(&b.id)));
        let n = sorted.len();
        groups = (0..beta)
            .map(|k| sorted[k * n / beta..(k + 1) * n / beta].to_vec())
            .collect();
        PartitionRule::Quantile
    };
    let mut picks: Vec<&RatedSample> = groups
        .iter()
        .map(|g| {
            let mut best = g[0];
            for s in g {
                let (v, bv) = (s.std * s.std, best.std * best.std);
                if v < bv || (v == bv && s.id < best.id) {
                    best = s;
                }
            }
            best
        })
        .collect();
    picks.sort_by(|a, b| a.mos.partial_cmp(&b.mos).unwrap().then(a.id.cmp(&b.id)));
    (rule, picks.iter().map(|s| s.id.clone()).collect())
}

fn anchor_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa4c0);
    let trials = 100;
    let mut fallbacks = 0;
    for t in 0..trials {
        let beta = rng.random_range(1..=5);
        let n = rng.random_range(beta..=50);
        let mut names: Vec<usize> = (0..n).collect();
        names.shuffle(&mut rng);
        let samples = (0..n)
            .map(|i| {
                let (mos, std) = match t % 3 {
                    0 => (rng.random_range(0.0..=10.0), rng.random_range(0.2..1.0)),
                    // ties in both MOS and std
                    1 => (
                        rng.random_range(0..=4) as f64,
                        [0.5, 0.6, 0.7][rng.random_range(0..3)],
                    ),
                    // a tight cluster plus outliers leaves interior intervals empty
                    _ => {
                        let mos = if i < 2 {
                            [0.0, 10.0][i]
                        } else {
                            5.0 + rng.random_range(-0.1..0.1)
                        };
                        (mos, [0.4, 0.5][rng.random_range(0..2)])
                    }
                };
                RatedSample::new(format!("s{:02}", names[i]), Modality::Pointcloud, mos, std)
            })
            .collect();
        let manifest =
            DatasetManifest::new(format!("trial{t}"), [0.0, 10.0], samples).map_err(err)?;
        let set = build_anchor_set(&manifest, beta).map_err(err)?;
        let (rule, ids) = anchor_oracle(&manifest, beta);
        let got: Vec<String> = set.anchors.iter().map(|a| a.id.clone()).collect();
        ensure(set.partition == rule && got == ids, || {
            format!(
                "trial {t} (n = {n}, beta = {beta}): got {:?} {got:?}, oracle {rule:?} {ids:?}",
                set.partition
            )
        })?;
        if rule == PartitionRule::Quantile {
            fallbacks += 1;
        }
    }
    Ok(format!(
        "{trials} manifests equal, {fallbacks} via quantile fallback"
    ))
}

fn round_trip() -> Check {
    let cfg = ExperimentConfig {
        scoring: ScoreInferenceConfig {
            // centre of the synthetic std range
            test_std: Some(0.7),
            ..Default::default()
        },
        ..Default::default()
    };
    let exp = run_experiment(&cfg, 0).map_err(err)?;
    let range = cfg.dataset.score_range[1] - cfg.dataset.score_range[0];
    let r = &exp.report;
    let detail = format!(
        "SROCC {:.4}, RMSE {:.3} (limit {:.2})",
        r.srocc,
        r.rmse_raw,
        0.05 * range
    );
    ensure(r.srocc >= 0.99 && r.rmse_raw <= 0.05 * range, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn noise_monotonicity() -> Check {
    let levels = [0.0, 0.5, 2.0];
    let mut means = Vec::new();
    for &s in &levels {
        let cfg = ExperimentConfig {
            comparator: SimulatedComparatorConfig {
                noise_scale: s,
                mode: SimulationMode::Hard,
                seed: 0,
            },
            scoring: ScoreInferenceConfig {
                model_noise: if s > 0.0 {
                    s
                } else {
                    ScoreInferenceConfig::default().model_noise
                },
                ..Default::default()
            },
            ..Default::default()
        };
        let mut sum = 0.0;
        for seed in 0..10 {
            sum += run_experiment(&cfg, seed).map_err(err)?.report.srocc;
        }
        means.push(sum / 10.0);
    }
    let detail = levels
        .iter()
        .zip(&means)
        .map(|(s, m)| format!("s={s}: {m:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(means.windows(2).all(|w| w[1] <= w[0]), || detail.clone())?;
    Ok(detail)
}

fn schedule_and_loss() -> Check {
    let tex: Vec<String> = (0..7).map(|i| format!("t{i}")).collect();
    let geo: Vec<String> = (0..5).map(|i| format!("g{i}")).collect();
    let plan = plan_schedule(&tex, &geo, 1000, 4, 3).map_err(err)?;
    ensure(plan.len() == 1000, || format!("{} steps", plan.len()))?;
    for step in &plan {
        let want = if step.t % 2 == 0 {
            PromptKind::Texture
        } else {
            PromptKind::Geometry
        };
        let pool = if want == PromptKind::Texture {
            &tex
        } else {
            &geo
        };
        ensure(step.pool == want && pool_for_step(step.t) == want, || {
            format!("step {} on {:?}", step.t, step.pool)
        })?;
        ensure(step.record_ids.iter().all(|id| pool.contains(id)), || {
            format!("step {} draws from the wrong pool", step.t)
        })?;
    }
    let uniform = [1.0 / NUM_LEVELS as f64; NUM_LEVELS];
    let mut worst_uniform: f64 = 0.0;
    for level in QualityLevel::ALL {
        let ce = cross_entropy(&uniform, level).map_err(err)?;
        worst_uniform = worst_uniform.max((ce - 5f64.ln()).abs());
        let mut one_hot = [0.0; NUM_LEVELS];
        one_hot[level.index()] = 1.0;
        let ce = cross_entropy(&one_hot, level).map_err(err)?;
        ensure(ce == 0.0, || format!("one-hot CE at {level} is {ce}"))?;
    }
    ensure(worst_uniform <= 1e-9, || {
        format!("uniform CE off ln 5 by {worst_uniform:e}")
    })?;
    Ok(format!(
        "1000 steps alternate, |CE(uniform) - ln 5| = {worst_uniform:.1e}, CE(one-hot) = 0"
    ))
}

/// `max(|a - n|) / max(max|a|, max|n|, 1e-8)` over one parameter tensor.
fn tensor_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

fn lora_toy() -> Check {
    // B = 0 forward is exactly the base map
    let mut rng = ChaCha8Rng::seed_from_u64(0x10a);
    let layer = lora_init(12, 9, 3, 6.0, 5).map_err(err)?;
    for _ in 0..20 {
        let x = DVector::from_fn(9, |_, _| rng.random_range(-3.0..3.0));
        let y = layer.forward(&x).map_err(err)?;
        let base = layer.base() * &x;
        ensure(
            y.iter()
                .zip(base.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || "B = 0 forward differs from W0 x".into(),
        )?;
    }

    let (tex, geo) = synthetic_pools(200, 11).map_err(err)?;
    let dim = tex[0].descriptor.len();
    let rank = 4;
    let mut net = ToyComparatorNet::new(dim, 16, rank, 8.0, 3).map_err(err)?;
    let frozen_before: Vec<Vec<u64>> = net
        .frozen()
        .iter()
        .map(|m| m.iter().map(|v| v.to_bits()).collect())
        .collect();
    let before = [
        net.mean_loss(&tex).map_err(err)?,
        net.mean_loss(&geo).map_err(err)?,
    ];
    let cfg = ToyTrainConfig::default();
    toy_train(&mut net, &tex, &geo, &cfg).map_err(err)?;
    let after = [
        net.mean_loss(&tex).map_err(err)?,
        net.mean_loss(&geo).map_err(err)?,
    ];
    ensure(
        after[0] <= 0.5 * before[0] && after[1] <= 0.5 * before[1],
        || format!("losses {before:?} -> {after:?} after {} steps", cfg.steps),
    )?;
    let frozen_after: Vec<Vec<u64>> = net
        .frozen()
        .iter()
        .map(|m| m.iter().map(|v| v.to_bits()).collect())
        .collect();
    ensure(frozen_before == frozen_after, || {
        "frozen weights changed".into()
    })?;

    let mut tail: f64 = 0.0;
    for layer in [&net.query, &net.value] {
        let sv = delta_singular_values(layer);
        ensure(sv[0] > 1e-3, || "adapter did not move".into())?;
        tail = tail.max(sv[rank]);
    }
    ensure(tail < 1e-8, || format!("sigma_(r+1) = {tail:e}"))?;

    // central differences on the trained net, where every tensor has signal
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for example in tex.iter().take(3).chain(geo.iter().take(3)) {
        let (_, grads) = net.gradients(example).map_err(err)?;
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        for (t, analytic_t) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; analytic_t.len()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = net.trainable_mut()[t][i];
                net.trainable_mut()[t][i] = orig + h;
                let up = net.loss(example).map_err(err)?;
                net.trainable_mut()[t][i] = orig - h;
                let down = net.loss(example).map_err(err)?;
                net.trainable_mut()[t][i] = orig;
                *slot = (up - down) / (2.0 * h);
            }
            worst = worst.max(tensor_relative_error(analytic_t, &numeric));
        }
    }
    ensure(worst <= 1e-4, || {
        format!("gradient relative error {worst:e}")
    })?;

    Ok(format!(
        "loss tex {:.3}->{:.3}, geo {:.3}->{:.3}; grad rel err {worst:.1e}; sigma_(r+1) {tail:.1e}; W0 unchanged",
        before[0], after[0], before[1], after[1]
    ))
}

fn metrics_closed_forms() -> Check {
    let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 + 1.0).collect();
    let affine: Vec<f64> = x.iter().map(|v| 2.5 * v - 3.0).collect();
    let reversed: Vec<f64> = x.iter().map(|v| -v).collect();
    let up = MetricReport::compute(&x, &affine).map_err(err)?;
    ensure(up.srocc == 1.0 && up.krocc == 1.0, || {
        format!("monotone: {up:?}")
    })?;
    ensure((up.plcc_raw - 1.0).abs() <= 1e-12, || {
        format!("affine raw PLCC {}", up.plcc_raw)
    })?;
    let down = MetricReport::compute(&x, &reversed).map_err(err)?;
    ensure(down.srocc == -1.0 && down.krocc == -1.0, || {
        format!("reversed: {down:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x3e7);
    let saturating: Vec<f64> = x.iter().map(|v| 1.0 / (1.0 + (-(v - 4.5)).exp())).collect();
    let noisy: Vec<f64> = affine
        .iter()
        .map(|v| v + rng.random_range(-2.0..2.0))
        .collect();
    for (name, pred) in [
        ("affine", &x),
        ("saturating", &saturating),
        ("noisy", &noisy),
        ("reversed", &reversed),
    ] {
        let r = MetricReport::compute(pred, &affine).map_err(err)?;
        ensure(r.rmse_fitted <= r.rmse_raw, || {
            format!("{name}: fitted RMSE {} > raw {}", r.rmse_fitted, r.rmse_raw)
        })?;
    }
    Ok("SROCC/KROCC = +-1, affine PLCC = 1, fitted RMSE <= raw on 4 inputs".into())
}

fn hash_dir(dir: &Path) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let bytes = fs::read(&path).map_err(err)?;
        out.push((
            path.file_name().unwrap().to_string_lossy().into_owned(),
            hex::encode(Sha256::digest(&bytes)),
        ));
    }
    out.sort();
    Ok(out)
}

fn render_determinism() -> Check {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cube.ply");
    let tmp = tempfile::tempdir().map_err(err)?;
    let cloud = parse_ply(&fixture).map_err(err)?;
    let binary = tmp.path().join("cube_bin.ply");
    fs::write(&binary, cloud.to_ply_binary()).map_err(err)?;
    let config = ViewConfig {
        view_count: MAX_VIEWS,
        ..Default::default()
    };
    let mut hashes = Vec::new();
    for (k, ply) in [&fixture, &fixture, &binary].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        fs::create_dir(&out).map_err(err)?;
        render_ply_to_dir(ply, "cube", &out, &config).map_err(err)?;
        hashes.push(hash_dir(&out)?);
    }
    ensure(hashes[0].len() == MAX_VIEWS, || {
        format!("{} images", hashes[0].len())
    })?;
    ensure(hashes[0] == hashes[1], || "repeat render differs".into())?;
    ensure(hashes[0] == hashes[2], || {
        "binary PLY renders differently".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xc10d);
    let random = PointCloud::new(
        (0..500)
            .map(|_| {
                [
                    rng.random_range(-40.0..75.0),
                    rng.random_range(3.0..9.0),
                    rng.random_range(-1e3..1e3),
                ]
            })
            .collect(),
        None,
    )
    .map_err(err)?;
    let mut drift: f64 = 0.0;
    for c in [cloud, random] {
        let once = normalize(&c).map_err(err)?;
        let twice = normalize(&once).map_err(err)?;
        for (a, b) in once.points.iter().zip(&twice.points) {
            for k in 0..3 {
                drift = drift.max((a[k] - b[k]).abs());
            }
        }
    }
    ensure(drift <= 1e-12, || format!("normalize drift {drift:e}"))?;
    Ok(format!(
        "{MAX_VIEWS} views identical across reruns and PLY encodings, normalize drift {drift:.1e}"
    ))
}

fn replay_fidelity() -> Check {
    let cfg = ExperimentConfig {
        comparator: SimulatedComparatorConfig {
            noise_scale: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    let exp = run_experiment(&cfg, 4).map_err(err)?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let log = tmp.path().join("matrix.jsonl");
    exp.matrix.save_replay_log(&log).map_err(err)?;
    let replay = ReplayComparator::load(&log).map_err(err)?;
    let ids = exp.anchors.ids();
    let tests: Vec<RatedSample> = exp
        .manifest
        .samples
        .iter()
        .filter(|s| !ids.contains(&s.id.as_str()))
        .cloned()
        .collect();
    let kind = PromptKind::for_modality(cfg.dataset.modality);
    let matrix = build_probability_matrix(&tests, &exp.anchors, &replay, kind, 4).map_err(err)?;
    let scores = score_dataset(&matrix, &exp.anchors, &cfg.scoring).map_err(err)?;
    ensure(scores.rows.len() == exp.scores.rows.len(), || {
        "row count differs".into()
    })?;
    for (a, b) in exp.scores.rows.iter().zip(&scores.rows) {
        ensure(
            a.test_id == b.test_id && a.predicted_score.to_bits() == b.predicted_score.to_bits(),
            || {
                format!(
                    "{}: {} vs {}",
                    a.test_id, a.predicted_score, b.predicted_score
                )
            },
        )?;
    }
    Ok(format!(
        "{} scores bit-identical after replay",
        scores.rows.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            "quantization conformance",
            Duration::from_millis(1),
            quantization_conformance,
        ),
        ("mirror symmetry", Duration::from_secs(1), mirror_symmetry),
        (
            "anchor brute-force equivalence",
            Duration::from_secs(5),
            anchor_equivalence,
        ),
        ("oracle round-trip", Duration::from_secs(10), round_trip),
        (
            "noise monotonicity",
            Duration::from_secs(60),
            noise_monotonicity,
        ),
        (
            "schedule alternation and cross-entropy",
            Duration::from_secs(1),
            schedule_and_loss,
        ),
        ("LoRA toy suite", Duration::from_secs(30), lora_toy),
        (
            "metrics closed forms",
            Duration::from_secs(1),
            metrics_closed_forms,
        ),
        (
            "render determinism",
            Duration::from_secs(5),
            render_determinism,
        ),
        ("replay fidelity", Duration::from_secs(5), replay_fidelity),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.3} ms / {} ms]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64() * 1e3,
            budget.as_millis()
        );
    }
    println!("{} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
