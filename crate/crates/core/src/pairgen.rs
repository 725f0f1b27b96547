//! Labeled comparison pairs and their instruction/response records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Modality, RatedSample};
use crate::error::{Error, Result};
use crate::quality::{quantize_level, standardized_difference, QualityLevel, NUM_LEVELS};

pub const TEXTURE_FOCUS: &str = "Please focus on texture details and clarity.";
pub const GEOMETRY_FOCUS: &str = "Please focus on geometric structure and shape integrity.";

pub const TEXTURE_PROMPT: &str = "Please focus on texture details and clarity. Compared with the first image <Img1>, what is your quality rating for the second image <Img2>?";
pub const GEOMETRY_PROMPT: &str = "Please focus on geometric structure and shape integrity. Compared with the first point cloud <PC1>, what is your quality rating for the second point cloud <PC2>?";

/// Which prompt (and training pool) a comparison belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Texture,
    Geometry,
}

impl PromptKind {
    pub fn for_modality(modality: Modality) -> Self {
        match modality {
            Modality::Image => PromptKind::Texture,
            Modality::Pointcloud => PromptKind::Geometry,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Texture => "texture",
            PromptKind::Geometry => "geometry",
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            PromptKind::Texture => TEXTURE_PROMPT,
            PromptKind::Geometry => GEOMETRY_PROMPT,
        }
    }

    fn stimulus_noun(self) -> &'static str {
        match self {
            PromptKind::Texture => "image",
            PromptKind::Geometry => "point cloud",
        }
    }

    /// `The quality of the second <noun> is <level> to/than the first <noun>.`
    pub fn response(self, level: QualityLevel) -> String {
        let noun = self.stimulus_noun();
        let joiner = if level == QualityLevel::Similar {
            "to"
        } else {
            "than"
        };
        format!(
            "The quality of the second {noun} is {} {joiner} the first {noun}.",
            level.word()
        )
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "texture" => Ok(PromptKind::Texture),
            "geometry" => Ok(PromptKind::Geometry),
            other => Err(Error::invalid(format!("unknown prompt kind {other:?}"))),
        }
    }
}

/// An ordered pair; `level` is the quality of `second` relative to `first`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub first: String,
    pub second: String,
    pub level: QualityLevel,
    pub z: f64,
}

impl ComparisonPair {
    pub fn label(first: &RatedSample, second: &RatedSample) -> Result<Self> {
        if first.id == second.id {
            return Err(Error::InvalidPair {
                first: first.id.clone(),
                second: second.id.clone(),
                reason: "a sample cannot be compared with itself".into(),
            });
        }
        let z = standardized_difference(first.mos, first.std, second.mos, second.std)?;
        Ok(Self {
            first: first.id.clone(),
            second: second.id.clone(),
            level: quantize_level(z)?,
            z,
        })
    }

    pub fn reversed(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            level: self.level.mirror(),
            z: -self.z,
        }
    }
}

fn draw_indices(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

fn check_sampling_input(manifest: &DatasetManifest, n_k: usize) -> Result<()> {
    if manifest.samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "dataset {} has {} sample(s); at least 2 are needed to form pairs",
            manifest.dataset,
            manifest.samples.len()
        )));
    }
    if n_k == 0 {
        return Err(Error::invalid("n_k must be >= 1"));
    }
    Ok(())
}

/// Draws `n_k` ordered pairs uniformly, with replacement, excluding self-pairs.
pub fn sample_pairs(
    manifest: &DatasetManifest,
    n_k: usize,
    seed: u64,
) -> Result<Vec<ComparisonPair>> {
    check_sampling_input(manifest, n_k)?;
    let n = manifest.samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_k)
        .map(|_| {
            let (i, j) = draw_indices(&mut rng, n);
            ComparisonPair::label(&manifest.samples[i], &manifest.samples[j])
        })
        .collect()
}

const BALANCE_TRIES: usize = 4096;

/// Like [`sample_pairs`], but cycles through the levels so that each
/// reachable level receives about the same number of pairs.
///
/// A level that is not hit within a bounded number of draws is treated as
/// unreachable for the rest of the run.
pub fn sample_pairs_balanced(
    manifest: &DatasetManifest,
    n_k: usize,
    seed: u64,
) -> Result<Vec<ComparisonPair>> {
    check_sampling_input(manifest, n_k)?;
    let n = manifest.samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut available: Vec<QualityLevel> = QualityLevel::ALL.to_vec();
    let mut out = Vec::with_capacity(n_k);
    let mut cursor = 0usize;
    while out.len() < n_k {
        let target = available[cursor % available.len()];
        let mut found = None;
        let mut last = None;
        for _ in 0..BALANCE_TRIES {
            let (i, j) = draw_indices(&mut rng, n);
            let pair = ComparisonPair::label(&manifest.samples[i], &manifest.samples[j])?;
            if pair.level == target {
                found = Some(pair);
                break;
            }
            last = Some(pair);
        }
        match found {
            Some(pair) => {
                out.push(pair);
                cursor += 1;
            }
            None if available.len() > 1 => {
                available.retain(|l| *l != target);
            }
            None => out.push(last.expect("at least one draw")),
        }
    }
    Ok(out)
}

/// Pair counts per level, in canonical order.
pub fn level_histogram(pairs: &[ComparisonPair]) -> [usize; NUM_LEVELS] {
    let mut counts = [0; NUM_LEVELS];
    for p in pairs {
        counts[p.level.index()] += 1;
    }
    counts
}

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    /// `<first id>><second id>`; identifies the record in training schedules.
    pub id: String,
    pub prompt_kind: PromptKind,
    pub instruction: String,
    pub response: String,
    /// Asset references of the first and second stimulus, in prompt order.
    pub media_refs: Vec<Vec<String>>,
    pub level_index: usize,
    pub z: f64,
}

impl InstructionRecord {
    pub fn level(&self) -> Option<QualityLevel> {
        QualityLevel::from_index(self.level_index)
    }
}

pub fn render_instruction(
    pair: &ComparisonPair,
    manifest: &DatasetManifest,
) -> Result<InstructionRecord> {
    let lookup = |id: &str| {
        manifest.get(id).ok_or_else(|| Error::InvalidPair {
            first: pair.first.clone(),
            second: pair.second.clone(),
            reason: format!("sample {id:?} not in dataset {}", manifest.dataset),
        })
    };
    let first = lookup(&pair.first)?;
    let second = lookup(&pair.second)?;
    if first.modality != second.modality {
        return Err(Error::InvalidPair {
            first: pair.first.clone(),
            second: pair.second.clone(),
            reason: format!(
                "mixed modalities ({:?} vs {:?})",
                first.modality, second.modality
            ),
        });
    }
    let kind = PromptKind::for_modality(first.modality);
    Ok(InstructionRecord {
        id: format!("{}>{}", pair.first, pair.second),
        prompt_kind: kind,
        instruction: kind.instruction().to_string(),
        response: kind.response(pair.level),
        media_refs: vec![first.asset_refs.clone(), second.asset_refs.clone()],
        level_index: pair.level.index(),
        z: pair.z,
    })
}

/// Writes one JSON object per line and returns the number written.
pub fn export_records(records: &[InstructionRecord], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<InstructionRecord>> {
    read_json_lines(path)
}

pub(crate) fn read_json_lines<T: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(samples: Vec<RatedSample>) -> DatasetManifest {
        DatasetManifest::new("t", [0.0, 10.0], samples).unwrap()
    }

    fn pc(id: &str, mos: f64, std: f64) -> RatedSample {
        RatedSample::new(id, Modality::Pointcloud, mos, std).with_assets([format!("{id}.ply")])
    }

    fn img(id: &str, mos: f64, std: f64) -> RatedSample {
        RatedSample::new(id, Modality::Image, mos, std).with_assets([format!("{id}.png")])
    }

    #[test]
    fn two_sample_manifest_yields_both_orders_only() {
        let m = manifest(vec![pc("A", 4.0, 1.0), pc("B", 6.0, 1.0)]);
        let pairs = sample_pairs(&m, 4, 11).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert!((p.first == "A" && p.second == "B") || (p.first == "B" && p.second == "A"));
        }
    }

    #[test]
    fn high_vs_low_is_inferior() {
        let m = manifest(vec![pc("high", 9.0, 0.5), pc("low", 3.0, 0.5)]);
        let pair = ComparisonPair::label(&m.samples[0], &m.samples[1]).unwrap();
        assert_eq!(pair.level, QualityLevel::Inferior);
        assert!((pair.z - 6.0 / 0.5f64.sqrt()).abs() < 1e-12);
        assert!((pair.z - 8.49).abs() < 0.01);
        for p in sample_pairs(&m, 8, 3).unwrap() {
            let expect = if p.first == "high" {
                QualityLevel::Inferior
            } else {
                QualityLevel::Superior
            };
            assert_eq!(p.level, expect);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = manifest(
            (0..20)
                .map(|i| pc(&format!("s{i}"), i as f64 / 2.0, 0.5))
                .collect(),
        );
        let a = serde_json::to_string(&sample_pairs(&m, 50, 99).unwrap()).unwrap();
        let b = serde_json::to_string(&sample_pairs(&m, 50, 99).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&sample_pairs(&m, 50, 100).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn insufficient_samples() {
        let m = manifest(vec![pc("only", 1.0, 0.1)]);
        assert!(matches!(
            sample_pairs(&m, 3, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn balanced_sampling_spreads_levels() {
        let m = manifest(
            (0..40)
                .map(|i| pc(&format!("s{i}"), i as f64 / 4.0, 0.4))
                .collect(),
        );
        let pairs = sample_pairs_balanced(&m, 100, 5).unwrap();
        assert_eq!(pairs.len(), 100);
        assert_eq!(level_histogram(&pairs), [20; 5]);
        // only "similar" is reachable when every score is equal
        let flat = manifest((0..5).map(|i| pc(&format!("f{i}"), 5.0, 0.4)).collect());
        let pairs = sample_pairs_balanced(&flat, 7, 5).unwrap();
        assert_eq!(level_histogram(&pairs), [0, 0, 7, 0, 0]);
    }

    #[test]
    fn response_templates() {
        let m = manifest(vec![
            img("a", 5.0, 1.0),
            img("b", 3.0, 1.0),
            pc("p", 5.0, 1.0),
            pc("q", 5.0, 1.0),
        ]);
        let pair = ComparisonPair::label(&m.samples[0], &m.samples[1]).unwrap();
        assert_eq!(pair.level, QualityLevel::Worse);
        let r = render_instruction(&pair, &m).unwrap();
        assert_eq!(
            r.response,
            "The quality of the second image is worse than the first image."
        );
        assert_eq!(r.instruction, TEXTURE_PROMPT);
        assert_eq!(r.prompt_kind, PromptKind::Texture);
        assert_eq!(
            r.media_refs,
            vec![vec!["a.png".to_string()], vec!["b.png".to_string()]]
        );

        let pair = ComparisonPair::label(&m.samples[2], &m.samples[3]).unwrap();
        let r = render_instruction(&pair, &m).unwrap();
        assert_eq!(
            r.response,
            "The quality of the second point cloud is similar to the first point cloud."
        );

        let sup = ComparisonPair {
            first: "p".into(),
            second: "q".into(),
            level: QualityLevel::Superior,
            z: -3.0,
        };
        let r = render_instruction(&sup, &m).unwrap();
        assert!(r
            .instruction
            .starts_with("Please focus on geometric structure and shape integrity."));
        assert!(r
            .response
            .ends_with("is superior than the first point cloud."));
    }

    #[test]
    fn mixed_modality_is_rejected() {
        let m = manifest(vec![img("a", 5.0, 1.0), pc("p", 5.0, 1.0)]);
        let pair = ComparisonPair::label(&m.samples[0], &m.samples[1]).unwrap();
        assert!(matches!(
            render_instruction(&pair, &m),
            Err(Error::InvalidPair { .. })
        ));
    }

    #[test]
    fn reversed_pair_mirrors_level() {
        let m = manifest(vec![pc("a", 7.2, 0.6), pc("b", 5.9, 0.3)]);
        let ab = ComparisonPair::label(&m.samples[0], &m.samples[1]).unwrap();
        let ba = ComparisonPair::label(&m.samples[1], &m.samples[0]).unwrap();
        assert_eq!(ba, ab.reversed());
        assert_eq!(ba.level, ab.level.mirror());
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        assert_eq!(export_records(&[], &empty).unwrap(), 0);
        assert_eq!(std::fs::read(&empty).unwrap().len(), 0);

        let m = manifest(vec![
            pc("点云-α", 7.0, 0.5),
            pc("b", 5.0, 0.5),
            pc("c", 2.0, 0.2),
        ]);
        let records: Vec<_> = sample_pairs(&m, 3, 1)
            .unwrap()
            .iter()
            .map(|p| render_instruction(p, &m).unwrap())
            .collect();
        let path = dir.path().join("r.jsonl");
        assert_eq!(export_records(&records, &path).unwrap(), 3);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_records(&path).unwrap(), records);

        let unicode = render_instruction(
            &ComparisonPair::label(&m.samples[0], &m.samples[1]).unwrap(),
            &m,
        )
        .unwrap();
        export_records(std::slice::from_ref(&unicode), &path).unwrap();
        assert_eq!(read_records(&path).unwrap()[0].id, "点云-α>b");
    }

    #[test]
    fn export_to_missing_directory_names_path() {
        let err = export_records(&[], "/nonexistent-dir/x.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.jsonl"));
    }
}
