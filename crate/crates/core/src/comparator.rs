//! Soft quality comparison between a test stimulus and an anchor.
//!
//! A comparator answers "how good is the test relative to the anchor" with a
//! distribution over the five levels, read with the anchor as the first
//! stimulus and the test as the second: `superior` means the test is much
//! better than the anchor.
//!
//! Three implementations are provided:
//!
//! * [`SimulatedComparator`]: a Gaussian-noise oracle driven by known MOS/std.
//! * [`ReplayComparator`]: looks distributions up in a recorded log.
//! * [`RemoteComparator`]: calls a model service over HTTP/JSON.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetManifest, RatedSample};
use crate::error::{Error, Result};
use crate::pairgen::{read_json_lines, PromptKind};
use crate::quality::{
    quantize_level, standardized_difference, LevelDistribution, QualityLevel, NUM_LEVELS,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub media: Vec<String>,
}

impl From<&RatedSample> for Stimulus {
    fn from(s: &RatedSample) -> Self {
        Self {
            id: s.id.clone(),
            media: s.asset_refs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparatorQuery {
    pub test: Stimulus,
    pub anchor: Stimulus,
    pub prompt_kind: PromptKind,
}

impl ComparatorQuery {
    pub fn new(test: Stimulus, anchor: Stimulus, prompt_kind: PromptKind) -> Result<Self> {
        if test.id == anchor.id {
            return Err(Error::InvalidPair {
                first: anchor.id,
                second: test.id,
                reason: "test and anchor must differ".into(),
            });
        }
        Ok(Self {
            test,
            anchor,
            prompt_kind,
        })
    }

    pub fn key(&self) -> ReplayKey {
        ReplayKey {
            test_id: self.test.id.clone(),
            anchor_id: self.anchor.id.clone(),
            prompt_kind: self.prompt_kind,
        }
    }
}

pub trait Comparator: Send + Sync {
    fn compare(&self, query: &ComparatorQuery) -> Result<LevelDistribution>;

    /// Whether `compare` may be called from several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }

    fn name(&self) -> &str;
}

fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `Phi(b) - Phi(a)` for `a <= b`, evaluated on whichever side keeps the
/// arithmetic identical under `(a, b) -> (-b, -a)`.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - (upper_tail(-a) + upper_tail(b))
    }
}

/// `ln Q(x)` for the standard normal upper tail `Q`, finite far beyond the
/// point where `Q` itself underflows.
fn log_upper_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 37.0 {
        return upper_tail(x).ln();
    }
    // asymptotic expansion; the first omitted term is 105 / x^8 < 1e-10
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - x.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// `ln(Phi(b) - Phi(a))` for `a < b`, with the same side selection as
/// [`normal_mass`].
fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        let la = log_upper_tail(a);
        la + (-(log_upper_tail(b) - la).exp()).ln_1p()
    } else if b <= 0.0 {
        log_normal_mass(-b, -a)
    } else {
        (1.0 - (upper_tail(-a) + upper_tail(b))).ln()
    }
}

/// Natural logs of [`interval_probabilities`] for `noise > 0`, accurate in
/// the far tails where the probabilities themselves round to zero.
pub fn log_interval_probabilities(z: f64, noise: f64) -> Result<[f64; NUM_LEVELS]> {
    if !z.is_finite() {
        return Err(Error::invalid(format!("non-finite z: {z}")));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(Error::invalid(format!(
            "noise scale must be finite and > 0, got {noise}"
        )));
    }
    let mut out = [0.0; NUM_LEVELS];
    for level in QualityLevel::ALL {
        let (lo, hi) = level.z_interval();
        out[level.index()] = log_normal_mass((lo - z) / noise, (hi - z) / noise);
    }
    Ok(out)
}

/// Level probabilities when the observed `z` is perturbed by `N(0, noise^2)`
/// and censored at the level boundaries `±1, ±2`.
///
/// `noise = 0` gives the one-hot [`quantize_level`] result.
pub fn interval_probabilities(z: f64, noise: f64) -> Result<[f64; NUM_LEVELS]> {
    if !z.is_finite() {
        return Err(Error::invalid(format!("non-finite z: {z}")));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::invalid(format!(
            "noise scale must be finite and >= 0, got {noise}"
        )));
    }
    let mut p = [0.0; NUM_LEVELS];
    if noise == 0.0 {
        p[quantize_level(z)?.index()] = 1.0;
        return Ok(p);
    }
    for level in QualityLevel::ALL {
        let (lo, hi) = level.z_interval();
        p[level.index()] = normal_mass((lo - z) / noise, (hi - z) / noise).max(0.0);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationMode {
    /// Return the interval masses.
    #[default]
    Soft,
    /// Sample one level from the masses and return it one-hot.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedComparatorConfig {
    pub noise_scale: f64,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimulatedComparatorConfig {
    fn default() -> Self {
        Self {
            noise_scale: 0.0,
            mode: SimulationMode::Soft,
            seed: 0,
        }
    }
}

impl SimulatedComparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// Known `(mos, std)` of one stimulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub mos: f64,
    pub std: f64,
}

fn query_seed(seed: u64, query: &ComparatorQuery) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query.test.id.as_bytes());
    h.update([0]);
    h.update(query.anchor.id.as_bytes());
    h.update([0]);
    h.update(query.prompt_kind.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Oracle comparison from known ratings, with `z` taken anchor-first.
pub fn simulated_compare(
    query: &ComparatorQuery,
    test: Rating,
    anchor: Rating,
    config: &SimulatedComparatorConfig,
) -> Result<LevelDistribution> {
    config.validate()?;
    let z = standardized_difference(anchor.mos, anchor.std, test.mos, test.std)?;
    let probs = interval_probabilities(z, config.noise_scale)?;
    match config.mode {
        SimulationMode::Soft => LevelDistribution::new(probs),
        SimulationMode::Hard => {
            let mut rng = ChaCha8Rng::seed_from_u64(query_seed(config.seed, query));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = QualityLevel::Superior;
            for level in QualityLevel::ALL {
                acc += probs[level.index()];
                if u < acc {
                    chosen = level;
                    break;
                }
            }
            // guard against the cumulative sum stopping just short of 1
            if probs[chosen.index()] == 0.0 {
                chosen = LevelDistribution::new(probs)?.argmax();
            }
            Ok(LevelDistribution::one_hot(chosen))
        }
    }
}

/// Oracle comparator backed by MOS/std annotations.
#[derive(Debug, Clone)]
pub struct SimulatedComparator {
    ratings: HashMap<String, Rating>,
    config: SimulatedComparatorConfig,
}

impl SimulatedComparator {
    pub fn new(config: SimulatedComparatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            ratings: HashMap::new(),
            config,
        })
    }

    pub fn with_manifest(mut self, manifest: &DatasetManifest) -> Self {
        self.add_samples(&manifest.samples);
        self
    }

    pub fn add_samples<'a>(&mut self, samples: impl IntoIterator<Item = &'a RatedSample>) {
        for s in samples {
            self.ratings.insert(
                s.id.clone(),
                Rating {
                    mos: s.mos,
                    std: s.std,
                },
            );
        }
    }

    pub fn config(&self) -> &SimulatedComparatorConfig {
        &self.config
    }

    fn rating(&self, id: &str) -> Result<Rating> {
        self.ratings.get(id).copied().ok_or_else(|| Error::Asset {
            id: id.to_string(),
            message: "no MOS/std annotation known to the simulated comparator".into(),
        })
    }
}

impl Comparator for SimulatedComparator {
    fn compare(&self, query: &ComparatorQuery) -> Result<LevelDistribution> {
        let test = self.rating(&query.test.id)?;
        let anchor = self.rating(&query.anchor.id)?;
        simulated_compare(query, test, anchor, &self.config)
    }

    fn name(&self) -> &str {
        "simulated"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReplayKey {
    pub test_id: String,
    pub anchor_id: String,
    pub prompt_kind: PromptKind,
}

impl std::fmt::Display for ReplayKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(test {:?}, anchor {:?}, {})",
            self.test_id, self.anchor_id, self.prompt_kind
        )
    }
}

/// One line of a replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub test_id: String,
    pub anchor_id: String,
    pub prompt_kind: PromptKind,
    pub probs: LevelDistribution,
}

pub fn write_replay_log<'a>(
    entries: impl IntoIterator<Item = &'a ReplayEntry>,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn read_replay_log(path: impl AsRef<Path>) -> Result<Vec<ReplayEntry>> {
    read_json_lines(path)
}

/// Serves distributions recorded in a replay log.
#[derive(Debug, Clone, Default)]
pub struct ReplayComparator {
    entries: HashMap<ReplayKey, LevelDistribution>,
}

impl ReplayComparator {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let entries = entries
            .into_iter()
            .map(|e| {
                let key = ReplayKey {
                    test_id: e.test_id,
                    anchor_id: e.anchor_id,
                    prompt_kind: e.prompt_kind,
                };
                (key, e.probs)
            })
            .collect();
        Self { entries }
    }

    /// Loads and validates a log; every distribution must sum to 1.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_entries(read_replay_log(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Comparator for ReplayComparator {
    fn compare(&self, query: &ComparatorQuery) -> Result<LevelDistribution> {
        let key = query.key();
        self.entries
            .get(&key)
            .copied()
            .ok_or_else(|| Error::ReplayMiss(key.to_string()))
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// A media entry on the wire: a path/URI or base64-encoded bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireMedia {
    Ref(String),
    Inline { inline_b64: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireStimulus {
    pub id: String,
    pub media: Vec<WireMedia>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub test: WireStimulus,
    pub anchor: WireStimulus,
    pub prompt_kind: PromptKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResponse {
    pub probs: Vec<f64>,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

pub const COMPARE_PATH: &str = "/compare";
pub const HEALTH_PATH: &str = "/health";

/// HTTP client for a comparator service.
///
/// Sends `POST {endpoint}/compare` and retries once on transport failures
/// and 5xx statuses.
#[derive(Debug, Clone)]
pub struct RemoteComparator {
    endpoint: String,
    agent: ureq::Agent,
    inline_media: bool,
}

enum Attempt {
    Transient(Error),
    Fatal(Error),
}

impl RemoteComparator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            inline_media: false,
        }
    }

    /// Embed media file contents (base64) instead of sending references.
    pub fn with_inline_media(mut self, inline: bool) -> Self {
        self.inline_media = inline;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}{HEALTH_PATH}", self.endpoint);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::RemoteTransport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::RemoteTransport(format!("{url}: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(Error::RemoteStatus { status, body });
        }
        serde_json::from_str(&body)
            .map_err(|e| Error::RemoteProtocol(format!("health response: {e}")))
    }

    fn wire_stimulus(&self, s: &Stimulus) -> Result<WireStimulus> {
        let media = s
            .media
            .iter()
            .map(|m| {
                if self.inline_media {
                    let bytes = fs::read(m).map_err(|e| Error::Asset {
                        id: s.id.clone(),
                        message: format!("{m}: {e}"),
                    })?;
                    Ok(WireMedia::Inline {
                        inline_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
                    })
                } else {
                    Ok(WireMedia::Ref(m.clone()))
                }
            })
            .collect::<Result<_>>()?;
        Ok(WireStimulus {
            id: s.id.clone(),
            media,
        })
    }

    fn attempt(
        &self,
        url: &str,
        request: &CompareRequest,
    ) -> std::result::Result<LevelDistribution, Attempt> {
        let mut resp = self
            .agent
            .post(url)
            .send_json(request)
            .map_err(|e| Attempt::Transient(Error::RemoteTransport(format!("{url}: {e}"))))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| {
            Attempt::Transient(Error::RemoteTransport(format!("{url}: reading body: {e}")))
        })?;
        if status >= 500 {
            return Err(Attempt::Transient(Error::RemoteStatus { status, body }));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(Error::RemoteStatus { status, body }));
        }
        let parsed: CompareResponse = serde_json::from_str(&body).map_err(|e| {
            Attempt::Fatal(Error::RemoteProtocol(format!("malformed response: {e}")))
        })?;
        if parsed.probs.len() != NUM_LEVELS {
            return Err(Attempt::Fatal(Error::RemoteProtocol(format!(
                "expected {NUM_LEVELS} probabilities, got {}",
                parsed.probs.len()
            ))));
        }
        LevelDistribution::from_slice(&parsed.probs).map_err(|e| {
            Attempt::Fatal(Error::RemoteProtocol(format!("invalid distribution: {e}")))
        })
    }
}

pub fn remote_compare(
    query: &ComparatorQuery,
    endpoint: &str,
    timeout: Duration,
) -> Result<LevelDistribution> {
    RemoteComparator::new(endpoint, timeout).compare(query)
}

impl Comparator for RemoteComparator {
    fn compare(&self, query: &ComparatorQuery) -> Result<LevelDistribution> {
        let request = CompareRequest {
            test: self.wire_stimulus(&query.test)?,
            anchor: self.wire_stimulus(&query.anchor)?,
            prompt_kind: query.prompt_kind,
        };
        let url = format!("{}{COMPARE_PATH}", self.endpoint);
        let mut last = None;
        for _ in 0..2 {
            match self.attempt(&url, &request) {
                Ok(d) => return Ok(d),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => last = Some(e),
            }
        }
        Err(last.expect("two attempts were made"))
    }

    fn name(&self) -> &str {
        "remote"
    }
}
