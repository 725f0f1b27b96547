//! Low-rank adapted linear layers and a small comparator network trained
//! with the alternating texture/geometry schedule.
//!
//! The network stands in for the query and value projections of a language
//! model: a fixed random feature map, a LoRA-adapted "query" layer, a
//! LoRA-adapted "value" layer and a softmax head over the five levels.
//!
//! ```text
//! h0 = tanh(F x)
//! h1 = tanh(Wq h0 + (alpha/r) Bq Aq h0)
//! h2 = tanh(Wv h1 + (alpha/r) Bv Av h1)
//! p  = softmax(H h2 + c)
//! ```
//!
//! Only `A`, `B`, `H` and `c` are trained; `F` and the base weights never change.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::PromptKind;
use crate::quality::{quantize_level, QualityLevel, NUM_LEVELS};
use crate::schedule::{plan_schedule, PROB_FLOOR};

/// Default toy rank and scale; keeps `alpha / r = 2`.
pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_ALPHA: f64 = 8.0;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // column-major fill order is part of the seed contract
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v * scale
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    base: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    rank: usize,
    alpha: f64,
}

impl LoraLinear {
    /// Wraps a frozen base matrix; `A ~ N(0, 1/d_in)`, `B = 0`.
    pub fn new(base: DMatrix<f64>, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        let (d_out, d_in) = base.shape();
        if rank == 0 || rank > d_out.min(d_in) {
            return Err(Error::InvalidRank { rank, d_out, d_in });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_matrix(&mut rng, rank, d_in, 1.0 / (d_in as f64).sqrt());
        Ok(Self {
            base,
            a,
            b: DMatrix::zeros(d_out, rank),
            rank,
            alpha,
        })
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn d_in(&self) -> usize {
        self.base.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.base.nrows()
    }

    /// `W0 x + (alpha / r) B (A x)`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.d_in() {
            return Err(Error::Shape {
                expected: self.d_in(),
                actual: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let low = &self.a * x;
        &self.base * x + (&self.b * low) * self.scale()
    }

    /// The learned update `B A` (without the scale).
    pub fn delta(&self) -> DMatrix<f64> {
        &self.b * &self.a
    }
}

/// Builds a layer with a random frozen base `W0 ~ N(0, 1/d_in)`.
pub fn lora_init(d_out: usize, d_in: usize, r: usize, alpha: f64, seed: u64) -> Result<LoraLinear> {
    if r == 0 || r > d_out.min(d_in) {
        return Err(Error::InvalidRank {
            rank: r,
            d_out,
            d_in,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
    let base = gaussian_matrix(&mut rng, d_out, d_in, 1.0 / (d_in as f64).sqrt());
    LoraLinear::new(base, r, alpha, seed)
}

pub fn lora_forward(layer: &LoraLinear, x: &DVector<f64>) -> Result<DVector<f64>> {
    layer.forward(x)
}

/// Singular values of `B A`, largest first.
pub fn delta_singular_values(layer: &LoraLinear) -> Vec<f64> {
    let mut sv: Vec<f64> = layer.delta().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// A pair descriptor and its ground-truth level.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub descriptor: DVector<f64>,
    pub level: QualityLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyComparatorNet {
    features: DMatrix<f64>,
    pub query: LoraLinear,
    pub value: LoraLinear,
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
}

/// Gradients of the trainable parameters, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGradients {
    pub query_a: DMatrix<f64>,
    pub query_b: DMatrix<f64>,
    pub value_a: DMatrix<f64>,
    pub value_b: DMatrix<f64>,
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
}

impl ToyGradients {
    fn zeros_like(net: &ToyComparatorNet) -> Self {
        Self {
            query_a: DMatrix::zeros(net.query.a.nrows(), net.query.a.ncols()),
            query_b: DMatrix::zeros(net.query.b.nrows(), net.query.b.ncols()),
            value_a: DMatrix::zeros(net.value.a.nrows(), net.value.a.ncols()),
            value_b: DMatrix::zeros(net.value.b.nrows(), net.value.b.ncols()),
            head_w: DMatrix::zeros(net.head_w.nrows(), net.head_w.ncols()),
            head_b: DVector::zeros(net.head_b.len()),
        }
    }

    fn accumulate(&mut self, other: &ToyGradients) {
        self.query_a += &other.query_a;
        self.query_b += &other.query_b;
        self.value_a += &other.value_a;
        self.value_b += &other.value_b;
        self.head_w += &other.head_w;
        self.head_b += &other.head_b;
    }

    fn scale(&mut self, k: f64) {
        self.query_a *= k;
        self.query_b *= k;
        self.value_a *= k;
        self.value_b *= k;
        self.head_w *= k;
        self.head_b *= k;
    }

    /// Flat views in the same order as [`ToyComparatorNet::trainable_mut`].
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.query_a.as_slice(),
            self.query_b.as_slice(),
            self.value_a.as_slice(),
            self.value_b.as_slice(),
            self.head_w.as_slice(),
            self.head_b.as_slice(),
        ]
    }
}

struct Activations {
    h0: DVector<f64>,
    uq: DVector<f64>,
    h1: DVector<f64>,
    uv: DVector<f64>,
    h2: DVector<f64>,
    probs: DVector<f64>,
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let exp = logits.map(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

impl ToyComparatorNet {
    pub fn new(
        descriptor_dim: usize,
        hidden: usize,
        rank: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = gaussian_matrix(
            &mut rng,
            hidden,
            descriptor_dim,
            1.0 / (descriptor_dim as f64).sqrt(),
        );
        let wq = gaussian_matrix(&mut rng, hidden, hidden, 1.0 / (hidden as f64).sqrt());
        let wv = gaussian_matrix(&mut rng, hidden, hidden, 1.0 / (hidden as f64).sqrt());
        let query = LoraLinear::new(wq, rank, alpha, rng.random())?;
        let value = LoraLinear::new(wv, rank, alpha, rng.random())?;
        Ok(Self {
            features,
            query,
            value,
            head_w: DMatrix::zeros(NUM_LEVELS, hidden),
            head_b: DVector::zeros(NUM_LEVELS),
        })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.features.ncols()
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.descriptor_dim() {
            return Err(Error::Shape {
                expected: self.descriptor_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn activations(&self, x: &DVector<f64>) -> Activations {
        let h0 = (&self.features * x).map(f64::tanh);
        let uq = &self.query.a * &h0;
        let h1 =
            (self.query.base() * &h0 + (&self.query.b * &uq) * self.query.scale()).map(f64::tanh);
        let uv = &self.value.a * &h1;
        let h2 =
            (self.value.base() * &h1 + (&self.value.b * &uv) * self.value.scale()).map(f64::tanh);
        let probs = softmax(&(&self.head_w * &h2 + &self.head_b));
        Activations {
            h0,
            uq,
            h1,
            uv,
            h2,
            probs,
        }
    }

    /// Level distribution for one descriptor.
    pub fn predict(&self, x: &DVector<f64>) -> Result<[f64; NUM_LEVELS]> {
        self.check_input(x)?;
        let p = self.activations(x).probs;
        let mut out = [0.0; NUM_LEVELS];
        out.copy_from_slice(p.as_slice());
        Ok(out)
    }

    /// Cross-entropy of one example.
    pub fn loss(&self, example: &ToyExample) -> Result<f64> {
        self.check_input(&example.descriptor)?;
        let p = self.activations(&example.descriptor).probs[example.level.index()];
        // `f64::max` would swallow NaN, so keep it visible for divergence checks
        Ok(if p.is_nan() {
            p
        } else {
            -p.max(PROB_FLOOR).ln()
        })
    }

    pub fn mean_loss(&self, pool: &[ToyExample]) -> Result<f64> {
        if pool.is_empty() {
            return Err(Error::InsufficientData("empty example pool".into()));
        }
        let mut total = 0.0;
        for ex in pool {
            total += self.loss(ex)?;
        }
        Ok(total / pool.len() as f64)
    }

    /// Loss and analytic gradients for one example.
    pub fn gradients(&self, example: &ToyExample) -> Result<(f64, ToyGradients)> {
        self.check_input(&example.descriptor)?;
        let act = self.activations(&example.descriptor);
        let truth = example.level.index();
        let p_truth = act.probs[truth];
        let loss = if p_truth.is_nan() {
            p_truth
        } else {
            -p_truth.max(PROB_FLOOR).ln()
        };

        // below the floor the loss is constant in every parameter
        let mut d_logits = act.probs.clone();
        if p_truth >= PROB_FLOOR {
            d_logits[truth] -= 1.0;
        } else {
            d_logits.fill(0.0);
        }

        let head_w = &d_logits * act.h2.transpose();
        let head_b = d_logits.clone();

        let d_h2 = self.head_w.transpose() * &d_logits;
        let d_v = d_h2.component_mul(&act.h2.map(|h| 1.0 - h * h));
        let sv = self.value.scale();
        let value_b = (&d_v * act.uv.transpose()) * sv;
        let d_uv = (self.value.b.transpose() * &d_v) * sv;
        let value_a = &d_uv * act.h1.transpose();
        let d_h1 = self.value.base().transpose() * &d_v + self.value.a.transpose() * &d_uv;

        let d_q = d_h1.component_mul(&act.h1.map(|h| 1.0 - h * h));
        let sq = self.query.scale();
        let query_b = (&d_q * act.uq.transpose()) * sq;
        let d_uq = (self.query.b.transpose() * &d_q) * sq;
        let query_a = &d_uq * act.h0.transpose();

        Ok((
            loss,
            ToyGradients {
                query_a,
                query_b,
                value_a,
                value_b,
                head_w,
                head_b,
            },
        ))
    }

    /// Mutable flat views of the trainable parameters:
    /// `[query A, query B, value A, value B, head W, head b]`.
    pub fn trainable_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.query.a.as_mut_slice(),
            self.query.b.as_mut_slice(),
            self.value.a.as_mut_slice(),
            self.value.b.as_mut_slice(),
            self.head_w.as_mut_slice(),
            self.head_b.as_mut_slice(),
        ]
    }

    fn apply(&mut self, grads: &ToyGradients, lr: f64) {
        self.query.a -= &grads.query_a * lr;
        self.query.b -= &grads.query_b * lr;
        self.value.a -= &grads.value_a * lr;
        self.value.b -= &grads.value_b * lr;
        self.head_w -= &grads.head_w * lr;
        self.head_b -= &grads.head_b * lr;
    }

    /// Frozen parameters (feature map and both base matrices).
    pub fn frozen(&self) -> [&DMatrix<f64>; 3] {
        [&self.features, self.query.base(), self.value.base()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.5,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Loss of the step's pool, measured over the whole pool before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub pool: PromptKind,
    pub loss: f64,
}

/// Plain gradient descent where even steps only see texture-pool batches
/// and odd steps only geometry-pool batches.
pub fn toy_train(
    net: &mut ToyComparatorNet,
    texture_pool: &[ToyExample],
    geometry_pool: &[ToyExample],
    config: &ToyTrainConfig,
) -> Result<Vec<LossRecord>> {
    let tex_ids: Vec<String> = (0..texture_pool.len()).map(|i| i.to_string()).collect();
    let geo_ids: Vec<String> = (0..geometry_pool.len()).map(|i| i.to_string()).collect();
    let plan = plan_schedule(
        &tex_ids,
        &geo_ids,
        config.steps,
        config.batch_size,
        config.seed,
    )?;

    let mut trace = Vec::with_capacity(plan.len());
    for step in &plan {
        let pool = match step.pool {
            PromptKind::Texture => texture_pool,
            PromptKind::Geometry => geometry_pool,
        };
        let pool_loss = net.mean_loss(pool)?;
        if !pool_loss.is_finite() {
            return Err(Error::Divergence {
                step: step.t,
                loss: pool_loss,
            });
        }
        trace.push(LossRecord {
            step: step.t,
            pool: step.pool,
            loss: pool_loss,
        });

        let mut grads = ToyGradients::zeros_like(net);
        for id in &step.record_ids {
            let idx: usize = id.parse().expect("schedule ids are pool indices");
            let (loss, g) = net.gradients(&pool[idx])?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: step.t, loss });
            }
            grads.accumulate(&g);
        }
        grads.scale(1.0 / step.record_ids.len() as f64);
        net.apply(&grads, config.lr);
    }
    Ok(trace)
}

/// Writes `step,pool,loss` rows.
pub fn write_loss_trace(trace: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,pool,loss\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{}", r.step, r.pool, r.loss);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Feature dimension of one synthetic stimulus.
pub const SYNTHETIC_STIMULUS_DIM: usize = 4;

/// Builds two pools of separable pair descriptors.
///
/// Each pair is two stimuli with latent scores on a 0..10 scale and rating
/// std 0.5; the level comes from the usual quantization. Standardized
/// differences are drawn level-balanced and kept at least 0.2 away from the
/// level boundaries. A stimulus is encoded along a pool-specific direction
/// and a descriptor is `[f_i, f_j, f_i - f_j]`.
pub fn synthetic_pools(per_pool: usize, seed: u64) -> Result<(Vec<ToyExample>, Vec<ToyExample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture_dir = unit_direction(&mut rng);
    let geometry_dir = unit_direction(&mut rng);
    let texture = synthetic_pool(&mut rng, &texture_dir, per_pool)?;
    let geometry = synthetic_pool(&mut rng, &geometry_dir, per_pool)?;
    Ok((texture, geometry))
}

fn unit_direction(rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(SYNTHETIC_STIMULUS_DIM, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    v.normalize()
}

fn synthetic_pool(rng: &mut ChaCha8Rng, dir: &DVector<f64>, n: usize) -> Result<Vec<ToyExample>> {
    const STD: f64 = 0.5;
    const MARGIN: f64 = 0.2;
    let pooled = (2.0 * STD * STD).sqrt();
    let d = SYNTHETIC_STIMULUS_DIM;
    (0..n)
        .map(|k| {
            let level = QualityLevel::ALL[k % NUM_LEVELS];
            let (lo, hi) = level.z_interval();
            let lo = if lo.is_finite() { lo + MARGIN } else { -3.5 };
            let hi = if hi.is_finite() { hi - MARGIN } else { 3.5 };
            let z: f64 = rng.random_range(lo..hi);
            let q_i: f64 = rng.random_range(2.5..7.5);
            let q_j = q_i - z * pooled;
            debug_assert_eq!(quantize_level(z).ok(), Some(level));
            let f_i = dir * ((q_i - 5.0) / 5.0);
            let f_j = dir * ((q_j - 5.0) / 5.0);
            let diff = dir * (z / 2.0);
            let mut x = DVector::zeros(3 * d);
            x.rows_mut(0, d).copy_from(&f_i);
            x.rows_mut(d, d).copy_from(&f_j);
            x.rows_mut(2 * d, d).copy_from(&diff);
            Ok(ToyExample {
                descriptor: x,
                level,
            })
        })
        .collect()
}
