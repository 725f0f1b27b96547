//! Correlation and error metrics between predicted and subjective scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction and ground-truth lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 scores, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson correlation; 0 when either side has zero variance.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank-order correlation with average ranks for ties.
pub fn srocc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pearson(&average_ranks(pred), &average_ranks(gt)))
}

/// Kendall tau-b by pair enumeration; 0 when either side is all ties.
pub fn krocc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    let n = pred.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_pred, mut ties_gt) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (pred[i] - pred[j]).partial_cmp(&0.0).expect("finite");
            let b = (gt[i] - gt[j]).partial_cmp(&0.0).expect("finite");
            use std::cmp::Ordering::Equal;
            match (a, b) {
                (Equal, Equal) => {
                    ties_pred += 1;
                    ties_gt += 1;
                }
                (Equal, _) => ties_pred += 1,
                (_, Equal) => ties_gt += 1,
                _ if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - ties_pred) as f64) * ((n0 - ties_gt) as f64)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

fn rmse(x: &[f64], y: &[f64]) -> f64 {
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (sse / x.len() as f64).sqrt()
}

/// `(b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`.
pub fn logistic4(params: &[f64; 4], x: f64) -> f64 {
    let [b1, b2, b3, b4] = *params;
    let scale = b4.abs().max(1e-12);
    (b1 - b2) / (1.0 + (-(x - b3) / scale).exp()) + b2
}

fn sse_of(params: &[f64; 4], pred: &[f64], gt: &[f64]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (logistic4(params, *p) - g).powi(2))
        .sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Nelder-Mead simplex minimization of a function of four parameters.
fn nelder_mead(f: impl Fn(&[f64; 4]) -> f64, start: [f64; 4], max_iter: usize) -> ([f64; 4], f64) {
    const N: usize = 4;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] = if p[i] != 0.0 { p[i] * 1.05 } else { 2.5e-4 };
        simplex.push((p, f(&p)));
    }
    let lerp = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] {
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = a[k] + t * (b[k] - a[k]);
        }
        out
    };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread_f = simplex[N].1 - simplex[0].1;
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f.abs() <= 1e-14 && spread_x <= 1e-10 {
            break;
        }
        let mut centroid = [0.0; N];
        for (p, _) in &simplex[..N] {
            for k in 0..N {
                centroid[k] += p[k] / N as f64;
            }
        }
        let worst = simplex[N];
        let reflected = lerp(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst.1 {
                let c = lerp(&centroid, &worst.0, -0.5);
                (c, f(&c))
            } else {
                let c = lerp(&centroid, &worst.0, 0.5);
                (c, f(&c))
            };
            if fc < worst.1.min(fr) {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p = lerp(&best, &entry.0, 0.5);
                    *entry = (p, f(&p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fits the four-parameter logistic mapping from predictions to ground truth.
pub fn fit_logistic(pred: &[f64], gt: &[f64]) -> Result<[f64; 4]> {
    check_pair(pred, gt)?;
    let max_gt = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_gt = gt.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = std_dev(pred);
    let spread = if spread > 0.0 { spread } else { 1.0 };
    let objective = |p: &[f64; 4]| sse_of(p, pred, gt);
    let conventional = nelder_mead(objective, [max_gt, min_gt, median(pred), spread], 4000);

    // A wide logistic is affine over the data; starting there means the fit
    // can only improve on the least-squares line.
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gt.iter().sum::<f64>() / n;
    let sxy: f64 = pred.iter().zip(gt).map(|(p, g)| (p - mp) * (g - mg)).sum();
    let sxx: f64 = pred.iter().map(|p| (p - mp).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let width = AFFINE_START_WIDTH * spread;
    let half_rise = 2.0 * width * slope;
    let affine = nelder_mead(objective, [mg + half_rise, mg - half_rise, mp, width], 4000);

    Ok(if affine.1 < conventional.1 {
        affine.0
    } else {
        conventional.0
    })
}

/// Logistic width, in prediction standard deviations, of the affine start.
const AFFINE_START_WIDTH: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlccRmse {
    pub plcc: f64,
    pub rmse: f64,
    /// Logistic parameters, when the fitted mapping was used.
    pub fit_params: Option<[f64; 4]>,
    pub degenerate: bool,
}

/// PLCC and RMSE, optionally after a logistic mapping of the predictions.
///
/// In fitted mode the identity mapping is kept whenever it has lower squared
/// error than the fitted logistic, so fitted RMSE never exceeds raw RMSE.
pub fn plcc_rmse(pred: &[f64], gt: &[f64], fitted: bool) -> Result<PlccRmse> {
    check_pair(pred, gt)?;
    let degenerate = is_constant(pred) || is_constant(gt);
    if !fitted || degenerate {
        return Ok(PlccRmse {
            plcc: pearson(pred, gt),
            rmse: rmse(pred, gt),
            fit_params: None,
            degenerate,
        });
    }
    let params = fit_logistic(pred, gt)?;
    let mapped: Vec<f64> = pred.iter().map(|p| logistic4(&params, *p)).collect();
    let identity_sse: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum();
    if sse_of(&params, pred, gt) < identity_sse {
        Ok(PlccRmse {
            plcc: pearson(&mapped, gt),
            rmse: rmse(&mapped, gt),
            fit_params: Some(params),
            degenerate: false,
        })
    } else {
        Ok(PlccRmse {
            plcc: pearson(pred, gt),
            rmse: rmse(pred, gt),
            fit_params: None,
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub srocc: f64,
    pub plcc_raw: f64,
    pub plcc_fitted: f64,
    pub krocc: f64,
    pub rmse_raw: f64,
    pub rmse_fitted: f64,
    pub n: usize,
    pub fit_params: Option<[f64; 4]>,
    /// Set when one side is constant; correlations are then reported as 0.
    pub degenerate: bool,
}

pub const SUMMARY_HEADER: &str =
    "n,srocc,plcc_raw,plcc_fitted,krocc,rmse_raw,rmse_fitted,degenerate";

impl MetricReport {
    pub fn compute(pred: &[f64], gt: &[f64]) -> Result<Self> {
        let raw = plcc_rmse(pred, gt, false)?;
        let fitted = plcc_rmse(pred, gt, true)?;
        Ok(Self {
            srocc: srocc(pred, gt)?,
            plcc_raw: raw.plcc,
            plcc_fitted: fitted.plcc,
            krocc: krocc(pred, gt)?,
            rmse_raw: raw.rmse,
            rmse_fitted: fitted.rmse,
            n: pred.len(),
            fit_params: fitted.fit_params,
            degenerate: raw.degenerate,
        })
    }

    /// One row matching [`SUMMARY_HEADER`].
    pub fn summary_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.srocc,
            self.plcc_raw,
            self.plcc_fitted,
            self.krocc,
            self.rmse_raw,
            self.rmse_fitted,
            self.degenerate
        );
        s
    }
}
