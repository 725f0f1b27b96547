//! Relative quality levels and the standardized score difference they are
//! quantized from.
//!
//! Level indices are fixed everywhere (files, wire protocol, distributions):
//!
//! ```text
//! 0 inferior | 1 worse | 2 similar | 3 better | 4 superior
//! ```
//!
//! For a pair `(i, j)` the level describes sample `j` relative to sample `i`,
//! so a large positive `z = (q_i - q_j) / sqrt(std_i^2 + std_j^2)` means `j`
//! is much worse (`inferior`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the pooled rating deviation when both stds are zero.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// Tolerance on the component sum of a [`LevelDistribution`].
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

pub const NUM_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLevel {
    Inferior = 0,
    Worse = 1,
    Similar = 2,
    Better = 3,
    Superior = 4,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; NUM_LEVELS] = [
        QualityLevel::Inferior,
        QualityLevel::Worse,
        QualityLevel::Similar,
        QualityLevel::Better,
        QualityLevel::Superior,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase word used in instruction responses.
    pub fn word(self) -> &'static str {
        match self {
            QualityLevel::Inferior => "inferior",
            QualityLevel::Worse => "worse",
            QualityLevel::Similar => "similar",
            QualityLevel::Better => "better",
            QualityLevel::Superior => "superior",
        }
    }

    /// The level seen from the other side of the pair.
    pub fn mirror(self) -> Self {
        Self::ALL[NUM_LEVELS - 1 - self.index()]
    }

    /// Open interval `(lower, upper)` of `z` values mapped to this level.
    ///
    /// Endpoint ownership follows [`quantize_level`]; for the continuous
    /// interval-mass model only the endpoints matter.
    pub fn z_interval(self) -> (f64, f64) {
        match self {
            QualityLevel::Inferior => (2.0, f64::INFINITY),
            QualityLevel::Worse => (1.0, 2.0),
            QualityLevel::Similar => (-1.0, 1.0),
            QualityLevel::Better => (-2.0, -1.0),
            QualityLevel::Superior => (f64::NEG_INFINITY, -2.0),
        }
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

pub fn mirror_level(level: QualityLevel) -> QualityLevel {
    level.mirror()
}

/// `(q_i - q_j) / max(sqrt(std_i^2 + std_j^2), 1e-6)`.
pub fn standardized_difference(q_i: f64, std_i: f64, q_j: f64, std_j: f64) -> Result<f64> {
    if !(q_i.is_finite() && std_i.is_finite() && q_j.is_finite() && std_j.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite score or std: q_i={q_i}, std_i={std_i}, q_j={q_j}, std_j={std_j}"
        )));
    }
    if std_i < 0.0 || std_j < 0.0 {
        return Err(Error::invalid(format!(
            "negative rating std: std_i={std_i}, std_j={std_j}"
        )));
    }
    let pooled = (std_i * std_i + std_j * std_j)
        .sqrt()
        .max(DENOMINATOR_FLOOR);
    Ok((q_i - q_j) / pooled)
}

/// Maps a standardized difference to a level by magnitude and sign.
///
/// `|z| <= 1` is similar, `1 < |z| <= 2` is worse/better and `|z| > 2` is
/// inferior/superior, with positive `z` on the worse side. The boundaries are
/// symmetric, so `quantize_level(-z) == quantize_level(z).mirror()` for every
/// finite `z`.
pub fn quantize_level(z: f64) -> Result<QualityLevel> {
    if !z.is_finite() {
        return Err(Error::invalid(format!("non-finite z: {z}")));
    }
    let m = z.abs();
    let level = if m <= 1.0 {
        QualityLevel::Similar
    } else if m <= 2.0 {
        if z > 0.0 {
            QualityLevel::Worse
        } else {
            QualityLevel::Better
        }
    } else if z > 0.0 {
        QualityLevel::Inferior
    } else {
        QualityLevel::Superior
    };
    Ok(level)
}

/// A probability vector over the five levels in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LevelDistribution([f64; NUM_LEVELS]);

impl LevelDistribution {
    pub fn new(probs: [f64; NUM_LEVELS]) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!(
                "level probability must be finite and non-negative, got {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "level probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_LEVELS] = probs.try_into().map_err(|_| {
            Error::invalid(format!(
                "expected {NUM_LEVELS} level probabilities, got {}",
                probs.len()
            ))
        })?;
        Self::new(arr)
    }

    pub fn one_hot(level: QualityLevel) -> Self {
        let mut p = [0.0; NUM_LEVELS];
        p[level.index()] = 1.0;
        Self(p)
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_LEVELS as f64; NUM_LEVELS])
    }

    pub fn probs(&self) -> &[f64; NUM_LEVELS] {
        &self.0
    }

    pub fn get(&self, level: QualityLevel) -> f64 {
        self.0[level.index()]
    }

    /// Distribution with every level replaced by its mirror.
    pub fn mirrored(&self) -> Self {
        let mut p = self.0;
        p.reverse();
        Self(p)
    }

    pub fn expected_index(&self) -> f64 {
        self.0.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    pub fn argmax(&self) -> QualityLevel {
        let mut best = 0;
        for i in 1..NUM_LEVELS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        QualityLevel::ALL[best]
    }
}

impl<'de> Deserialize<'de> for LevelDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        LevelDistribution::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn difference_examples() {
        assert_eq!(standardized_difference(3.0, 0.7, 3.0, 1.3).unwrap(), 0.0);
        let z = standardized_difference(5.0, 1.0, 3.0, 1.0).unwrap();
        assert!((z - 2.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(standardized_difference(4.0, 0.0, 4.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn difference_floor_and_errors() {
        let z = standardized_difference(4.0, 0.0, 3.0, 0.0).unwrap();
        assert_eq!(z, 1.0 / DENOMINATOR_FLOOR);
        assert!(standardized_difference(f64::NAN, 1.0, 0.0, 1.0).is_err());
        assert!(standardized_difference(1.0, f64::INFINITY, 0.0, 1.0).is_err());
        assert!(standardized_difference(1.0, -0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn quantize_examples() {
        use QualityLevel::*;
        assert_eq!(quantize_level(2.5).unwrap(), Inferior);
        assert_eq!(quantize_level(0.0).unwrap(), Similar);
        assert_eq!(quantize_level(-1.5).unwrap(), Better);
        assert_eq!(quantize_level(-2.0).unwrap(), Better);
        assert_eq!(quantize_level(2.0).unwrap(), Worse);
        assert_eq!(quantize_level(1.0).unwrap(), Similar);
        assert_eq!(quantize_level(-1.0).unwrap(), Similar);
        assert!(quantize_level(f64::NAN).is_err());
        assert!(quantize_level(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn mirror_examples() {
        use QualityLevel::*;
        assert_eq!(mirror_level(Inferior), Superior);
        assert_eq!(mirror_level(Similar), Similar);
        assert_eq!(mirror_level(Better), Worse);
        for l in QualityLevel::ALL {
            assert_eq!(l.mirror().mirror(), l);
        }
    }

    #[test]
    fn level_serializes_lowercase() {
        assert_eq!(
            serde_json::to_string(&QualityLevel::Superior).unwrap(),
            "\"superior\""
        );
    }

    #[test]
    fn distribution_validation() {
        assert!(LevelDistribution::new([0.2; 5]).is_ok());
        assert!(LevelDistribution::new([0.2, 0.2, 0.2, 0.2, 0.18]).is_err());
        assert!(LevelDistribution::new([-0.1, 0.3, 0.4, 0.2, 0.2]).is_err());
        assert!(LevelDistribution::from_slice(&[0.25; 4]).is_err());
        let bad: std::result::Result<LevelDistribution, _> =
            serde_json::from_str("[0.2,0.2,0.2,0.2,0.18]");
        assert!(bad.is_err());
        let ok: LevelDistribution = serde_json::from_str("[0,0,1,0,0]").unwrap();
        assert_eq!(ok.argmax(), QualityLevel::Similar);
    }

    proptest! {
        #[test]
        fn quantize_is_mirror_symmetric(z in -10.0f64..10.0) {
            prop_assert_eq!(quantize_level(-z).unwrap(), quantize_level(z).unwrap().mirror());
        }

        #[test]
        fn difference_is_antisymmetric(
            qi in -100.0f64..100.0, si in 0.0f64..5.0,
            qj in -100.0f64..100.0, sj in 0.0f64..5.0,
        ) {
            let a = standardized_difference(qi, si, qj, sj).unwrap();
            let b = standardized_difference(qj, sj, qi, si).unwrap();
            prop_assert_eq!(a, -b);
        }
    }
}
