//! Confidence scores over a softmax distribution and the exit rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const RATIO_FLOOR: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMethod {
    /// `1 − p₁`; exit when at most θ.
    LeastConfidence,
    /// `p₁ − p₂`; exit when at least θ.
    Margin,
    /// `p₁ / p₂`; exit when at least θ.
    Ratio,
    /// Normalized Shannon entropy; exit when at most θ.
    Entropy,
}

impl UncertaintyMethod {
    pub const ALL: [UncertaintyMethod; 4] = [
        UncertaintyMethod::LeastConfidence,
        UncertaintyMethod::Margin,
        UncertaintyMethod::Ratio,
        UncertaintyMethod::Entropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMethod::LeastConfidence => "least_confidence",
            UncertaintyMethod::Margin => "margin",
            UncertaintyMethod::Ratio => "ratio",
            UncertaintyMethod::Entropy => "entropy",
        }
    }

    /// True when a larger score means a more confident prediction.
    pub fn higher_is_confident(self) -> bool {
        matches!(self, UncertaintyMethod::Margin | UncertaintyMethod::Ratio)
    }

    /// Closed interval of legal thresholds. Ratio allows `+inf`.
    pub fn threshold_domain(self) -> (f64, f64) {
        match self {
            UncertaintyMethod::Ratio => (1.0, f64::INFINITY),
            _ => (0.0, 1.0),
        }
    }

    pub fn check_threshold(self, theta: f64) -> Result<()> {
        let (lo, hi) = self.threshold_domain();
        if theta.is_nan() || theta < lo || theta > hi {
            return invalid(format!("threshold {theta} outside [{lo}, {hi}] for {self}"));
        }
        Ok(())
    }

    /// Default calibration grid.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            UncertaintyMethod::Ratio => vec![1.5, 2.0, 3.0, 5.0, 10.0],
            _ => (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }

    /// Threshold at which no non-degenerate distribution exits.
    pub fn never_exit_threshold(self) -> f64 {
        match self {
            UncertaintyMethod::Margin => 1.0,
            UncertaintyMethod::Ratio => f64::INFINITY,
            UncertaintyMethod::LeastConfidence | UncertaintyMethod::Entropy => 0.0,
        }
    }

    /// Threshold at which every distribution exits.
    pub fn always_exit_threshold(self) -> f64 {
        match self {
            UncertaintyMethod::Margin => 0.0,
            UncertaintyMethod::Ratio => 1.0,
            UncertaintyMethod::LeastConfidence | UncertaintyMethod::Entropy => 1.0,
        }
    }
}

impl fmt::Display for UncertaintyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UncertaintyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_confidence" | "lc" => Ok(Self::LeastConfidence),
            "margin" | "margin_of_confidence" => Ok(Self::Margin),
            "ratio" | "ratio_of_confidence" => Ok(Self::Ratio),
            "entropy" => Ok(Self::Entropy),
            other => invalid(format!("unknown uncertainty method '{other}'")),
        }
    }
}

fn top_two(probs: &[f64]) -> (f64, f64) {
    let (mut p1, mut p2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > p1 {
            p2 = p1;
            p1 = p;
        } else if p > p2 {
            p2 = p;
        }
    }
    (p1, p2)
}

/// Score without validating the distribution.
pub(crate) fn score_unchecked(probs: &[f64], method: UncertaintyMethod) -> f64 {
    let (p1, p2) = top_two(probs);
    match method {
        UncertaintyMethod::LeastConfidence => 1.0 - p1,
        UncertaintyMethod::Margin => p1 - p2,
        UncertaintyMethod::Ratio => p1 / p2.max(RATIO_FLOOR),
        UncertaintyMethod::Entropy => {
            let h: f64 = probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            (h / (probs.len() as f64).ln()).clamp(0.0, 1.0)
        }
    }
}

/// Uncertainty score of a probability vector with at least two classes.
pub fn uncertainty_score(probs: &[f64], method: UncertaintyMethod) -> Result<f64> {
    if probs.len() < 2 {
        return invalid(format!(
            "need at least 2 class probabilities, got {}",
            probs.len()
        ));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return invalid("probabilities must be finite and non-negative");
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return invalid(format!("probabilities sum to {sum}, not 1"));
    }
    Ok(score_unchecked(probs, method))
}

pub(crate) fn passes(score: f64, method: UncertaintyMethod, theta: f64) -> bool {
    if method.higher_is_confident() {
        score >= theta
    } else {
        score <= theta
    }
}

/// Whether a prediction with `score` may leave the network at this exit.
pub fn exit_decision(score: f64, method: UncertaintyMethod, theta: f64) -> Result<bool> {
    method.check_threshold(theta)?;
    Ok(passes(score, method, theta))
}
