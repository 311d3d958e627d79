//! Match criteria: per-step distance thresholds a predicted trajectory must
//! respect at every future step to count as a match.
//!
//! Threshold formulas are written in benchmark step indices (10 Hz). A
//! criterion with step duration `dt` maps future step `t` (1-based) to the
//! benchmark index `t * dt / 0.1`, so thresholds grow with elapsed time
//! regardless of the sampling rate.

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::scenario::Point;

/// Sampling interval the threshold formulas are expressed in.
pub const BENCHMARK_STEP_SECONDS: f64 = 0.1;

/// Velocity-dependent threshold multiplier.
pub fn scale_factor(speed: f64) -> Result<f64, TrainingError> {
    if !(speed >= 0.0) {
        return Err(TrainingError::InvalidArgument(format!("speed {speed} must be non-negative")));
    }
    Ok(if speed < 1.4 {
        0.5
    } else if speed < 11.0 {
        0.5 + 0.5 * (speed - 1.4) / (11.0 - 1.4)
    } else {
        1.0
    })
}

/// Linear-family threshold at benchmark index `t`: 2 m at `t = 60`.
pub fn linear_threshold(t: f64) -> f64 {
    t / 30.0
}

/// Lateral threshold at benchmark index `t` for an agent moving at `speed`.
pub fn lateral_threshold(speed: f64, t: f64) -> Result<f64, TrainingError> {
    let base = if t <= 30.0 { t / 30.0 } else { 0.04 * t - 0.2 };
    Ok(scale_factor(speed)? * base)
}

/// Longitudinal threshold: twice the lateral one.
pub fn longitudinal_threshold(speed: f64, t: f64) -> Result<f64, TrainingError> {
    let base = if t <= 30.0 { t / 15.0 } else { 0.08 * t - 0.4 };
    Ok(scale_factor(speed)? * base)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchFamily {
    Linear,
    VelocityAware,
}

impl std::str::FromStr for MatchFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(MatchFamily::Linear),
            "velocity_aware" => Ok(MatchFamily::VelocityAware),
            other => Err(format!("unknown match family `{other}`")),
        }
    }
}

impl MatchFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchFamily::Linear => "linear",
            MatchFamily::VelocityAware => "velocity_aware",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Thresholds {
    Radius(f64),
    LateralLongitudinal { lateral: f64, longitudinal: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchCriterion {
    pub family: MatchFamily,
    /// Focal speed at the last observed step, m/s.
    pub speed: f64,
    /// Focal heading at the last observed step; defines the longitudinal axis.
    pub heading: f64,
    /// Seconds per future step.
    pub step_duration: f64,
    /// Multiplies every threshold (1 for matching, class factor for fusion).
    pub multiplier: f64,
}

impl MatchCriterion {
    pub fn linear(step_duration: f64) -> Self {
        Self {
            family: MatchFamily::Linear,
            speed: 0.0,
            heading: 0.0,
            step_duration,
            multiplier: 1.0,
        }
    }

    pub fn velocity_aware(speed: f64, heading: f64, step_duration: f64) -> Self {
        Self {
            family: MatchFamily::VelocityAware,
            speed,
            heading,
            step_duration,
            multiplier: 1.0,
        }
    }

    pub fn new(family: MatchFamily, speed: f64, heading: f64, step_duration: f64) -> Self {
        match family {
            MatchFamily::Linear => Self {
                speed,
                heading,
                ..Self::linear(step_duration)
            },
            MatchFamily::VelocityAware => Self::velocity_aware(speed, heading, step_duration),
        }
    }

    pub fn scaled(self, multiplier: f64) -> Self {
        Self {
            multiplier: self.multiplier * multiplier,
            ..self
        }
    }

    /// Benchmark index of 1-based future step `step`.
    pub fn benchmark_index(&self, step: usize) -> f64 {
        step as f64 * self.step_duration / BENCHMARK_STEP_SECONDS
    }

    /// Thresholds at 1-based future step `step` of a `horizon`-step future.
    pub fn thresholds(&self, step: usize, horizon: usize) -> Result<Thresholds, TrainingError> {
        if step == 0 || step > horizon {
            return Err(TrainingError::InvalidArgument(format!(
                "step {step} outside 1..={horizon}"
            )));
        }
        let t = self.benchmark_index(step);
        Ok(match self.family {
            MatchFamily::Linear => Thresholds::Radius(self.multiplier * linear_threshold(t)),
            MatchFamily::VelocityAware => Thresholds::LateralLongitudinal {
                lateral: self.multiplier * lateral_threshold(self.speed, t)?,
                longitudinal: self.multiplier * longitudinal_threshold(self.speed, t)?,
            },
        })
    }

    /// True when `prediction` stays within the thresholds of `truth` at every
    /// step.
    pub fn is_match(&self, prediction: &[Point], truth: &[Point]) -> Result<bool, TrainingError> {
        if prediction.len() != truth.len() {
            return Err(TrainingError::InvalidArgument(format!(
                "trajectory of {} steps against ground truth of {}",
                prediction.len(),
                truth.len()
            )));
        }
        let horizon = truth.len();
        let (sin_h, cos_h) = self.heading.sin_cos();
        for (i, (p, y)) in prediction.iter().zip(truth).enumerate() {
            let (dx, dy) = (p[0] - y[0], p[1] - y[1]);
            let ok = match self.thresholds(i + 1, horizon)? {
                Thresholds::Radius(r) => (dx * dx + dy * dy).sqrt() <= r,
                Thresholds::LateralLongitudinal { lateral, longitudinal } => {
                    let lon = dx * cos_h + dy * sin_h;
                    let lat = -dx * sin_h + dy * cos_h;
                    lon.abs() <= longitudinal && lat.abs() <= lateral
                }
            };
            if !ok {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_factor_pieces() {
        assert_eq!(scale_factor(1.0).unwrap(), 0.5);
        assert_eq!(scale_factor(11.0).unwrap(), 1.0);
        assert!((scale_factor(6.2).unwrap() - 0.75).abs() < 1e-12);
        assert!(scale_factor(-0.1).is_err());
    }

    #[test]
    fn threshold_table() {
        assert!((linear_threshold(60.0) - 2.0).abs() < 1e-12);
        assert!((lateral_threshold(12.0, 30.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((longitudinal_threshold(12.0, 30.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((lateral_threshold(12.0, 80.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((longitudinal_threshold(12.0, 80.0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn step_range_is_checked() {
        let c = MatchCriterion::linear(0.1);
        assert!(c.thresholds(0, 30).is_err());
        assert!(c.thresholds(31, 30).is_err());
        assert!(c.thresholds(30, 30).is_ok());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let c = MatchCriterion::linear(0.1);
        assert!(c.is_match(&[[0.0, 0.0]], &[[0.0, 0.0], [1.0, 0.0]]).is_err());
    }
}
