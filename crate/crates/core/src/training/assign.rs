use serde::{Deserialize, Serialize};

use super::{MatchCriterion, TrainingError};
use crate::scenario::Point;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Earliest matching mode is the positive.
    #[default]
    Emta,
    /// Lowest average displacement is the positive.
    Wta,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgnoreVariant {
    #[default]
    None,
    /// Matching modes other than the positive get no confidence loss.
    OtherMatches,
    /// Modes decoded before the positive get no confidence loss.
    EarlyMismatches,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Emta => "emta",
            Strategy::Wta => "wta",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "emta" => Ok(Strategy::Emta),
            "wta" => Ok(Strategy::Wta),
            other => Err(format!("unknown strategy `{other}` (expected emta or wta)")),
        }
    }
}

impl IgnoreVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            IgnoreVariant::None => "none",
            IgnoreVariant::OtherMatches => "other_matches",
            IgnoreVariant::EarlyMismatches => "early_mismatches",
        }
    }
}

impl std::str::FromStr for IgnoreVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(IgnoreVariant::None),
            "other_matches" => Ok(IgnoreVariant::OtherMatches),
            "early_mismatches" => Ok(IgnoreVariant::EarlyMismatches),
            other => Err(format!(
                "unknown ignore variant `{other}` (expected none, other_matches or early_mismatches)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Ignored,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelAssignment {
    /// Indices of matching modes, ascending.
    pub match_set: Vec<usize>,
    pub positive: usize,
    pub labels: Vec<Label>,
}

fn check_lengths(prediction: &[Point], truth: &[Point]) -> Result<(), TrainingError> {
    if prediction.len() != truth.len() || truth.is_empty() {
        return Err(TrainingError::InvalidArgument(format!(
            "trajectory of {} steps against ground truth of {}",
            prediction.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Mean Euclidean error over the horizon.
pub fn average_displacement(prediction: &[Point], truth: &[Point]) -> Result<f64, TrainingError> {
    check_lengths(prediction, truth)?;
    let total: f64 = prediction.iter().zip(truth).map(|(&p, &y)| distance(p, y)).sum();
    Ok(total / truth.len() as f64)
}

/// Euclidean error at the last step.
pub fn final_displacement(prediction: &[Point], truth: &[Point]) -> Result<f64, TrainingError> {
    check_lengths(prediction, truth)?;
    Ok(distance(*prediction.last().unwrap(), *truth.last().unwrap()))
}

/// Positive/negative/ignored labels for one layer's modes.
pub fn assign_labels(
    trajectories: &[Vec<Point>],
    truth: &[Point],
    criterion: &MatchCriterion,
    strategy: Strategy,
    variant: IgnoreVariant,
) -> Result<LabelAssignment, TrainingError> {
    if trajectories.is_empty() {
        return Err(TrainingError::InvalidArgument("at least one mode required".into()));
    }
    let mut match_set = Vec::new();
    let mut best = (f64::INFINITY, 0);
    for (k, traj) in trajectories.iter().enumerate() {
        if criterion.is_match(traj, truth)? {
            match_set.push(k);
        }
        let ade = average_displacement(traj, truth)?;
        if ade < best.0 {
            best = (ade, k);
        }
    }
    let positive = match (strategy, match_set.first()) {
        (Strategy::Emta, Some(&first)) => first,
        _ => best.1,
    };
    let labels = (0..trajectories.len())
        .map(|k| {
            if k == positive {
                Label::Positive
            } else {
                let ignored = match variant {
                    IgnoreVariant::None => false,
                    IgnoreVariant::OtherMatches => match_set.contains(&k),
                    IgnoreVariant::EarlyMismatches => k < positive,
                };
                if ignored {
                    Label::Ignored
                } else {
                    Label::Negative
                }
            }
        })
        .collect();
    Ok(LabelAssignment {
        match_set,
        positive,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(offset: f64, steps: usize) -> Vec<Point> {
        (1..=steps).map(|t| [t as f64, offset]).collect()
    }

    #[test]
    fn earliest_match_wins_over_best_match() {
        let truth = constant(0.0, 10);
        let modes = vec![constant(9.0, 10), constant(0.02, 10), constant(0.01, 10), constant(5.0, 10)];
        let c = MatchCriterion::linear(0.5);
        let emta = assign_labels(&modes, &truth, &c, Strategy::Emta, IgnoreVariant::None).unwrap();
        assert_eq!(emta.match_set, vec![1, 2]);
        assert_eq!(emta.positive, 1);
        let wta = assign_labels(&modes, &truth, &c, Strategy::Wta, IgnoreVariant::None).unwrap();
        assert_eq!(wta.positive, 2);
    }

    #[test]
    fn parses_names() {
        assert_eq!("wta".parse::<Strategy>().unwrap(), Strategy::Wta);
        assert_eq!("early_mismatches".parse::<IgnoreVariant>().unwrap(), IgnoreVariant::EarlyMismatches);
        assert!("best".parse::<Strategy>().is_err());
    }
}
