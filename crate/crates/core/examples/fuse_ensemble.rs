//! Weighted trajectory fusion of three models that roughly agree.

use modeseq::ensemble::{fuse, FusionConfig};
use modeseq::model::ScenePrediction;
use modeseq::scenario::AgentClass;
use modeseq::training::MatchCriterion;

fn prediction(lateral: &[f64], confidences: &[f64], jitter: f64) -> ScenePrediction {
    ScenePrediction {
        trajectories: lateral
            .iter()
            .map(|&l| (1..=10).map(|t| [4.0 * t as f64 + jitter, l * t as f64]).collect())
            .collect(),
        confidences: confidences.to_vec(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let models = [
        prediction(&[0.0, 1.5, -1.5], &[0.6, 0.3, 0.1], 0.0),
        prediction(&[0.05, 1.45, -2.5], &[0.5, 0.4, 0.1], 0.1),
        prediction(&[-0.05, 1.6], &[0.7, 0.3], -0.1),
    ];
    let criterion = MatchCriterion::velocity_aware(8.0, 0.0, 0.5);
    let out = fuse(&models, AgentClass::Vehicle, &criterion, &FusionConfig::default())?;
    for (c, traj) in out.clusters.iter().zip(&out.prediction.trajectories) {
        let end = traj.last().unwrap();
        println!(
            "confidence {:.3}  members {:?}  ends at ({:.2}, {:.2})",
            c.confidence, c.members, end[0], end[1]
        );
    }
    Ok(())
}
