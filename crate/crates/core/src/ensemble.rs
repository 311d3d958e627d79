//! Weighted Trajectory Fusion: greedy, confidence-ordered clustering of
//! modes pooled from several models, with confidence-weighted averaging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ScenePrediction;
use crate::scenario::{AgentClass, Point};
use crate::training::{MatchCriterion, TrainingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("model {model} mode {mode} has {found} steps, expected {expected}")]
    Horizon {
        model: usize,
        mode: usize,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Matching(#[from] TrainingError),
}

/// Per-class multipliers on the velocity-aware thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFactors {
    pub vehicle: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for ClassFactors {
    fn default() -> Self {
        Self {
            vehicle: 1.5,
            pedestrian: 1.4,
            cyclist: 1.4,
        }
    }
}

impl ClassFactors {
    pub fn get(&self, class: AgentClass) -> f64 {
        match class {
            AgentClass::Vehicle => self.vehicle,
            AgentClass::Pedestrian => self.pedestrian,
            AgentClass::Cyclist => self.cyclist,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub factors: ClassFactors,
    /// Output mode cap.
    pub max_modes: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            factors: ClassFactors::default(),
            max_modes: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryCluster {
    /// `(model, mode)` of every member, in joining order.
    pub members: Vec<(usize, usize)>,
    pub fused: Vec<Point>,
    pub confidence: f64,
    weighted_sum: Vec<Point>,
    weight: f64,
}

impl TrajectoryCluster {
    fn new(source: (usize, usize), trajectory: &[Point], confidence: f64) -> Self {
        let mut c = Self {
            members: Vec::new(),
            fused: trajectory.to_vec(),
            confidence: 0.0,
            weighted_sum: vec![[0.0; 2]; trajectory.len()],
            weight: 0.0,
        };
        c.add(source, trajectory, confidence);
        // A lone member is its own mean; skip the rounding of sum / weight.
        c.fused = trajectory.to_vec();
        c
    }

    fn add(&mut self, source: (usize, usize), trajectory: &[Point], confidence: f64) {
        self.members.push(source);
        self.weight += confidence;
        for (s, p) in self.weighted_sum.iter_mut().zip(trajectory) {
            s[0] += confidence * p[0];
            s[1] += confidence * p[1];
        }
        if self.weight > 0.0 {
            self.fused = self.weighted_sum.iter().map(|s| [s[0] / self.weight, s[1] / self.weight]).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub prediction: ScenePrediction,
    /// Kept clusters, in output order.
    pub clusters: Vec<TrajectoryCluster>,
}

/// Fuse one scenario's predictions from `predictions.len()` models.
/// `criterion` is the unscaled velocity-aware criterion of the focal agent.
pub fn fuse(
    predictions: &[ScenePrediction],
    class: AgentClass,
    criterion: &MatchCriterion,
    config: &FusionConfig,
) -> Result<FusionOutput, EnsembleError> {
    let factor = config.factors.get(class);
    if predictions.is_empty() || config.max_modes == 0 || !(factor > 0.0) {
        return Err(EnsembleError::InvalidArgument(
            "fusion needs at least one model, a positive mode cap and a positive class factor".into(),
        ));
    }
    let expected = predictions
        .iter()
        .flat_map(|p| p.trajectories.first())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    let mut pool = Vec::new();
    for (m, p) in predictions.iter().enumerate() {
        if p.trajectories.len() != p.confidences.len() {
            return Err(EnsembleError::InvalidArgument(format!(
                "model {m}: {} trajectories but {} confidences",
                p.trajectories.len(),
                p.confidences.len()
            )));
        }
        for (k, (t, &c)) in p.trajectories.iter().zip(&p.confidences).enumerate() {
            if t.len() != expected {
                return Err(EnsembleError::Horizon {
                    model: m,
                    mode: k,
                    found: t.len(),
                    expected,
                });
            }
            if !(0.0..=1.0).contains(&c) {
                return Err(EnsembleError::InvalidArgument(format!("model {m} mode {k}: confidence {c} outside [0, 1]")));
            }
            pool.push((c, m, k));
        }
    }
    // Stable: ties stay in (model, mode) order.
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));

    let scaled = criterion.scaled(factor);
    let mut clusters: Vec<TrajectoryCluster> = Vec::new();
    for (c, m, k) in pool {
        let traj = &predictions[m].trajectories[k];
        let mut home = None;
        for (i, cluster) in clusters.iter().enumerate() {
            if scaled.is_match(traj, &cluster.fused)? {
                home = Some(i);
                break;
            }
        }
        match home {
            Some(i) => clusters[i].add((m, k), traj, c),
            None => clusters.push(TrajectoryCluster::new((m, k), traj, c)),
        }
    }
    let n = predictions.len() as f64;
    for cluster in &mut clusters {
        let total: f64 = cluster.members.iter().map(|&(m, k)| predictions[m].confidences[k]).sum();
        cluster.confidence = (total / n).min(1.0);
    }
    clusters.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    clusters.truncate(config.max_modes);
    Ok(FusionOutput {
        prediction: ScenePrediction {
            trajectories: clusters.iter().map(|c| c.fused.clone()).collect(),
            confidences: clusters.iter().map(|c| c.confidence).collect(),
        },
        clusters,
    })
}
