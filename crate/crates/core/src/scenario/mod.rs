//! Scenes, agent tracks and ground truth; the synthetic fork generator; the
//! JSON-lines dataset format.

mod generator;
mod io;

pub use generator::{generate_dataset, generate_fork_scenario, DatasetSpec, ForkConfig};
pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 2-D position in meters.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid generator argument: {0}")]
    InvalidArgument(String),
    #[error("geometric construction failed: {0}")]
    Geometry(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("line {line}: malformed record{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Malformed {
        line: usize,
        field: Option<String>,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantic {
    LaneCenter,
    Boundary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    #[default]
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Vehicle => "vehicle",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Cyclist => "cyclist",
        }
    }
}

impl std::str::FromStr for AgentClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(AgentClass::Vehicle),
            "pedestrian" => Ok(AgentClass::Pedestrian),
            "cyclist" => Ok(AgentClass::Cyclist),
            other => Err(format!("unknown agent class `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Point>,
    pub semantic: Semantic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub positions: Vec<Point>,
    pub headings: Vec<f64>,
    pub speeds: Vec<f64>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last_position(&self) -> Point {
        *self.positions.last().expect("non-empty track")
    }

    pub fn last_heading(&self) -> f64 {
        *self.headings.last().expect("non-empty track")
    }

    pub fn last_speed(&self) -> f64 {
        *self.speeds.last().expect("non-empty track")
    }
}

/// Which fork branch the generator drew, and its prior probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBranch {
    pub index: usize,
    pub prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub map: Vec<Polyline>,
    pub agents: Vec<AgentTrack>,
    pub focal_index: usize,
    /// Ground-truth future positions of the focal agent.
    pub future: Vec<Point>,
    pub latent_branch: LatentBranch,
    pub agent_class: AgentClass,
}

impl Scenario {
    pub fn focal(&self) -> &AgentTrack {
        &self.agents[self.focal_index]
    }

    pub fn history_steps(&self) -> usize {
        self.focal().len()
    }

    pub fn future_steps(&self) -> usize {
        self.future.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.focal_index >= self.agents.len() {
            return bad(format!(
                "focal_index {} with {} agents",
                self.focal_index,
                self.agents.len()
            ));
        }
        let t = self.focal().len();
        if t == 0 {
            return bad("empty history".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.positions.len() != t || a.headings.len() != t || a.speeds.len() != t || a.valid.len() != t {
                return bad(format!("agent {i}: history lengths differ from {t}"));
            }
            if !a.valid[t - 1] {
                return bad(format!("agent {i}: last observed step invalid"));
            }
            if a.speeds.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
                return bad(format!("agent {i}: negative or non-finite speed"));
            }
            if a
                .headings
                .iter()
                .any(|&h| !(h > -std::f64::consts::PI && h <= std::f64::consts::PI))
            {
                return bad(format!("agent {i}: heading outside (-pi, pi]"));
            }
            if a.positions.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("agent {i}: non-finite position"));
            }
        }
        for (i, p) in self.map.iter().enumerate() {
            if p.points.len() < 2 {
                return bad(format!("polyline {i}: fewer than 2 points"));
            }
            if p.points.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("polyline {i}: repeated consecutive point"));
            }
            if p.points.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("polyline {i}: non-finite point"));
            }
        }
        if self.future.is_empty() || self.future.iter().flatten().any(|v| !v.is_finite()) {
            return bad("future must be non-empty and finite".into());
        }
        let prior = self.latent_branch.prior;
        if !(prior > 0.0 && prior <= 1.0) {
            return bad(format!("latent branch prior {prior} outside (0, 1]"));
        }
        Ok(())
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Rotation by `-heading` about `origin`: maps global coordinates into the
/// frame where `origin` is zero and `heading` points along +x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    pub origin: Point,
    pub heading: f64,
}

impl FrameTransform {
    pub fn of_focal(scenario: &Scenario) -> Self {
        let focal = scenario.focal();
        Self {
            origin: focal.last_position(),
            heading: focal.last_heading(),
        }
    }

    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_global(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [
            c * p[0] - s * p[1] + self.origin[0],
            s * p[0] + c * p[1] + self.origin[1],
        ]
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        wrap_angle(h - self.heading)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn frame_transform_round_trips() {
        let f = FrameTransform {
            origin: [3.0, -4.0],
            heading: 0.7,
        };
        let p = [10.0, 2.5];
        let back = f.to_global(f.to_local(p));
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        let ahead = f.to_global([1.0, 0.0]);
        let local = f.to_local(ahead);
        assert!((local[0] - 1.0).abs() < 1e-12 && local[1].abs() < 1e-12);
    }
}
