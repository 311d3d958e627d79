use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;

use super::{
    wrap_angle, AgentClass, AgentTrack, LatentBranch, Point, Polyline, Scenario, ScenarioError, Semantic,
};

const LANE_HALF_WIDTH: f64 = 1.75;
const LANE_SPACING: f64 = 3.5;
const MIN_EXIT_SEPARATION_DEG: f64 = 20.0;

/// Parameters of one fork scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ForkConfig {
    pub branches: usize,
    pub branch_priors: Vec<f64>,
    /// Focal speed in m/s.
    pub approach_speed: f64,
    pub num_neighbors: usize,
    pub history_steps: usize,
    pub future_steps: usize,
    /// Seconds per step.
    pub step_duration: f64,
    /// Per-step positional noise on the ground truth, meters.
    pub noise_std: f64,
    /// Angle between the outermost exits, degrees.
    pub exit_spread_deg: f64,
    pub turn_radius: f64,
    pub agent_class: AgentClass,
}

impl Default for ForkConfig {
    fn default() -> Self {
        Self {
            branches: 3,
            branch_priors: vec![0.6, 0.3, 0.1],
            approach_speed: 8.0,
            num_neighbors: 2,
            history_steps: 11,
            future_steps: 30,
            step_duration: 0.5,
            noise_std: 0.15,
            exit_spread_deg: 120.0,
            turn_radius: 20.0,
            agent_class: AgentClass::Vehicle,
        }
    }
}

impl ForkConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidArgument(m));
        if !(1..=6).contains(&self.branches) {
            return bad(format!("branches must be in 1..=6, got {}", self.branches));
        }
        if self.branch_priors.len() != self.branches {
            return bad(format!(
                "{} priors for {} branches",
                self.branch_priors.len(),
                self.branches
            ));
        }
        if self.branch_priors.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad("priors must lie in (0, 1]".into());
        }
        let total: f64 = self.branch_priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("priors sum to {total}, not 1"));
        }
        if !(0.5..=20.0).contains(&self.approach_speed) {
            return bad(format!("approach speed {} outside [0.5, 20]", self.approach_speed));
        }
        if self.history_steps == 0 || self.future_steps == 0 {
            return bad("history and future need at least one step".into());
        }
        if !(self.step_duration > 0.0) || !(self.noise_std >= 0.0) || !(self.turn_radius > 0.0) {
            return bad("step duration and turn radius must be positive, noise non-negative".into());
        }
        Ok(())
    }
}

/// Dataset-level generator settings: one [`ForkConfig`] template whose
/// approach speed is redrawn per scene.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub fork: ForkConfig,
    pub speed_range: (f64, f64),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            fork: ForkConfig::default(),
            speed_range: (4.0, 12.0),
        }
    }
}

/// Exit headings, leftmost first.
fn exit_headings<R: Rng>(config: &ForkConfig, rng: &mut R) -> Result<Vec<f64>, ScenarioError> {
    let b = config.branches;
    if b == 1 {
        return Ok(vec![0.0]);
    }
    let spread = config.exit_spread_deg.to_radians();
    let spacing = spread / (b - 1) as f64;
    let jitter = ((spacing.to_degrees() - MIN_EXIT_SEPARATION_DEG) / 4.0).clamp(0.0, 3.0).to_radians();
    let headings: Vec<f64> = (0..b)
        .map(|i| spread / 2.0 - i as f64 * spacing + rng.gen_range(-1.0..=1.0) * jitter)
        .collect();
    for w in headings.windows(2) {
        let sep = (w[0] - w[1]).to_degrees();
        if sep < MIN_EXIT_SEPARATION_DEG {
            return Err(ScenarioError::Geometry(format!(
                "exit headings {:.1} and {:.1} deg are {sep:.1} deg apart (< {MIN_EXIT_SEPARATION_DEG})",
                w[0].to_degrees(),
                w[1].to_degrees()
            )));
        }
    }
    if headings.iter().any(|h| h.abs() >= PI / 2.0) {
        return Err(ScenarioError::Geometry("exit turns back past 90 degrees".into()));
    }
    Ok(headings)
}

/// Centerline of one branch parametrized by arc length `s` from the fork
/// point: straight along +x for `s <= 0`, a circular arc of `radius` to
/// `exit`, then straight.
#[derive(Clone, Copy, Debug)]
struct BranchPath {
    exit: f64,
    radius: f64,
}

impl BranchPath {
    fn arc_length(&self) -> f64 {
        self.radius * self.exit.abs()
    }

    fn at(&self, s: f64) -> (Point, f64) {
        if s <= 0.0 || self.exit == 0.0 {
            return ([s, 0.0], 0.0);
        }
        let sign = self.exit.signum();
        let r = self.radius;
        let arc = self.arc_length();
        let u = s.min(arc);
        let phi = u / r;
        let on_arc = [r * phi.sin(), sign * r * (1.0 - phi.cos())];
        let heading = sign * phi;
        if s <= arc {
            (on_arc, heading)
        } else {
            let rest = s - arc;
            ([on_arc[0] + rest * heading.cos(), on_arc[1] + rest * heading.sin()], heading)
        }
    }
}

fn sample_path(path: &BranchPath, from: f64, to: f64) -> Vec<Point> {
    let arc = path.arc_length();
    let mut stations: Vec<f64> = Vec::new();
    if arc > 0.0 {
        stations.extend((0..5).map(|i| arc * i as f64 / 4.0));
        stations.extend((1..=5).map(|i| arc + (to - arc) * i as f64 / 5.0));
    } else {
        stations.extend((0..10).map(|i| from + (to - from) * i as f64 / 9.0));
    }
    stations.into_iter().map(|s| path.at(s).0).collect()
}

fn straight(from: Point, to: Point, n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let a = i as f64 / (n - 1) as f64;
            [from[0] + a * (to[0] - from[0]), from[1] + a * (to[1] - from[1])]
        })
        .collect()
}

/// One synthetic fork scene: an approach lane splitting into
/// `config.branches` exits; the focal agent's future follows the exit drawn
/// from `config.branch_priors`.
pub fn generate_fork_scenario(seed: u64, config: &ForkConfig) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exits = exit_headings(config, &mut rng)?;
    let branch = WeightedIndex::new(&config.branch_priors)
        .map_err(|e| ScenarioError::InvalidArgument(e.to_string()))?
        .sample(&mut rng);

    let v = config.approach_speed;
    let dt = config.step_duration;
    let t_hist = config.history_steps;
    let t_fut = config.future_steps;
    let paths: Vec<BranchPath> = exits
        .iter()
        .map(|&exit| BranchPath {
            exit,
            radius: config.turn_radius,
        })
        .collect();

    // Focal agent sits 0.5..2.5 s before the fork at the last observed step.
    let s0 = -rng.gen_range(0.5..2.5) * v;
    let history_span = v * dt * (t_hist - 1) as f64;
    let s_end = s0 + v * dt * t_fut as f64 + 10.0;
    let approach_start = s0 - history_span - 30.0;

    let mut map = vec![Polyline {
        points: straight([approach_start, 0.0], [0.0, 0.0], 10),
        semantic: Semantic::LaneCenter,
    }];
    for side in [1.0, -1.0] {
        map.push(Polyline {
            points: straight(
                [approach_start, side * LANE_HALF_WIDTH],
                [0.0, side * LANE_HALF_WIDTH],
                10,
            ),
            semantic: Semantic::Boundary,
        });
    }
    for path in &paths {
        map.push(Polyline {
            points: sample_path(path, 0.0, s_end.max(path.arc_length() + 10.0)),
            semantic: Semantic::LaneCenter,
        });
    }

    let focal = AgentTrack {
        positions: (0..t_hist)
            .map(|i| [s0 - v * dt * (t_hist - 1 - i) as f64, 0.0])
            .collect(),
        headings: vec![0.0; t_hist],
        speeds: vec![v; t_hist],
        valid: vec![true; t_hist],
    };

    let mut agents = vec![focal];
    for n in 0..config.num_neighbors {
        // Parallel lanes alternating left/right of the approach.
        let side = if n % 2 == 0 { -1.0 } else { 1.0 };
        let y = side * LANE_SPACING * (1 + n / 2) as f64;
        let speed = rng.gen_range(0.5 * v..=1.2 * v).max(0.0);
        let x_last = s0 + rng.gen_range(-20.0..20.0);
        map.push(Polyline {
            points: straight([approach_start, y], [s_end, y], 10),
            semantic: Semantic::LaneCenter,
        });
        agents.push(AgentTrack {
            positions: (0..t_hist)
                .map(|i| [x_last - speed * dt * (t_hist - 1 - i) as f64, y])
                .collect(),
            headings: vec![0.0; t_hist],
            speeds: vec![speed; t_hist],
            valid: vec![true; t_hist],
        });
    }

    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| ScenarioError::InvalidArgument(e.to_string()))?;
    let future: Vec<Point> = (1..=t_fut)
        .map(|j| {
            let (p, _) = paths[branch].at(s0 + v * dt * j as f64);
            if config.noise_std > 0.0 {
                [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
            } else {
                p
            }
        })
        .collect();

    // Place the whole scene in a random global frame.
    let rot = rng.gen_range(-PI..PI);
    let shift = [rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)];
    let (sr, cr) = rot.sin_cos();
    let place = |p: Point| [cr * p[0] - sr * p[1] + shift[0], sr * p[0] + cr * p[1] + shift[1]];

    let map = map
        .into_iter()
        .map(|pl| Polyline {
            points: pl.points.into_iter().map(place).collect(),
            semantic: pl.semantic,
        })
        .collect();
    let agents = agents
        .into_iter()
        .map(|a| AgentTrack {
            positions: a.positions.into_iter().map(place).collect(),
            headings: a.headings.into_iter().map(|h| wrap_angle(h + rot)).collect(),
            speeds: a.speeds,
            valid: a.valid,
        })
        .collect();
    let scenario = Scenario {
        map,
        agents,
        focal_index: 0,
        future: future.into_iter().map(place).collect(),
        latent_branch: LatentBranch {
            index: branch,
            prior: config.branch_priors[branch],
        },
        agent_class: config.agent_class,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn scene_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 over (seed, index)
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` scenes; scene `i` depends only on `(seed, i)`, so the output is
/// identical regardless of worker count.
pub fn generate_dataset(count: usize, spec: &DatasetSpec, seed: u64) -> Result<Vec<Scenario>, ScenarioError> {
    spec.fork.validate()?;
    let (lo, hi) = spec.speed_range;
    if !(0.5..=20.0).contains(&lo) || !(0.5..=20.0).contains(&hi) || lo > hi {
        return Err(ScenarioError::InvalidArgument(format!(
            "speed range [{lo}, {hi}] outside [0.5, 20]"
        )));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = scene_seed(seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let config = ForkConfig {
                approach_speed: if hi > lo { rng.gen_range(lo..=hi) } else { lo },
                ..spec.fork.clone()
            };
            generate_fork_scenario(rng.gen(), &config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_path_is_continuous_at_joints() {
        let p = BranchPath {
            exit: 0.6,
            radius: 20.0,
        };
        let arc = p.arc_length();
        for s in [0.0, arc] {
            let (a, ha) = p.at(s - 1e-9);
            let (b, hb) = p.at(s + 1e-9);
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
            assert!((ha - hb).abs() < 1e-6);
        }
        assert!((p.at(arc + 5.0).1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn six_branches_keep_minimum_separation() {
        let config = ForkConfig {
            branches: 6,
            branch_priors: vec![1.0 / 6.0; 6],
            ..Default::default()
        };
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = exit_headings(&config, &mut rng).unwrap();
            assert!(h.windows(2).all(|w| (w[0] - w[1]).to_degrees() >= 20.0));
        }
    }

    #[test]
    fn narrow_spread_is_rejected() {
        let config = ForkConfig {
            branches: 4,
            branch_priors: vec![0.25; 4],
            exit_spread_deg: 45.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_fork_scenario(1, &config),
            Err(ScenarioError::Geometry(_))
        ));
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let cases = [
            ForkConfig {
                branches: 0,
                branch_priors: vec![],
                ..Default::default()
            },
            ForkConfig {
                branch_priors: vec![0.5, 0.3, 0.1],
                ..Default::default()
            },
            ForkConfig {
                approach_speed: 25.0,
                ..Default::default()
            },
        ];
        for c in cases {
            assert!(matches!(
                generate_fork_scenario(0, &c),
                Err(ScenarioError::InvalidArgument(_))
            ));
        }
    }
}
