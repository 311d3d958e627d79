//! Scene encoder: focal-frame normalization, polyline tokens, per-agent
//! causal temporal attention, then two interleaved rounds of agent-map
//! cross-attention and agent-agent self-attention on the last-step tokens.

use rand::Rng;

use crate::numerics::{Array, AttentionBlock, ForwardCtx, Mlp, NumericsError, ParamStore, Tape, Var};
use crate::scenario::{FrameTransform, Scenario, Semantic};

/// Positions enter the network in units of 20 m.
const POSITION_SCALE: f64 = 0.05;
const SPEED_SCALE: f64 = 0.1;
const POINT_FEATURES: usize = 6;
const MOTION_FEATURES: usize = 8;
const INTERACTION_ROUNDS: usize = 2;

#[derive(Clone, Debug)]
pub struct Encoder {
    hidden: usize,
    point_mlp: Mlp,
    map_self: AttentionBlock,
    motion_mlp: Mlp,
    temporal: AttentionBlock,
    agent_map: Vec<AttentionBlock>,
    agent_agent: Vec<AttentionBlock>,
}

/// Tape-resident scene encoding for one scenario.
#[derive(Clone, Debug)]
pub struct SceneTokens {
    /// `[M, D]`, absent when the map has no polylines.
    pub map: Option<Var>,
    /// Polylines with a point within the decoder's map radius of the focal agent.
    pub map_near: Vec<usize>,
    /// `[A * T, D]`, agent-major.
    pub agents: Var,
    pub num_agents: usize,
    pub steps: usize,
    pub focal_index: usize,
    /// Focal history steps that are valid (always includes the last).
    pub focal_valid: Vec<usize>,
    pub transform: FrameTransform,
    pub focal_speed: f64,
}

impl SceneTokens {
    /// Focal agent's `[T', D]` history tokens (valid steps only).
    pub fn focal_history(&self, tape: &mut Tape) -> Result<Var, NumericsError> {
        let base = self.focal_index * self.steps;
        let rows: Vec<usize> = self.focal_valid.iter().map(|t| base + t).collect();
        tape.gather_rows(self.agents, &rows)
    }

    /// Last-step tokens of every non-focal agent, or `None` when alone.
    pub fn neighbors(&self, tape: &mut Tape) -> Result<Option<Var>, NumericsError> {
        let rows: Vec<usize> = (0..self.num_agents)
            .filter(|&a| a != self.focal_index)
            .map(|a| a * self.steps + self.steps - 1)
            .collect();
        if rows.is_empty() {
            return Ok(None);
        }
        tape.gather_rows(self.agents, &rows).map(Some)
    }

    /// Map tokens within the radius, or `None`.
    pub fn nearby_map(&self, tape: &mut Tape) -> Result<Option<Var>, NumericsError> {
        match self.map {
            Some(map) if !self.map_near.is_empty() => tape.gather_rows(map, &self.map_near).map(Some),
            _ => Ok(None),
        }
    }
}

/// Materialized scene embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEmbedding {
    /// `[M, D]`
    pub map_embedding: Array,
    /// `[A, T, D]`
    pub agent_embedding: Array,
    pub focal_index: usize,
    pub transform: FrameTransform,
}

impl SceneEmbedding {
    pub fn from_tokens(tape: &Tape, tokens: &SceneTokens, hidden: usize) -> Self {
        let map_embedding = match tokens.map {
            Some(m) => tape.value(m).clone(),
            None => Array::zeros(&[0, hidden]),
        };
        let agent_embedding = tape
            .value(tokens.agents)
            .clone()
            .reshape(&[tokens.num_agents, tokens.steps, hidden])
            .expect("agent tokens are [A*T, D]");
        Self {
            map_embedding,
            agent_embedding,
            focal_index: tokens.focal_index,
            transform: tokens.transform,
        }
    }
}

fn polyline_features(points: &[[f64; 2]], semantic: Semantic, frame: &FrameTransform) -> Array {
    let local: Vec<[f64; 2]> = points.iter().map(|&p| frame.to_local(p)).collect();
    let n = local.len();
    let mut data = Vec::with_capacity(n * POINT_FEATURES);
    for i in 0..n {
        let (a, b) = if i + 1 < n { (local[i], local[i + 1]) } else { (local[i - 1], local[i]) };
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        data.extend_from_slice(&[
            local[i][0] * POSITION_SCALE,
            local[i][1] * POSITION_SCALE,
            dx / len,
            dy / len,
            f64::from(semantic == Semantic::LaneCenter),
            f64::from(semantic == Semantic::Boundary),
        ]);
    }
    Array::new(vec![n, POINT_FEATURES], data).expect("feature layout")
}

fn motion_features(scenario: &Scenario, frame: &FrameTransform) -> Array {
    let steps = scenario.history_steps();
    let mut data = Vec::with_capacity(scenario.agents.len() * steps * MOTION_FEATURES);
    let denom = (steps.max(2) - 1) as f64;
    for (a, track) in scenario.agents.iter().enumerate() {
        let focal = f64::from(a == scenario.focal_index);
        for t in 0..steps {
            let time = t as f64 / denom;
            if !track.valid[t] {
                data.extend_from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, time, 0.0, focal]);
                continue;
            }
            let p = frame.to_local(track.positions[t]);
            let (s, c) = frame.heading_to_local(track.headings[t]).sin_cos();
            data.extend_from_slice(&[
                p[0] * POSITION_SCALE,
                p[1] * POSITION_SCALE,
                s,
                c,
                track.speeds[t] * SPEED_SCALE,
                time,
                1.0,
                focal,
            ]);
        }
    }
    Array::new(vec![scenario.agents.len() * steps, MOTION_FEATURES], data).expect("feature layout")
}

/// Block-diagonal causal mask over agent-major `[A*T]` tokens; invalid steps
/// are hidden as keys except from themselves.
fn temporal_mask(scenario: &Scenario) -> Vec<bool> {
    let steps = scenario.history_steps();
    let n = scenario.agents.len() * steps;
    let mut mask = vec![false; n * n];
    for (a, track) in scenario.agents.iter().enumerate() {
        for i in 0..steps {
            for j in 0..=i {
                if track.valid[j] || i == j {
                    mask[(a * steps + i) * n + a * steps + j] = true;
                }
            }
        }
    }
    mask
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, hidden: usize, heads: usize, rng: &mut R) -> Self {
        let h = hidden;
        Self {
            hidden,
            point_mlp: Mlp::new(store, "encoder.point_mlp", &[POINT_FEATURES, h, h], rng),
            map_self: AttentionBlock::self_attention(store, "encoder.map_self", h, heads, rng),
            motion_mlp: Mlp::new(store, "encoder.motion_mlp", &[MOTION_FEATURES, h, h], rng),
            temporal: AttentionBlock::self_attention(store, "encoder.temporal", h, heads, rng),
            agent_map: (0..INTERACTION_ROUNDS)
                .map(|r| AttentionBlock::cross(store, &format!("encoder.agent_map.{r}"), h, heads, rng))
                .collect(),
            agent_agent: (0..INTERACTION_ROUNDS)
                .map(|r| AttentionBlock::self_attention(store, &format!("encoder.agent_agent.{r}"), h, heads, rng))
                .collect(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        scenario: &Scenario,
        map_radius: f64,
    ) -> Result<SceneTokens, NumericsError> {
        let frame = FrameTransform::of_focal(scenario);

        let mut tokens = Vec::with_capacity(scenario.map.len());
        let mut map_near = Vec::new();
        for (i, pl) in scenario.map.iter().enumerate() {
            let feats = tape.constant(polyline_features(&pl.points, pl.semantic, &frame))?;
            let h = self.point_mlp.forward(tape, store, feats)?;
            tokens.push(tape.max_rows(h)?);
            let near = pl.points.iter().any(|&p| {
                let l = frame.to_local(p);
                (l[0] * l[0] + l[1] * l[1]).sqrt() <= map_radius
            });
            if near {
                map_near.push(i);
            }
        }
        let map = if tokens.is_empty() {
            None
        } else {
            let m = tape.concat_rows(&tokens)?;
            Some(self.map_self.forward_self(tape, store, ctx, m, None)?)
        };

        let steps = scenario.history_steps();
        let num_agents = scenario.agents.len();
        let feats = tape.constant(motion_features(scenario, &frame))?;
        let h = self.motion_mlp.forward(tape, store, feats)?;
        let mask = temporal_mask(scenario);
        let temporal = self.temporal.forward_self(tape, store, ctx, h, Some(&mask))?;

        let last_rows: Vec<usize> = (0..num_agents).map(|a| a * steps + steps - 1).collect();
        let mut last = tape.gather_rows(temporal, &last_rows)?;
        for round in 0..INTERACTION_ROUNDS {
            if let Some(m) = map {
                last = self.agent_map[round].forward_cross(tape, store, ctx, last, m, None)?;
            }
            last = self.agent_agent[round].forward_self(tape, store, ctx, last, None)?;
        }

        let agents = if steps == 1 {
            last
        } else {
            let mut parts = Vec::with_capacity(2 * num_agents);
            for a in 0..num_agents {
                let rows: Vec<usize> = (a * steps..a * steps + steps - 1).collect();
                parts.push(tape.gather_rows(temporal, &rows)?);
                parts.push(tape.gather_rows(last, &[a])?);
            }
            tape.concat_rows(&parts)?
        };

        let focal = scenario.focal();
        Ok(SceneTokens {
            map,
            map_near,
            agents,
            num_agents,
            steps,
            focal_index: scenario.focal_index,
            focal_valid: (0..steps).filter(|&t| focal.valid[t]).collect(),
            transform: frame,
            focal_speed: focal.last_speed(),
        })
    }

    /// Evaluation-mode encoding materialized as arrays.
    pub fn embed(&self, store: &ParamStore, scenario: &Scenario, map_radius: f64) -> Result<SceneEmbedding, NumericsError> {
        let mut tape = Tape::new();
        let tokens = self.encode(&mut tape, store, &mut ForwardCtx::eval(), scenario, map_radius)?;
        Ok(SceneEmbedding::from_tokens(&tape, &tokens, self.hidden))
    }
}
