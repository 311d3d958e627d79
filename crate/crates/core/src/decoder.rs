//! ModeSeq decoder.
//!
//! Each layer decodes modes one step at a time. Step `t` first attends to
//! the embeddings already decoded in this layer (the memory bank), then to
//! the focal history, nearby map tokens and neighbor agents, and finally
//! emits a trajectory, per-step Laplace scales and a confidence. Layers are
//! stacked; between layers the embeddings can be re-ordered by descending
//! confidence.

use rand::Rng;

use crate::encoder::SceneTokens;
use crate::numerics::nn::KeyValues;
use crate::numerics::{Array, AttentionBlock, ForwardCtx, Mlp, NumericsError, ParamId, ParamStore, Tape, Var};
use crate::scenario::Point;

/// Lower bound added to the softplus scale output.
pub const MIN_SCALE: f64 = 1e-3;

/// Trajectory head outputs per future step: a velocity delta (integrated by
/// a running sum), a direct position residual and two raw scales. The summed
/// deltas give smooth paths that generalize; the residual lets each step be
/// corrected on its own.
const HEAD_COLUMNS: usize = 6;

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub memory: AttentionBlock,
    pub mode_time: AttentionBlock,
    pub mode_map: AttentionBlock,
    pub mode_agent: AttentionBlock,
    pub trajectory_head: Mlp,
    pub confidence_head: Mlp,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub init_embedding: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub future_steps: usize,
    pub step_duration: f64,
}

/// One decoded mode, on the tape. Trajectories are in the focal frame.
#[derive(Clone, Copy, Debug)]
pub struct ModeVars {
    /// `[1, D]`
    pub embedding: Var,
    /// `[T̂, 2]`
    pub trajectory: Var,
    /// `[T̂, 2]`, strictly positive
    pub scale: Var,
    /// `[1, 1]` in (0, 1)
    pub confidence: Var,
    /// `[1, 1]` pre-sigmoid confidence
    pub logit: Var,
}

/// Per-layer outputs and the permutations applied between layers.
#[derive(Clone, Debug)]
pub struct RefinementStack {
    pub layers: Vec<Vec<ModeVars>>,
    /// `permutations[l]` orders layer `l`'s modes into layer `l + 1`'s inputs:
    /// input `i` of the next layer is mode `permutations[l][i]`.
    pub permutations: Vec<Vec<usize>>,
}

impl RefinementStack {
    pub fn last(&self) -> &[ModeVars] {
        self.layers.last().expect("at least one layer")
    }
}

/// Materialized mode sequence of one layer (focal frame).
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSequence {
    /// `[K, D]`
    pub embeddings: Array,
    pub trajectories: Vec<Vec<Point>>,
    pub scales: Vec<Vec<Point>>,
    pub confidences: Vec<f64>,
    pub layer_index: usize,
}

impl ModeSequence {
    pub fn from_vars(tape: &Tape, modes: &[ModeVars], layer_index: usize) -> Self {
        let points = |v: Var| -> Vec<Point> { tape.value(v).data().chunks(2).map(|c| [c[0], c[1]]).collect() };
        let rows: Vec<Vec<f64>> = modes.iter().map(|m| tape.value(m.embedding).data().to_vec()).collect();
        Self {
            embeddings: Array::from_rows(&rows).expect("equal widths"),
            trajectories: modes.iter().map(|m| points(m.trajectory)).collect(),
            scales: modes.iter().map(|m| points(m.scale)).collect(),
            confidences: modes.iter().map(|m| tape.value(m.confidence).data()[0]).collect(),
            layer_index,
        }
    }

    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }
}

/// Stable sort by confidence, descending; ties keep decoding order.
pub fn rearrangement_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// Re-order a layer's embeddings for the next layer. The permutation is a
/// constant; gradients flow through the embeddings themselves.
pub fn rearrange(tape: &Tape, modes: &[ModeVars]) -> (Vec<Var>, Vec<usize>) {
    let conf: Vec<f64> = modes.iter().map(|m| tape.value(m.confidence).data()[0]).collect();
    let order = rearrangement_order(&conf);
    (order.iter().map(|&i| modes[i].embedding).collect(), order)
}

/// Context key/values shared by every decoding step of one layer.
struct LayerContext {
    time: KeyValues,
    map: Option<KeyValues>,
    agents: Option<KeyValues>,
}

impl DecoderLayer {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, hidden: usize, heads: usize, future_steps: usize, rng: &mut R) -> Self {
        let cross = |store: &mut ParamStore, part: &str, rng: &mut R| {
            AttentionBlock::cross(store, &format!("{name}.{part}"), hidden, heads, rng)
        };
        Self {
            memory: cross(store, "memory", rng),
            mode_time: cross(store, "mode_time", rng),
            mode_map: cross(store, "mode_map", rng),
            mode_agent: cross(store, "mode_agent", rng),
            trajectory_head: Mlp::new(store, &format!("{name}.trajectory_head"), &[hidden, hidden, future_steps * HEAD_COLUMNS], rng),
            confidence_head: Mlp::new(store, &format!("{name}.confidence_head"), &[hidden, hidden, 1], rng),
        }
    }

    fn context(&self, tape: &mut Tape, store: &ParamStore, scene: &SceneTokens) -> Result<LayerContext, NumericsError> {
        let history = scene.focal_history(tape)?;
        let time = self.mode_time.project(tape, store, history)?;
        let map = match scene.nearby_map(tape)? {
            Some(m) => Some(self.mode_map.project(tape, store, m)?),
            None => None,
        };
        let agents = match scene.neighbors(tape)? {
            Some(n) => Some(self.mode_agent.project(tape, store, n)?),
            None => None,
        };
        Ok(LayerContext { time, map, agents })
    }
}

impl Decoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        hidden: usize,
        heads: usize,
        layers: usize,
        future_steps: usize,
        step_duration: f64,
        rng: &mut R,
    ) -> Self {
        let init_embedding = store.normal("decoder.init_embedding", &[1, hidden], crate::numerics::nn::INIT_STD, rng);
        Self {
            init_embedding,
            layers: (0..layers)
                .map(|l| DecoderLayer::new(store, &format!("decoder.layer{l}"), hidden, heads, future_steps, rng))
                .collect(),
            future_steps,
            step_duration,
        }
    }

    /// Constant-velocity extrapolation of the focal agent in its own frame,
    /// `[T̂, 2]`. Trajectory heads predict per-step offsets from it.
    fn velocity_prior(&self, speed: f64) -> Array {
        let data = (1..=self.future_steps)
            .flat_map(|j| [speed * self.step_duration * j as f64, 0.0])
            .collect();
        Array::new(vec![self.future_steps, 2], data).expect("prior layout")
    }

    fn heads(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: &DecoderLayer,
        embedding: Var,
        prior: Var,
    ) -> Result<ModeVars, NumericsError> {
        let out = layer.trajectory_head.forward(tape, store, embedding)?;
        let out = tape.reshape(out, &[self.future_steps, HEAD_COLUMNS])?;
        let deltas = tape.slice_cols(out, 0, 2)?;
        let path = tape.cumsum_rows(deltas)?;
        let residual = tape.slice_cols(out, 2, 2)?;
        let offsets = tape.add(path, residual)?;
        let trajectory = tape.add(offsets, prior)?;
        let raw_scale = tape.slice_cols(out, 4, 2)?;
        let scale = tape.softplus(raw_scale)?;
        let scale = tape.affine(scale, 1.0, MIN_SCALE)?;
        let logit = layer.confidence_head.forward(tape, store, embedding)?;
        let confidence = tape.sigmoid(logit)?;
        Ok(ModeVars {
            embedding,
            trajectory,
            scale,
            confidence,
            logit,
        })
    }

    /// One recurrent pass over `inputs` (`[1, D]` each); output `t` depends
    /// only on inputs `0..=t`.
    pub fn decode_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        scene: &SceneTokens,
        layer_index: usize,
        inputs: &[Var],
    ) -> Result<Vec<ModeVars>, NumericsError> {
        if inputs.is_empty() {
            return Err(NumericsError::InvalidArgument("at least one mode required".into()));
        }
        let layer = &self.layers[layer_index];
        let context = layer.context(tape, store, scene)?;
        let prior = tape.constant(self.velocity_prior(scene.focal_speed))?;
        let mut bank_keys: Vec<Var> = Vec::with_capacity(inputs.len());
        let mut bank_values: Vec<Var> = Vec::with_capacity(inputs.len());
        let mut modes = Vec::with_capacity(inputs.len());
        for &input in inputs {
            let mut x = input;
            // Empty bank at the first step: the memory block is skipped.
            if !bank_keys.is_empty() {
                let bank = KeyValues {
                    keys: tape.concat_rows(&bank_keys)?,
                    values: tape.concat_rows(&bank_values)?,
                };
                x = layer.memory.forward_kv(tape, store, ctx, x, bank, None)?;
            }
            x = layer.mode_time.forward_kv(tape, store, ctx, x, context.time, None)?;
            if let Some(kv) = context.map {
                x = layer.mode_map.forward_kv(tape, store, ctx, x, kv, None)?;
            }
            if let Some(kv) = context.agents {
                x = layer.mode_agent.forward_kv(tape, store, ctx, x, kv, None)?;
            }
            let projected = layer.memory.project(tape, store, x)?;
            bank_keys.push(projected.keys);
            bank_values.push(projected.values);
            modes.push(self.heads(tape, store, layer, x, prior)?);
        }
        Ok(modes)
    }

    /// All layers, starting from `steps` copies of the learned initial
    /// embedding.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        scene: &SceneTokens,
        steps: usize,
        rearrange_modes: bool,
    ) -> Result<RefinementStack, NumericsError> {
        if steps == 0 {
            return Err(NumericsError::InvalidArgument("at least one decoding step required".into()));
        }
        let init = tape.param(store, self.init_embedding);
        let mut inputs = vec![init; steps];
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut permutations = Vec::with_capacity(self.layers.len().saturating_sub(1));
        for l in 0..self.layers.len() {
            let modes = self.decode_layer(tape, store, ctx, scene, l, &inputs)?;
            if l + 1 < self.layers.len() {
                let (next, order) = if rearrange_modes {
                    rearrange(tape, &modes)
                } else {
                    (modes.iter().map(|m| m.embedding).collect(), (0..modes.len()).collect())
                };
                inputs = next;
                permutations.push(order);
            }
            layers.push(modes);
        }
        Ok(RefinementStack { layers, permutations })
    }
}
