//! Pre-norm Transformer building blocks on top of [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Array, NumericsError, ParamId, ParamStore, Tape, Var};

/// Standard deviation of learned embeddings. Linear weights use
/// `1 / sqrt(fan_in)` instead, which keeps activations at unit scale.
pub const INIT_STD: f64 = 0.02;

/// Per-forward-pass state: train/eval switch and the dropout stream.
#[derive(Clone, Debug)]
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            dropout: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        Self {
            train: true,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn active(&self) -> bool {
        self.train && self.dropout > 0.0
    }

    /// Inverted-dropout multipliers, or `None` when dropout is off.
    pub fn dropout_mask(&mut self, n: usize) -> Option<Vec<f64>> {
        if !self.active() {
            return None;
        }
        let keep = 1.0 - self.dropout;
        Some(
            (0..n)
                .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        )
    }

    pub fn apply_dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        let shape = tape.shape(x).to_vec();
        match self.dropout_mask(shape.iter().product()) {
            Some(mask) => tape.mul_const(x, &Array::new(shape, mask)?),
            None => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.normal(format!("{name}.weight"), &[input, output], (input as f64).sqrt().recip(), rng),
            bias: store.zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.ones(format!("{name}.gain"), &[dim]),
            bias: store.zeros(format!("{name}.bias"), &[dim]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.gelu(h)?;
            }
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

/// Position-wise `D -> 4D -> D` feed-forward with GELU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, 4 * dim, rng),
            down: Linear::new(store, &format!("{name}.down"), 4 * dim, dim, rng),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        x: Var,
    ) -> Result<Var, NumericsError> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.gelu(h)?;
        let h = ctx.apply_dropout(tape, h)?;
        self.down.forward(tape, store, h)
    }
}

/// Projected keys and values, reusable across many queries.
#[derive(Clone, Copy, Debug)]
pub struct KeyValues {
    pub keys: Var,
    pub values: Var,
}

/// Pre-norm multi-head attention block followed by a feed-forward sublayer:
///
/// ```text
/// h   = x + W_o · MHA(LN_q(x), LN_kv(c))
/// out = h + FFN(LN_ff(h))
/// ```
///
/// Self-attention blocks use `LN_q` for both sides and own no `LN_kv`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub heads: usize,
    pub norm_q: LayerNorm,
    pub norm_kv: Option<LayerNorm>,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl AttentionBlock {
    fn build<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        cross: bool,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "{dim} not divisible by {heads} heads");
        Self {
            heads,
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), dim),
            norm_kv: cross.then(|| LayerNorm::new(store, &format!("{name}.norm_kv"), dim)),
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, rng),
        }
    }

    pub fn cross<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        Self::build(store, name, dim, heads, true, rng)
    }

    pub fn self_attention<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self::build(store, name, dim, heads, false, rng)
    }

    /// Normalize and project a context set into keys and values.
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, context: Var) -> Result<KeyValues, NumericsError> {
        let norm = self.norm_kv.as_ref().unwrap_or(&self.norm_q);
        let c = norm.forward(tape, store, context)?;
        Ok(KeyValues {
            keys: self.key.forward(tape, store, c)?,
            values: self.value.forward(tape, store, c)?,
        })
    }

    /// Cross-attention of `x` over pre-projected key/values.
    pub fn forward_kv(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        x: Var,
        kv: KeyValues,
        mask: Option<&[bool]>,
    ) -> Result<Var, NumericsError> {
        let h = self.norm_q.forward(tape, store, x)?;
        let q = self.query.forward(tape, store, h)?;
        self.finish(tape, store, ctx, x, q, kv, mask)
    }

    pub fn forward_cross(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        x: Var,
        context: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, NumericsError> {
        let kv = self.project(tape, store, context)?;
        self.forward_kv(tape, store, ctx, x, kv, mask)
    }

    pub fn forward_self(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        x: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, NumericsError> {
        let h = self.norm_q.forward(tape, store, x)?;
        let q = self.query.forward(tape, store, h)?;
        let kv = KeyValues {
            keys: self.key.forward(tape, store, h)?,
            values: self.value.forward(tape, store, h)?,
        };
        self.finish(tape, store, ctx, x, q, kv, mask)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        x: Var,
        q: Var,
        kv: KeyValues,
        mask: Option<&[bool]>,
    ) -> Result<Var, NumericsError> {
        let nq = tape.shape(q)[0];
        let nk = tape.shape(kv.keys)[0];
        let drop = ctx.dropout_mask(self.heads * nq * nk);
        let a = tape.attention(q, kv.keys, kv.values, self.heads, mask, drop)?;
        let a = self.output.forward(tape, store, a)?;
        let h = tape.add(x, a)?;
        let f = self.norm_ff.forward(tape, store, h)?;
        let f = self.ff.forward(tape, store, ctx, f)?;
        tape.add(h, f)
    }
}
