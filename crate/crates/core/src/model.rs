use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{Decoder, ModeSequence, RefinementStack};
use crate::encoder::{Encoder, SceneTokens};
use crate::numerics::{ForwardCtx, NumericsError, ParamStore, Tape};
use crate::scenario::{Point, Scenario};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub modes: usize,
    pub history_steps: usize,
    pub future_steps: usize,
    pub step_duration: f64,
    pub map_radius: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            heads: 8,
            layers: 6,
            modes: 6,
            history_steps: 11,
            future_steps: 30,
            step_duration: 0.5,
            map_radius: 50.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let bad = |m: String| Err(NumericsError::InvalidArgument(m));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.layers == 0 || self.modes == 0 || self.future_steps == 0 || self.history_steps == 0 {
            return bad("layers, modes and horizons must be positive".into());
        }
        if !(self.step_duration > 0.0) || !(self.map_radius > 0.0) {
            return bad("step duration and map radius must be positive".into());
        }
        Ok(())
    }
}

/// Encoder, decoder and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Global-frame prediction for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    pub trajectories: Vec<Vec<Point>>,
    pub confidences: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NumericsError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, config.hidden, config.heads, &mut rng);
        let decoder = Decoder::new(
            &mut params,
            config.hidden,
            config.heads,
            config.layers,
            config.future_steps,
            config.step_duration,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn check_scenario(&self, scenario: &Scenario) -> Result<(), NumericsError> {
        if scenario.history_steps() != self.config.history_steps || scenario.future_steps() != self.config.future_steps {
            return Err(NumericsError::Shape(format!(
                "scenario has {}/{} history/future steps, model expects {}/{}",
                scenario.history_steps(),
                scenario.future_steps(),
                self.config.history_steps,
                self.config.future_steps
            )));
        }
        Ok(())
    }

    pub fn encode(&self, tape: &mut Tape, ctx: &mut ForwardCtx, scenario: &Scenario) -> Result<SceneTokens, NumericsError> {
        self.check_scenario(scenario)?;
        self.encoder.encode(tape, &self.params, ctx, scenario, self.config.map_radius)
    }

    /// Encode and decode `steps` modes through every layer.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &mut ForwardCtx,
        scenario: &Scenario,
        steps: usize,
        rearrange: bool,
    ) -> Result<(SceneTokens, RefinementStack), NumericsError> {
        let scene = self.encode(tape, ctx, scenario)?;
        let stack = self.decoder.decode(tape, &self.params, ctx, &scene, steps, rearrange)?;
        Ok((scene, stack))
    }

    /// Evaluation-mode decoding; one materialized sequence per layer.
    pub fn mode_sequences(&self, scenario: &Scenario, steps: usize, rearrange: bool) -> Result<Vec<ModeSequence>, NumericsError> {
        let mut tape = Tape::new();
        let (_, stack) = self.forward(&mut tape, &mut ForwardCtx::eval(), scenario, steps, rearrange)?;
        Ok(stack
            .layers
            .iter()
            .enumerate()
            .map(|(l, modes)| ModeSequence::from_vars(&tape, modes, l))
            .collect())
    }

    /// Final-layer trajectories de-normalized to the global frame.
    pub fn predict(&self, scenario: &Scenario, steps: usize, rearrange: bool) -> Result<ScenePrediction, NumericsError> {
        let mut tape = Tape::new();
        let (scene, stack) = self.forward(&mut tape, &mut ForwardCtx::eval(), scenario, steps, rearrange)?;
        let last = ModeSequence::from_vars(&tape, stack.last(), self.config.layers - 1);
        Ok(ScenePrediction {
            trajectories: last
                .trajectories
                .iter()
                .map(|traj| traj.iter().map(|&p| scene.transform.to_global(p)).collect())
                .collect(),
            confidences: last.confidences,
        })
    }
}
