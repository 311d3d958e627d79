use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    assign_labels, confidence_loss, regression_loss, IgnoreVariant, LabelAssignment, MatchCriterion, MatchFamily,
    Strategy, TrainingError,
};
use crate::decoder::ModeVars;
use crate::metrics::{evaluate, EvalRecord, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::numerics::{clip_global_norm, cosine_lr, AdamW, AdamWConfig, Array, ForwardCtx, NumericsError, Tape, Var};
use crate::scenario::{FrameTransform, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub ignore_variant: IgnoreVariant,
    pub rearrange: bool,
    pub modes: usize,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub match_family: MatchFamily,
    /// Seconds per future step of the data.
    pub step_duration: f64,
    pub map_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Emta,
            ignore_variant: IgnoreVariant::None,
            rearrange: true,
            modes: 6,
            layers: 6,
            hidden: 128,
            heads: 8,
            epochs: 30,
            batch_size: 32,
            lr: 5e-4,
            weight_decay: 0.1,
            dropout: 0.1,
            grad_clip: 5.0,
            seed: 0,
            match_family: MatchFamily::VelocityAware,
            step_duration: 0.5,
            map_radius: 50.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidArgument(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return bad("lr and grad_clip must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn model_config(&self, history_steps: usize, future_steps: usize) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            modes: self.modes,
            history_steps,
            future_steps,
            step_duration: self.step_duration,
            map_radius: self.map_radius,
        }
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Ground-truth future in the focal frame, `[T̂, 2]`.
pub fn focal_target(scenario: &Scenario) -> Array {
    let frame = FrameTransform::of_focal(scenario);
    let data = scenario.future.iter().flat_map(|&p| frame.to_local(p)).collect();
    Array::new(vec![scenario.future.len(), 2], data).expect("future layout")
}

/// Match criterion in the focal frame, where the last heading is zero.
pub fn focal_criterion(scenario: &Scenario, family: MatchFamily, step_duration: f64) -> MatchCriterion {
    MatchCriterion::new(family, scenario.focal().last_speed(), 0.0, step_duration)
}

/// Match criterion in the global frame.
pub fn global_criterion(scenario: &Scenario, family: MatchFamily, step_duration: f64) -> MatchCriterion {
    let focal = scenario.focal();
    MatchCriterion::new(family, focal.last_speed(), focal.last_heading(), step_duration)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerLoss {
    pub regression: f64,
    pub confidence: f64,
    pub assignment: LabelAssignment,
}

#[derive(Clone, Debug)]
pub struct SampleLoss {
    /// Scalar sum of every layer's regression and confidence terms.
    pub total: Var,
    pub layers: Vec<LayerLoss>,
}

fn layer_terms(
    tape: &mut Tape,
    modes: &[ModeVars],
    target: Var,
    truth: &[[f64; 2]],
    criterion: &MatchCriterion,
    config: &TrainConfig,
) -> Result<(Var, Var, LabelAssignment), TrainingError> {
    let trajectories: Vec<Vec<[f64; 2]>> = modes
        .iter()
        .map(|m| tape.value(m.trajectory).data().chunks(2).map(|c| [c[0], c[1]]).collect())
        .collect();
    let assignment = assign_labels(&trajectories, truth, criterion, config.strategy, config.ignore_variant)?;
    let positive = &modes[assignment.positive];
    let reg = regression_loss(tape, positive.trajectory, positive.scale, target)?;
    let logits: Vec<Var> = modes.iter().map(|m| m.logit).collect();
    let conf = confidence_loss(tape, &logits, &assignment.labels)?;
    Ok((reg, conf, assignment))
}

/// Forward pass and per-layer losses for one scenario.
pub fn sample_loss(
    model: &Model,
    tape: &mut Tape,
    ctx: &mut ForwardCtx,
    scenario: &Scenario,
    config: &TrainConfig,
) -> Result<SampleLoss, TrainingError> {
    let (_, stack) = model.forward(tape, ctx, scenario, config.modes, config.rearrange)?;
    let target_array = focal_target(scenario);
    let truth: Vec<[f64; 2]> = target_array.data().chunks(2).map(|c| [c[0], c[1]]).collect();
    let target = tape.constant(target_array)?;
    let criterion = focal_criterion(scenario, config.match_family, config.step_duration);
    let mut total: Option<Var> = None;
    let mut layers = Vec::with_capacity(stack.layers.len());
    for modes in &stack.layers {
        let (reg, conf, assignment) = layer_terms(tape, modes, target, &truth, &criterion, config)?;
        let layer = tape.add(reg, conf)?;
        total = Some(match total {
            Some(t) => tape.add(t, layer)?,
            None => layer,
        });
        layers.push(LayerLoss {
            regression: tape.value(reg).data()[0],
            confidence: tape.value(conf).data()[0],
            assignment,
        });
    }
    Ok(SampleLoss {
        total: total.expect("at least one layer"),
        layers,
    })
}

/// Per-epoch training summary; `metrics` is present on evaluated epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub reg_loss: f64,
    pub conf_loss: f64,
    pub metrics: Option<MetricsReport>,
}

pub const LOG_COLUMNS: &str = "epoch,train_loss,reg_loss,conf_loss,MR,mAP,soft_mAP,minADE,minFDE,b_minFDE";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let metrics = match &self.metrics {
            Some(m) => m.csv_fields(),
            None => ",,,,,".to_string(),
        };
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.reg_loss, self.conf_loss, metrics
        )
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct SampleResult {
    grads: Vec<Array>,
    total: f64,
    regression: f64,
    confidence: f64,
}

fn is_numeric_failure(e: &TrainingError) -> bool {
    matches!(
        e,
        TrainingError::Numerics(NumericsError::NonFinite(_)) | TrainingError::Numerics(NumericsError::NonFiniteGradient(_))
    )
}

/// Model, optimizer state and training history.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    /// Fresh model sized for scenarios shaped like `example`.
    pub fn new(config: TrainConfig, example: &Scenario) -> Result<Self, TrainingError> {
        config.validate()?;
        let model = Model::new(
            config.model_config(example.history_steps(), example.future_steps()),
            config.seed,
        )?;
        let optimizer = AdamW::new(config.optimizer_config(), &model.params);
        Ok(Self {
            config,
            model,
            optimizer,
            epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        self.config.epochs * self.batches_per_epoch(samples)
    }

    /// Sample order of epoch `epoch`, a seeded shuffle.
    pub fn epoch_order(&self, epoch: usize, samples: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..samples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    fn sample(&self, scenario: &Scenario, seed: u64) -> Result<SampleResult, TrainingError> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::train(self.config.dropout, seed);
        let loss = sample_loss(&self.model, &mut tape, &mut ctx, scenario, &self.config)?;
        let total = tape.value(loss.total).data()[0];
        if !total.is_finite() {
            return Err(NumericsError::NonFinite("loss").into());
        }
        let grads = tape.backward(loss.total)?.param_grads(&self.model.params);
        Ok(SampleResult {
            grads,
            total,
            regression: loss.layers.iter().map(|l| l.regression).sum(),
            confidence: loss.layers.iter().map(|l| l.confidence).sum(),
        })
    }

    /// Mean gradient and losses over `indices`, summed in index order.
    fn batch(&self, data: &[Scenario], indices: &[usize], epoch: usize) -> Result<(Vec<Array>, [f64; 3]), TrainingError> {
        let chunk = rayon::current_num_threads().max(1);
        let mut acc: Vec<Array> = self.model.params.entries().iter().map(|e| Array::zeros(e.value.shape())).collect();
        let mut losses = [0.0; 3];
        for part in indices.chunks(chunk) {
            let results: Vec<Result<SampleResult, TrainingError>> = part
                .par_iter()
                .map(|&i| self.sample(&data[i], mix(mix(self.config.seed, epoch as u64 + 1), i as u64)))
                .collect();
            for r in results {
                let r = r?;
                for (a, g) in acc.iter_mut().zip(&r.grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
                losses[0] += r.total;
                losses[1] += r.regression;
                losses[2] += r.confidence;
            }
        }
        let n = indices.len() as f64;
        for a in &mut acc {
            for x in a.data_mut() {
                *x /= n;
            }
        }
        Ok((acc, losses.map(|l| l / n)))
    }

    /// One optimizer step on `indices`; `step` counts from zero over the run.
    pub fn train_step(
        &mut self,
        data: &[Scenario],
        indices: &[usize],
        epoch: usize,
        step: usize,
        total_steps: usize,
    ) -> Result<[f64; 3], TrainingError> {
        let diverged = |reason: String| TrainingError::Divergence { epoch, batch: step, reason };
        let (mut grads, losses) = match self.batch(data, indices, epoch) {
            Ok(r) => r,
            Err(e) if is_numeric_failure(&e) => return Err(diverged(e.to_string())),
            Err(e) => return Err(e),
        };
        clip_global_norm(&mut grads, self.config.grad_clip);
        let lr = cosine_lr(step as u64, total_steps as u64, self.config.lr)?;
        match self.optimizer.step(&mut self.model.params, &grads, lr) {
            Ok(()) => Ok(losses),
            Err(e @ NumericsError::NonFiniteGradient(_)) => Err(diverged(e.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    /// Train one epoch over `data`; returns the loss part of its log row.
    pub fn run_epoch(&mut self, data: &[Scenario]) -> Result<EpochLog, TrainingError> {
        if data.is_empty() {
            return Err(TrainingError::InvalidArgument("empty training set".into()));
        }
        if self.epoch >= self.config.epochs {
            return Err(TrainingError::InvalidArgument(format!(
                "all {} epochs already completed",
                self.config.epochs
            )));
        }
        let epoch = self.epoch;
        let per_epoch = self.batches_per_epoch(data.len());
        let total = self.total_steps(data.len());
        let order = self.epoch_order(epoch, data.len());
        let mut sums = [0.0; 3];
        for (b, indices) in order.chunks(self.config.batch_size).enumerate() {
            let losses = self.train_step(data, indices, epoch, epoch * per_epoch + b, total)?;
            for (s, l) in sums.iter_mut().zip(losses) {
                *s += l * indices.len() as f64;
            }
        }
        let n = data.len() as f64;
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            train_loss: sums[0] / n,
            reg_loss: sums[1] / n,
            conf_loss: sums[2] / n,
            metrics: None,
        })
    }

    /// Train the remaining epochs. `eval` is scored every `eval_every`
    /// epochs and after the last one; `on_epoch` sees each finished epoch.
    pub fn fit<F>(&mut self, train: &[Scenario], eval: Option<&[Scenario]>, eval_every: usize, mut on_epoch: F) -> Result<(), TrainingError>
    where
        F: FnMut(&Trainer, &EpochLog) -> Result<(), TrainingError>,
    {
        while self.epoch < self.config.epochs {
            let mut row = self.run_epoch(train)?;
            let due = self.epoch == self.config.epochs || (eval_every > 0 && self.epoch.is_multiple_of(eval_every));
            if let (Some(eval), true) = (eval, due) {
                let records = eval_records(&self.model, eval, self.config.modes, self.config.rearrange, self.config.match_family)?;
                row.metrics = Some(evaluate(&records).map_err(|e| TrainingError::InvalidArgument(e.to_string()))?);
            }
            self.log.push(row.clone());
            on_epoch(self, &row)?;
        }
        Ok(())
    }
}

/// Evaluation-mode predictions for `scenarios` as metric records (global
/// frame); the scenario id is the position in `scenarios`.
pub fn eval_records(
    model: &Model,
    scenarios: &[Scenario],
    modes: usize,
    rearrange: bool,
    family: MatchFamily,
) -> Result<Vec<EvalRecord>, TrainingError> {
    scenarios
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            let p = model.predict(s, modes, rearrange)?;
            Ok(EvalRecord {
                scenario_id: id,
                trajectories: p.trajectories,
                confidences: p.confidences,
                truth: s.future.clone(),
                criterion: global_criterion(s, family, model.config.step_duration),
            })
        })
        .collect()
}
