use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DifferentiableModel;
use crate::objective::{loss_gradients, LossConfig, Schedule, TrainingSet};
use crate::seed::stream_rng;
use crate::surrogate::SurrogateModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Passes over the edit set in the anchoring stage.
    pub epochs_stage1: usize,
    /// Passes over the edit set in the effect-alignment stage.
    pub epochs_stage2: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Mini-batch size in edits; `None` takes one full-batch step per epoch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs_stage1: 300,
            epochs_stage2: 1500,
            seed: 0,
            optimizer: Optimizer::Adam,
            batch_size: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs_stage1 == 0 && self.epochs_stage2 == 0 {
            return Err(Error::invalid("at least one training epoch is required"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub stage: u8,
    pub anchor: f64,
    pub ce: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SurrogateModel,
    /// Parameters at the end of the first stage (the anchor-only checkpoint
    /// under the sequential schedule).
    pub stage1_model: SurrogateModel,
    pub curve: Vec<CurvePoint>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Runs the two-stage schedule (or a joint schedule) from `model`.
///
/// The trainer only ever sees `set`; held-out edits must be split off before.
/// Optimizer state is reset at the stage boundary.
pub fn train(
    model: SurrogateModel,
    set: &TrainingSet,
    loss: &LossConfig,
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    loss.validate()?;
    config.validate()?;
    let stages: [(u8, LossConfig, usize); 2] = match loss.schedule {
        Schedule::Sequential => [
            (1, loss.with_weights(1.0, 0.0), config.epochs_stage1),
            (2, loss.with_weights(0.0, 1.0), config.epochs_stage2),
        ],
        Schedule::Joint => [(1, *loss, config.epochs_stage1), (2, *loss, config.epochs_stage2)],
    };
    let mut rng = stream_rng(config.seed, "train");
    let mut model = model;
    let mut stage1_model = model.clone();
    let mut curve = Vec::new();
    let mut step = 0;
    let all: Vec<usize> = (0..set.len()).collect();
    for (stage, stage_loss, epochs) in stages {
        let mut adam = Adam::new(model.parameters().len());
        for _ in 0..epochs {
            let batches: Vec<TrainingSet> = match config.batch_size {
                None => vec![set.clone()],
                Some(size) => {
                    let mut order = all.clone();
                    order.shuffle(&mut rng);
                    order.chunks(size).map(|c| set.select(c)).collect::<Result<_>>()?
                }
            };
            for batch in &batches {
                let report = match loss_gradients(&model, batch, &stage_loss) {
                    Ok(report) => report,
                    Err(Error::InvalidDistribution(reason)) => {
                        return Err(Error::Diverged { stage, step, detail: format!("model output invalid: {reason}") })
                    }
                    Err(e) => return Err(e),
                };
                let total = report.total(&stage_loss);
                if !total.is_finite() || report.gradient.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged {
                        stage,
                        step,
                        detail: format!("loss={total}, anchor={}, ce={}", report.anchor_loss, report.ce_loss),
                    });
                }
                curve.push(CurvePoint { step, stage, anchor: report.anchor_loss, ce: report.ce_loss, total });
                match config.optimizer {
                    Optimizer::Adam => adam.step(model.parameters_mut(), &report.gradient, config.learning_rate),
                    Optimizer::GradientDescent => {
                        for (p, g) in model.parameters_mut().iter_mut().zip(&report.gradient) {
                            *p -= config.learning_rate * g;
                        }
                    }
                }
                if model.parameters().iter().any(|p| !p.is_finite()) {
                    return Err(Error::Diverged { stage, step, detail: "parameters became non-finite".into() });
                }
                step += 1;
            }
        }
        if stage == 1 {
            stage1_model = model.clone();
        }
    }
    Ok(TrainOutcome { model, stage1_model, curve })
}

/// Writes the loss curve as `step,stage,anchor,ce,total`.
pub fn write_loss_curve<W: Write>(curve: &[CurvePoint], preamble: &[String], mut sink: W) -> Result<()> {
    for line in preamble {
        writeln!(sink, "# {line}")?;
    }
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["step", "stage", "anchor", "ce", "total"])?;
    for p in curve {
        writer.write_record([
            p.step.to_string(),
            p.stage.to_string(),
            p.anchor.to_string(),
            p.ce.to_string(),
            p.total.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
