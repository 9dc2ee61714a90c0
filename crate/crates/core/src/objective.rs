//! Anchoring loss, causal-effect alignment loss, their weighted combination,
//! and analytic gradients through the softmax.

use serde::{Deserialize, Serialize};

use crate::distribution::OptionDistribution;
use crate::effects::{causal_effect, cdf_distance, data_effect, CausalEffectVector};
use crate::error::{Error, Result};
use crate::model::{DifferentiableModel, ResponseModel};
use crate::survey::{Dataset, EditContext, Persona};

/// Probabilities below this are clamped before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub const DEFAULT_EPSILON_SMOOTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Optimize `alpha * anchor + beta * ce` throughout.
    Joint,
    /// Anchor only (alpha=1, beta=0), then effect alignment only (alpha=0, beta=1).
    #[default]
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_epsilon")]
    pub epsilon_smooth: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_SMOOTH
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, schedule: Schedule::Sequential, epsilon_smooth: DEFAULT_EPSILON_SMOOTH }
    }
}

impl LossConfig {
    pub fn weighted(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self { alpha, beta, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn anchor_only() -> Self {
        Self { alpha: 1.0, beta: 0.0, ..Self::default() }
    }

    pub fn effects_only() -> Self {
        Self { alpha: 0.0, beta: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::invalid("alpha and beta must be nonnegative with a positive sum"));
        }
        if !(self.epsilon_smooth > 0.0 && self.epsilon_smooth.is_finite()) {
            return Err(Error::invalid("epsilon_smooth must be a small positive number"));
        }
        Ok(())
    }

    /// Copy with the objective weights replaced, keeping the smoothing.
    pub fn with_weights(&self, alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, ..*self }
    }
}

/// Everything the objectives need about one edit, precomputed from the survey.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTarget {
    pub context: EditContext,
    pub treated: Persona,
    pub untreated: Persona,
    pub data_effect: CausalEffectVector,
    pub treated_mode: usize,
    pub untreated_mode: usize,
}

/// The set of valid edits with their survey targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    targets: Vec<ContextTarget>,
}

impl TrainingSet {
    pub fn build(dataset: &Dataset, contexts: &[EditContext]) -> Result<Self> {
        let targets = contexts
            .iter()
            .map(|ctx| {
                let (treated, untreated) = ctx.endpoints();
                Ok(ContextTarget {
                    data_effect: data_effect(dataset, ctx)?,
                    treated_mode: dataset.empirical_mode(&treated, &ctx.question_id)?,
                    untreated_mode: dataset.empirical_mode(&untreated, &ctx.question_id)?,
                    treated,
                    untreated,
                    context: ctx.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_targets(targets)
    }

    pub fn from_targets(targets: Vec<ContextTarget>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::invalid("the set of edit contexts is empty"));
        }
        Ok(Self { targets })
    }

    pub fn targets(&self) -> &[ContextTarget] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn contexts(&self) -> impl Iterator<Item = &EditContext> {
        self.targets.iter().map(|t| &t.context)
    }

    /// Subset by position, preserving order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::from_targets(indices.iter().map(|&i| self.targets[i].clone()).collect())
    }
}

/// Negative log-probability of the modal survey answer (1-based `mode`).
pub fn anchor_loss(model_dist: &OptionDistribution, mode: usize) -> Result<f64> {
    if !(1..=model_dist.len()).contains(&mode) {
        return Err(Error::invalid(format!("mode {mode} is outside 1..={}", model_dist.len())));
    }
    Ok(-model_dist.prob(mode).max(PROBABILITY_FLOOR).ln())
}

/// Mean CDF distance between paired model and data effects.
pub fn ce_loss(model_effects: &[CausalEffectVector], data_effects: &[CausalEffectVector]) -> Result<f64> {
    if model_effects.len() != data_effects.len() {
        return Err(Error::LengthMismatch { expected: data_effects.len(), actual: model_effects.len() });
    }
    if model_effects.is_empty() {
        return Err(Error::invalid("no effects to compare"));
    }
    let distances =
        model_effects.iter().zip(data_effects).map(|(m, d)| cdf_distance(m, d)).collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&distances) / distances.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextDistance {
    pub context: EditContext,
    pub d_cdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub alpha: f64,
    pub beta: f64,
    pub anchor_loss: f64,
    pub ce_loss: f64,
    pub total: f64,
    /// Anchor terms whose probability hit [`PROBABILITY_FLOOR`].
    pub floored_terms: usize,
    pub per_context: Vec<ContextDistance>,
}

/// Evaluates both objectives over every edit in `set`.
///
/// The anchor loss averages over both endpoints of every edit (2|D| terms).
pub fn total_loss<M: ResponseModel + ?Sized>(model: &M, set: &TrainingSet, config: &LossConfig) -> Result<LossReport> {
    config.validate()?;
    let mut anchors = Vec::with_capacity(2 * set.len());
    let mut distances = Vec::with_capacity(set.len());
    let mut per_context = Vec::with_capacity(set.len());
    let mut floored_terms = 0;
    for t in set.targets() {
        let q = &t.context.question_id;
        let p1 = model.predict(&t.treated, q)?;
        let p0 = model.predict(&t.untreated, q)?;
        for (p, mode) in [(&p1, t.treated_mode), (&p0, t.untreated_mode)] {
            if p.prob(mode) < PROBABILITY_FLOOR {
                floored_terms += 1;
            }
            anchors.push(anchor_loss(p, mode)?);
        }
        let d = cdf_distance(&causal_effect(&p1, &p0)?, &t.data_effect)?;
        distances.push(d);
        per_context.push(ContextDistance { context: t.context.clone(), d_cdf: d });
    }
    let anchor = pairwise_sum(&anchors) / anchors.len() as f64;
    let ce = pairwise_sum(&distances) / distances.len() as f64;
    Ok(LossReport {
        alpha: config.alpha,
        beta: config.beta,
        anchor_loss: anchor,
        ce_loss: ce,
        total: config.alpha * anchor + config.beta * ce,
        floored_terms,
        per_context,
    })
}

/// Analytic gradient of the smoothed objective plus the loss values at the
/// same parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    /// Value of the objective the gradient belongs to (|x| smoothed).
    pub objective: f64,
    pub anchor_loss: f64,
    pub ce_loss: f64,
}

impl GradientReport {
    pub fn total(&self, config: &LossConfig) -> f64 {
        config.alpha * self.anchor_loss + config.beta * self.ce_loss
    }
}

fn smooth_abs(x: f64, eps: f64) -> f64 {
    x.hypot(eps)
}

fn smooth_abs_slope(x: f64, eps: f64) -> f64 {
    x / x.hypot(eps)
}

/// The differentiable surrogate of [`total_loss`]: identical except that each
/// `|x|` in the CDF distance is replaced by `sqrt(x^2 + eps^2)`.
pub fn smoothed_objective<M: ResponseModel + ?Sized>(model: &M, set: &TrainingSet, config: &LossConfig) -> Result<f64> {
    config.validate()?;
    let mut anchors = Vec::with_capacity(2 * set.len());
    let mut distances = Vec::with_capacity(set.len());
    for t in set.targets() {
        let q = &t.context.question_id;
        let p1 = model.predict(&t.treated, q)?;
        let p0 = model.predict(&t.untreated, q)?;
        anchors.push(anchor_loss(&p1, t.treated_mode)?);
        anchors.push(anchor_loss(&p0, t.untreated_mode)?);
        let ce = causal_effect(&p1, &p0)?;
        let k = ce.len();
        let (mut cm, mut cd, mut sum) = (0.0, 0.0, 0.0);
        for (m, d) in ce.values().iter().zip(t.data_effect.values()) {
            cm += m;
            cd += d;
            sum += smooth_abs(cm - cd, config.epsilon_smooth);
        }
        distances.push(sum / k as f64);
    }
    let anchor = pairwise_sum(&anchors) / anchors.len() as f64;
    let ce = pairwise_sum(&distances) / distances.len() as f64;
    Ok(config.alpha * anchor + config.beta * ce)
}

/// `J^T g` for the softmax Jacobian `J = diag(p) - p p^T`.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Analytic gradient of the (smoothed) weighted objective with respect to the
/// model parameters. Contexts are visited in a fixed order so the result is
/// bitwise reproducible.
pub fn loss_gradients<M: DifferentiableModel + ?Sized>(
    model: &M,
    set: &TrainingSet,
    config: &LossConfig,
) -> Result<GradientReport> {
    config.validate()?;
    let n = set.len() as f64;
    let mut gradient = vec![0.0; model.parameters().len()];
    let mut anchors = Vec::with_capacity(2 * set.len());
    let mut exact = Vec::with_capacity(set.len());
    let mut smoothed = Vec::with_capacity(set.len());
    let anchor_coef = config.alpha / (2.0 * n);
    for t in set.targets() {
        let q = &t.context.question_id;
        let p1 = model.predict(&t.treated, q)?;
        let p0 = model.predict(&t.untreated, q)?;
        let k = p1.len();
        let mut dz1 = vec![0.0; k];
        let mut dz0 = vec![0.0; k];

        for (p, mode, dz) in [(&p1, t.treated_mode, &mut dz1), (&p0, t.untreated_mode, &mut dz0)] {
            anchors.push(anchor_loss(p, mode)?);
            // d(-ln p_m)/dz = p - e_m; zero once the floor is active.
            if anchor_coef != 0.0 && p.prob(mode) >= PROBABILITY_FLOOR {
                for (j, pj) in p.probs().iter().enumerate() {
                    dz[j] += anchor_coef * (pj - if j + 1 == mode { 1.0 } else { 0.0 });
                }
            }
        }

        let data = t.data_effect.values();
        if data.len() != k {
            return Err(Error::LengthMismatch { expected: data.len(), actual: k });
        }
        let mut slopes = vec![0.0; k];
        let (mut cm, mut cd, mut exact_sum, mut smooth_sum) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..k {
            cm += p1.probs()[j] - p0.probs()[j];
            cd += data[j];
            let delta = cm - cd;
            exact_sum += delta.abs();
            smooth_sum += smooth_abs(delta, config.epsilon_smooth);
            slopes[j] = smooth_abs_slope(delta, config.epsilon_smooth);
        }
        exact.push(exact_sum / k as f64);
        smoothed.push(smooth_sum / k as f64);

        if config.beta != 0.0 {
            // d d_cdf / d p1_i = (1/K) sum_{j >= i} slope_j, and the negative for p0.
            let coef = config.beta / (n * k as f64);
            let mut suffix = 0.0;
            let mut g1 = vec![0.0; k];
            for j in (0..k).rev() {
                suffix += slopes[j];
                g1[j] = coef * suffix;
            }
            let g0: Vec<f64> = g1.iter().map(|g| -g).collect();
            for (dz, extra) in dz1.iter_mut().zip(softmax_backward(p1.probs(), &g1)) {
                *dz += extra;
            }
            for (dz, extra) in dz0.iter_mut().zip(softmax_backward(p0.probs(), &g0)) {
                *dz += extra;
            }
        }

        model.backprop_logits(&t.treated, q, &dz1, &mut gradient)?;
        model.backprop_logits(&t.untreated, q, &dz0, &mut gradient)?;
    }
    let anchor_loss = pairwise_sum(&anchors) / anchors.len() as f64;
    let ce_loss = pairwise_sum(&exact) / n;
    let objective = config.alpha * anchor_loss + config.beta * pairwise_sum(&smoothed) / n;
    Ok(GradientReport { gradient, objective, anchor_loss, ce_loss })
}

/// Relative-error floor for near-zero gradient entries.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub parameters: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Compares [`loss_gradients`] with central finite differences of
/// [`smoothed_objective`] for every parameter.
pub fn gradient_check<M: DifferentiableModel + Clone>(
    model: &M,
    set: &TrainingSet,
    config: &LossConfig,
    step: f64,
) -> Result<GradCheck> {
    let analytic = loss_gradients(model, set, config)?.gradient;
    let mut probe = model.clone();
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst_parameter: 0,
        analytic: 0.0,
        numeric: 0.0,
        parameters: analytic.len(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.parameters()[i];
        probe.parameters_mut()[i] = original + step;
        let up = smoothed_objective(&probe, set, config)?;
        probe.parameters_mut()[i] = original - step;
        let down = smoothed_objective(&probe, set, config)?;
        probe.parameters_mut()[i] = original;
        let numeric = (up - down) / (2.0 * step);
        let rel = relative_error(a, numeric);
        if rel > worst.max_relative_error || i == 0 {
            worst = GradCheck { max_relative_error: rel, worst_parameter: i, analytic: a, numeric, ..worst };
        }
    }
    Ok(worst)
}

/// Sum by recursive halving; fixed association order for a given length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
