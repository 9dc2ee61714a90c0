use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::OptionDistribution;
use crate::effects::{causal_effect, CausalEffectVector};
use crate::error::{Error, Result};
use crate::model::ResponseModel;
use crate::seed::stream_rng;
use crate::surrogate::model::{shapes, Checkpoint};
use crate::surrogate::SurrogateModel;
use crate::survey::{AttributeSchema, Dataset, EditContext, Level, Persona, Question, RespondentRecord};

/// How answers are drawn inside each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Independent categorical draws.
    #[default]
    Random,
    /// Per-cell counts fixed to the largest-remainder rounding of
    /// `cell_size * p`, assigned to respondents in shuffled order.
    Quota,
}

/// Ranges used when drawing a random ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectDesign {
    /// Per-option level-1 logit effects have magnitude in `[min_magnitude, max_magnitude]`
    /// with a random sign; level-0 effects are zero.
    pub min_magnitude: f64,
    pub max_magnitude: f64,
    /// Base logits are uniform in `[-base_scale, base_scale]`.
    pub base_scale: f64,
    /// Country logits are uniform in `[-country_scale, country_scale]`.
    pub country_scale: f64,
}

impl Default for EffectDesign {
    fn default() -> Self {
        Self { min_magnitude: 0.1, max_magnitude: 0.8, base_scale: 1.0, country_scale: 0.5 }
    }
}

/// A full-factorial synthetic survey with a known generating model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub questions: Vec<Question>,
    pub countries: Vec<String>,
    /// Generating logits; a surrogate with the true parameters.
    pub truth: SurrogateModel,
    /// Respondents per (country, full attribute combination).
    pub cell_size: usize,
    pub seed: u64,
    pub sampling: Sampling,
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    questions: Vec<Question>,
    countries: Vec<String>,
    cell_size: usize,
    seed: u64,
    #[serde(default)]
    sampling: Sampling,
    truth: Checkpoint,
}

impl SyntheticSpec {
    pub fn new(
        questions: Vec<Question>,
        countries: Vec<String>,
        truth: SurrogateModel,
        cell_size: usize,
        seed: u64,
        sampling: Sampling,
    ) -> Result<Self> {
        let spec = Self { questions, countries, truth, cell_size, seed, sampling };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.cell_size < 1 {
            return Err(Error::invalid("cell_size must be at least 1"));
        }
        crate::survey::validate_catalog(&self.questions)?;
        if self.truth.questions() != shapes(&self.questions).as_slice() {
            return Err(Error::invalid("truth model questions differ from the catalog"));
        }
        if self.truth.countries() != self.countries.as_slice() {
            return Err(Error::invalid("truth model countries differ from the spec"));
        }
        Ok(())
    }

    /// Draws a random ground truth from `design` using the `effects` stream of `seed`.
    pub fn random(
        schema: &AttributeSchema,
        questions: Vec<Question>,
        countries: Vec<String>,
        design: EffectDesign,
        cell_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0 <= design.min_magnitude && design.min_magnitude <= design.max_magnitude) {
            return Err(Error::invalid("effect magnitudes must satisfy 0 <= min <= max"));
        }
        let mut truth = SurrogateModel::zeros(schema, &shapes(&questions), &countries)?;
        let mut rng = stream_rng(seed, "effects");
        for q in &questions {
            for b in truth.base_mut(&q.id)? {
                *b = rng.random_range(-1.0..=1.0) * design.base_scale;
            }
            for c in &countries {
                for w in truth.country_mut(&q.id, c)? {
                    *w = rng.random_range(-1.0..=1.0) * design.country_scale;
                }
            }
            for a in schema.names() {
                for w in truth.attribute_mut(&q.id, a, Level::One)? {
                    let magnitude = rng.random_range(design.min_magnitude..=design.max_magnitude);
                    *w = if rng.random_bool(0.5) { magnitude } else { -magnitude };
                }
            }
        }
        Self::new(questions, countries, truth, cell_size, seed, Sampling::Random)
    }

    pub fn schema(&self) -> &AttributeSchema {
        self.truth.schema()
    }

    pub fn to_json(&self) -> String {
        let file = SpecFile {
            questions: self.questions.clone(),
            countries: self.countries.clone(),
            cell_size: self.cell_size,
            seed: self.seed,
            sampling: self.sampling,
            truth: self.truth.to_checkpoint(BTreeMap::new()),
        };
        serde_json::to_string_pretty(&file).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpecFile = serde_json::from_str(text)?;
        let truth = SurrogateModel::from_checkpoint(&file.truth)?;
        Self::new(file.questions, file.countries, truth, file.cell_size, file.seed, file.sampling)
    }
}

/// Closed-form quantities of a synthetic population.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    truth: SurrogateModel,
}

impl SyntheticOracle {
    pub fn truth(&self) -> &SurrogateModel {
        &self.truth
    }

    /// Population distribution of a (possibly partial) persona: the equal-weight
    /// mixture of the generating distributions of its matching full cells.
    pub fn subgroup_distribution(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        let schema = self.truth.schema();
        let pattern = schema.pattern(persona)?;
        let mut acc: Option<Vec<f64>> = None;
        let mut cells = 0usize;
        for mask in 0..schema.cell_count() {
            if !pattern.matches(mask) {
                continue;
            }
            let p = self.truth.predict(&schema.full_persona(&persona.country, mask), question_id)?;
            let acc = acc.get_or_insert_with(|| vec![0.0; p.len()]);
            for (a, v) in acc.iter_mut().zip(p.probs()) {
                *a += v;
            }
            cells += 1;
        }
        let acc = acc.expect("every pattern matches at least one cell");
        OptionDistribution::from_weights(&acc.iter().map(|a| a / cells as f64).collect::<Vec<_>>())
    }

    /// Ground-truth effect of an edit (both endpoints are full cells).
    pub fn effect(&self, context: &EditContext) -> Result<CausalEffectVector> {
        let (s1, s0) = context.endpoints();
        causal_effect(&self.truth.predict(&s1, &context.question_id)?, &self.truth.predict(&s0, &context.question_id)?)
    }
}

/// Largest-remainder rounding of `n * p`; leftover units go to the largest
/// fractional parts, lowest option first on ties.
fn quota_counts(p: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|pi| pi * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i + 1;
        }
    }
    p.len()
}

/// Samples `cell_size` respondents for every (country, full attribute combination).
///
/// Records are ordered by country (as listed), then cell mask, then respondent.
pub fn generate_population(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticOracle)> {
    spec.validate()?;
    let schema = spec.schema().clone();
    let mut rng = stream_rng(spec.seed, "generate");
    let mut records = Vec::with_capacity(spec.countries.len() * schema.cell_count() as usize * spec.cell_size);
    for country in &spec.countries {
        for mask in 0..schema.cell_count() {
            let persona = schema.full_persona(country, mask);
            let mut answers: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); spec.cell_size];
            for q in &spec.questions {
                let p = spec.truth.predict(&persona, &q.id)?;
                match spec.sampling {
                    Sampling::Random => {
                        for a in answers.iter_mut() {
                            a.insert(q.id.clone(), draw(p.probs(), rng.random::<f64>()));
                        }
                    }
                    Sampling::Quota => {
                        let mut pool: Vec<usize> = quota_counts(p.probs(), spec.cell_size)
                            .iter()
                            .enumerate()
                            .flat_map(|(i, &c)| std::iter::repeat_n(i + 1, c))
                            .collect();
                        pool.shuffle(&mut rng);
                        for (a, option) in answers.iter_mut().zip(pool) {
                            a.insert(q.id.clone(), option);
                        }
                    }
                }
            }
            records.extend(answers.into_iter().map(|answers| RespondentRecord {
                country: country.clone(),
                attribute_values: persona.assignments.clone(),
                answers,
                weight: 1.0,
            }));
        }
    }
    let dataset = Dataset::new(schema, spec.questions.clone(), records)?;
    Ok((dataset, SyntheticOracle { truth: spec.truth.clone() }))
}

/// Moves every edit that has a held-out full combination as an endpoint to
/// the test side; held-out combinations apply in every country.
pub fn holdout_split(
    schema: &AttributeSchema,
    contexts: &[EditContext],
    held_out: &[BTreeMap<String, Level>],
) -> Result<(Vec<EditContext>, Vec<EditContext>)> {
    let masks = held_out.iter().map(|h| schema.mask_of(h)).collect::<Result<Vec<_>>>()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ctx in contexts {
        let (s1, s0) = ctx.endpoints();
        let m1 = schema.mask_of(&s1.assignments)?;
        let m0 = schema.mask_of(&s0.assignments)?;
        if masks.iter().any(|&h| h == m1 || h == m0) {
            test.push(ctx.clone());
        } else {
            train.push(ctx.clone());
        }
    }
    Ok((train, test))
}
