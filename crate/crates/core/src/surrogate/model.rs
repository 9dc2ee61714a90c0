use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::distribution::OptionDistribution;
use crate::error::{Error, Result};
use crate::model::{DifferentiableModel, ResponseModel};
use crate::seed::sha256_hex;
use crate::survey::{AttributeSchema, Dataset, Level, Persona, Question};

const CHECKPOINT_FORMAT: &str = "effalign-surrogate/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionShape {
    pub id: String,
    pub k: usize,
}

/// Additive-in-logits response model.
///
/// For persona `s` on question `q` the logits are
/// `base[q] + country[q][s.country] + sum over assigned a of attr[q][a][s(a)]`,
/// so unassigned attributes contribute nothing and one model serves every
/// granularity.
///
/// Parameters live in one flat vector; each question owns a contiguous block
/// laid out as `base, (attr0 level0, attr0 level1, ...), country0, country1, ...`,
/// each row of length K.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    schema: AttributeSchema,
    questions: Vec<QuestionShape>,
    countries: Vec<String>,
    question_index: HashMap<String, usize>,
    country_index: HashMap<String, usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl SurrogateModel {
    /// All-zero parameters: uniform predictions everywhere.
    pub fn zeros(schema: &AttributeSchema, questions: &[QuestionShape], countries: &[String]) -> Result<Self> {
        if questions.is_empty() || countries.is_empty() {
            return Err(Error::invalid("a surrogate needs at least one question and one country"));
        }
        let mut question_index = HashMap::new();
        let mut offsets = Vec::with_capacity(questions.len());
        let rows = 1 + 2 * schema.len() + countries.len();
        let mut total = 0;
        for (i, q) in questions.iter().enumerate() {
            if q.k < 2 {
                return Err(Error::invalid(format!("question `{}` needs at least 2 options", q.id)));
            }
            if question_index.insert(q.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate question `{}`", q.id)));
            }
            offsets.push(total);
            total += rows * q.k;
        }
        let mut country_index = HashMap::new();
        for (i, c) in countries.iter().enumerate() {
            if country_index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate country `{c}`")));
            }
        }
        Ok(Self {
            schema: schema.clone(),
            questions: questions.to_vec(),
            countries: countries.to_vec(),
            question_index,
            country_index,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Zero model covering every question and country of `dataset`.
    pub fn for_dataset(dataset: &Dataset) -> Result<Self> {
        Self::zeros(dataset.schema(), &shapes(dataset.questions()), &dataset.countries())
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn questions(&self) -> &[QuestionShape] {
        &self.questions
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    fn question(&self, id: &str) -> Result<(usize, usize)> {
        let qi = *self.question_index.get(id).ok_or_else(|| Error::UnknownQuestion(id.to_string()))?;
        Ok((self.offsets[qi], self.questions[qi].k))
    }

    fn attribute_row(&self, offset: usize, k: usize, attribute: usize, level: Level) -> usize {
        offset + k * (1 + 2 * attribute + level.as_u8() as usize)
    }

    fn country_row(&self, offset: usize, k: usize, country: usize) -> usize {
        offset + k * (1 + 2 * self.schema.len() + country)
    }

    /// Start offsets of every parameter row contributing to the logits of `(persona, q)`.
    fn rows(&self, persona: &Persona, question_id: &str) -> Result<(usize, Vec<usize>)> {
        let (offset, k) = self.question(question_id)?;
        let ci = *self
            .country_index
            .get(&persona.country)
            .ok_or_else(|| Error::UnknownCountry(persona.country.clone()))?;
        let mut rows = Vec::with_capacity(2 + persona.assignments.len());
        rows.push(offset);
        rows.push(self.country_row(offset, k, ci));
        for (name, level) in &persona.assignments {
            let ai = self.schema.index_of(name).ok_or_else(|| Error::UnknownAttribute(name.clone()))?;
            rows.push(self.attribute_row(offset, k, ai, *level));
        }
        Ok((k, rows))
    }

    pub fn base(&self, question_id: &str) -> Result<&[f64]> {
        let (o, k) = self.question(question_id)?;
        Ok(&self.params[o..o + k])
    }

    pub fn base_mut(&mut self, question_id: &str) -> Result<&mut [f64]> {
        let (o, k) = self.question(question_id)?;
        Ok(&mut self.params[o..o + k])
    }

    pub fn attribute(&self, question_id: &str, attribute: &str, level: Level) -> Result<&[f64]> {
        let (o, k) = self.question(question_id)?;
        let ai = self.schema.index_of(attribute).ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))?;
        let r = self.attribute_row(o, k, ai, level);
        Ok(&self.params[r..r + k])
    }

    pub fn attribute_mut(&mut self, question_id: &str, attribute: &str, level: Level) -> Result<&mut [f64]> {
        let (o, k) = self.question(question_id)?;
        let ai = self.schema.index_of(attribute).ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))?;
        let r = self.attribute_row(o, k, ai, level);
        Ok(&mut self.params[r..r + k])
    }

    pub fn country(&self, question_id: &str, country: &str) -> Result<&[f64]> {
        let (o, k) = self.question(question_id)?;
        let ci = *self.country_index.get(country).ok_or_else(|| Error::UnknownCountry(country.to_string()))?;
        let r = self.country_row(o, k, ci);
        Ok(&self.params[r..r + k])
    }

    pub fn country_mut(&mut self, question_id: &str, country: &str) -> Result<&mut [f64]> {
        let (o, k) = self.question(question_id)?;
        let ci = *self.country_index.get(country).ok_or_else(|| Error::UnknownCountry(country.to_string()))?;
        let r = self.country_row(o, k, ci);
        Ok(&mut self.params[r..r + k])
    }

    pub fn to_checkpoint(&self, metadata: BTreeMap<String, String>) -> Checkpoint {
        let tables = self
            .questions
            .iter()
            .map(|q| {
                let attributes = self
                    .schema
                    .names()
                    .map(|a| {
                        let table = LevelTable {
                            level0: self.attribute(&q.id, a, Level::Zero).unwrap().to_vec(),
                            level1: self.attribute(&q.id, a, Level::One).unwrap().to_vec(),
                        };
                        (a.to_string(), table)
                    })
                    .collect();
                let countries =
                    self.countries.iter().map(|c| (c.clone(), self.country(&q.id, c).unwrap().to_vec())).collect();
                let table = QuestionTable { base: self.base(&q.id).unwrap().to_vec(), attributes, countries };
                (q.id.clone(), table)
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            schema_hash: schema_hash(&self.schema),
            question_hash: question_hash(&self.questions),
            metadata,
            schema: self.schema.clone(),
            questions: self.questions.clone(),
            countries: self.countries.clone(),
            tables,
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", checkpoint.format)));
        }
        if checkpoint.schema_hash != schema_hash(&checkpoint.schema) {
            return Err(Error::Checkpoint("schema hash does not match the embedded schema".into()));
        }
        if checkpoint.question_hash != question_hash(&checkpoint.questions) {
            return Err(Error::Checkpoint("question hash does not match the embedded questions".into()));
        }
        let mut model = Self::zeros(&checkpoint.schema, &checkpoint.questions, &checkpoint.countries)?;
        for q in &checkpoint.questions {
            let table = checkpoint
                .tables
                .get(&q.id)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter table for `{}`", q.id)))?;
            copy_row(model.base_mut(&q.id)?, &table.base, &q.id)?;
            for a in checkpoint.schema.names() {
                let levels = table
                    .attributes
                    .get(a)
                    .ok_or_else(|| Error::Checkpoint(format!("missing attribute `{a}` for `{}`", q.id)))?;
                copy_row(model.attribute_mut(&q.id, a, Level::Zero)?, &levels.level0, &q.id)?;
                copy_row(model.attribute_mut(&q.id, a, Level::One)?, &levels.level1, &q.id)?;
            }
            for c in &checkpoint.countries {
                let row = table
                    .countries
                    .get(c)
                    .ok_or_else(|| Error::Checkpoint(format!("missing country `{c}` for `{}`", q.id)))?;
                copy_row(model.country_mut(&q.id, c)?, row, &q.id)?;
            }
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, BTreeMap<String, String>)> {
        let checkpoint: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_checkpoint(&checkpoint)?, checkpoint.metadata))
    }

    /// Errors unless the model covers the dataset's schema and questions.
    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        if &self.schema != dataset.schema() {
            return Err(Error::Checkpoint("model schema differs from the dataset schema".into()));
        }
        for q in dataset.questions() {
            let (_, k) = self.question(&q.id)?;
            if k != q.k() {
                return Err(Error::Checkpoint(format!("question `{}` has {} options in the model", q.id, k)));
            }
        }
        Ok(())
    }
}

fn copy_row(dst: &mut [f64], src: &[f64], qid: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!("row for `{qid}` has {} entries, expected {}", src.len(), dst.len())));
    }
    dst.copy_from_slice(src);
    Ok(())
}

pub fn shapes(questions: &[Question]) -> Vec<QuestionShape> {
    questions.iter().map(|q| QuestionShape { id: q.id.clone(), k: q.k() }).collect()
}

pub fn schema_hash(schema: &AttributeSchema) -> String {
    sha256_hex(serde_json::to_string(schema).expect("schema serializes").as_bytes())
}

pub fn question_hash(questions: &[QuestionShape]) -> String {
    sha256_hex(serde_json::to_string(questions).expect("questions serialize").as_bytes())
}

/// Serialized form of a [`SurrogateModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema_hash: String,
    pub question_hash: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub schema: AttributeSchema,
    pub questions: Vec<QuestionShape>,
    pub countries: Vec<String>,
    pub tables: BTreeMap<String, QuestionTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTable {
    pub base: Vec<f64>,
    pub attributes: BTreeMap<String, LevelTable>,
    pub countries: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub level0: Vec<f64>,
    pub level1: Vec<f64>,
}

impl ResponseModel for SurrogateModel {
    fn predict(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        OptionDistribution::softmax(&self.logits(persona, question_id)?)
    }
}

impl DifferentiableModel for SurrogateModel {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, persona: &Persona, question_id: &str) -> Result<Vec<f64>> {
        let (k, rows) = self.rows(persona, question_id)?;
        let mut z = vec![0.0; k];
        for r in rows {
            for (zj, w) in z.iter_mut().zip(&self.params[r..r + k]) {
                *zj += w;
            }
        }
        Ok(z)
    }

    fn backprop_logits(&self, persona: &Persona, question_id: &str, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        let (k, rows) = self.rows(persona, question_id)?;
        if upstream.len() != k {
            return Err(Error::LengthMismatch { expected: k, actual: upstream.len() });
        }
        for r in rows {
            for (g, u) in grad[r..r + k].iter_mut().zip(upstream) {
                *g += u;
            }
        }
        Ok(())
    }
}
