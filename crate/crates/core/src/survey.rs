//! Survey data model: binary attribute schema, questions, personas,
//! respondent records, and the indexed in-memory dataset.
//!
//! Option numbers are 1-based everywhere in the public API (they match the
//! survey file); vectors such as [`OptionDistribution`] are indexed from 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distribution::OptionDistribution;
use crate::error::{Error, Result};

/// Upper bound on schema size; cells are addressed by a `u32` bitmask.
pub const MAX_ATTRIBUTES: usize = 16;

/// Default minimum number of matched respondents on each side of an edit.
pub const DEFAULT_MIN_SUPPORT: usize = 10;

/// Level of a binary attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    Zero,
    One,
}

impl Level {
    pub fn flip(self) -> Self {
        match self {
            Level::Zero => Level::One,
            Level::One => Level::Zero,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Level::Zero => 0,
            Level::One => 1,
        }
    }

    pub fn is_one(self) -> bool {
        self == Level::One
    }

    pub const BOTH: [Level; 2] = [Level::Zero, Level::One];
}

impl TryFrom<u8> for Level {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            0 => Ok(Level::Zero),
            1 => Ok(Level::One),
            other => Err(Error::invalid(format!("attribute level must be 0 or 1, got {other}"))),
        }
    }
}

impl From<Level> for u8 {
    fn from(value: Level) -> Self {
        value.as_u8()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub level0: String,
    pub level1: String,
}

impl Attribute {
    pub fn new(name: &str, level0: &str, level1: &str) -> Self {
        Self { name: name.into(), level0: level0.into(), level1: level1.into() }
    }

    pub fn label(&self, level: Level) -> &str {
        match level {
            Level::Zero => &self.level0,
            Level::One => &self.level1,
        }
    }
}

/// Ordered set of binary attributes. Level 1 is the "treated" side of every
/// causal contrast, so the label assignment here fixes effect signs globally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    attributes: Vec<Attribute>,
}

impl TryFrom<SchemaFile> for AttributeSchema {
    type Error = Error;

    fn try_from(value: SchemaFile) -> Result<Self> {
        Self::new(value.attributes)
    }
}

impl From<AttributeSchema> for SchemaFile {
    fn from(value: AttributeSchema) -> Self {
        SchemaFile { attributes: value.attributes }
    }
}

impl Default for AttributeSchema {
    /// Gender, education, residence and marital status with
    /// Female / Not College Educated / Rural / Not Married as level 1.
    fn default() -> Self {
        Self::new(vec![
            Attribute::new("gender", "Male", "Female"),
            Attribute::new("education", "College Educated", "Not College Educated"),
            Attribute::new("residence", "Urban", "Rural"),
            Attribute::new("marital_status", "Married", "Not Married"),
        ])
        .expect("default schema is valid")
    }
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("at least one attribute is required".into()));
        }
        if attributes.len() > MAX_ATTRIBUTES {
            return Err(Error::Schema(format!("at most {MAX_ATTRIBUTES} attributes are supported")));
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if a.name.trim().is_empty() {
                return Err(Error::Schema("attribute names must be nonempty".into()));
            }
            if matches!(a.name.as_str(), "country" | "weight") {
                return Err(Error::Schema(format!("`{}` is a reserved column name", a.name)));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute `{}`", a.name)));
            }
        }
        Ok(Self { attributes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute(&self, name: &str) -> Result<&Attribute> {
        self.index_of(name)
            .map(|i| &self.attributes[i])
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Number of full attribute combinations (`2^M`).
    pub fn cell_count(&self) -> u32 {
        1 << self.attributes.len()
    }

    /// Bitmask of a complete assignment; bit `i` is set when attribute `i` is at level 1.
    pub fn mask_of(&self, values: &BTreeMap<String, Level>) -> Result<u32> {
        for name in values.keys() {
            self.attribute(name)?;
        }
        let mut mask = 0;
        for (i, a) in self.attributes.iter().enumerate() {
            match values.get(&a.name) {
                Some(Level::One) => mask |= 1 << i,
                Some(Level::Zero) => {}
                None => return Err(Error::invalid(format!("assignment is missing attribute `{}`", a.name))),
            }
        }
        Ok(mask)
    }

    /// Inverse of [`mask_of`](Self::mask_of).
    pub fn assignment_of(&self, mask: u32) -> BTreeMap<String, Level> {
        self.attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.clone(), if mask >> i & 1 == 1 { Level::One } else { Level::Zero }))
            .collect()
    }

    /// Complete assignment from one level label per attribute, e.g.
    /// `["Female", "College Educated", "Urban", "Married"]`, in any order.
    pub fn assignment_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<BTreeMap<String, Level>> {
        let mut out = BTreeMap::new();
        for label in labels {
            let label = label.as_ref();
            let hit = self.attributes.iter().find_map(|a| {
                Level::BOTH.into_iter().find(|&l| a.label(l) == label).map(|l| (a.name.clone(), l))
            });
            let (name, level) = hit.ok_or_else(|| Error::invalid(format!("no attribute has level label `{label}`")))?;
            if out.insert(name.clone(), level).is_some() {
                return Err(Error::invalid(format!("attribute `{name}` labelled twice")));
            }
        }
        self.mask_of(&out)?;
        Ok(out)
    }

    pub fn full_persona(&self, country: &str, mask: u32) -> Persona {
        Persona { country: country.to_string(), assignments: self.assignment_of(mask) }
    }

    pub(crate) fn pattern(&self, persona: &Persona) -> Result<Pattern> {
        let mut pattern = Pattern { care: 0, bits: 0 };
        for (name, level) in &persona.assignments {
            let i = self.index_of(name).ok_or_else(|| Error::UnknownAttribute(name.clone()))?;
            pattern.care |= 1 << i;
            if level.is_one() {
                pattern.bits |= 1 << i;
            }
        }
        Ok(pattern)
    }

    /// Every persona of granularity `g` for `country`: all attribute subsets of
    /// size `g` (in schema order) times all level assignments.
    pub fn personas_of_granularity(&self, country: &str, g: usize) -> Vec<Persona> {
        let m = self.len();
        let mut out = Vec::new();
        if g > m {
            return out;
        }
        for subset in 0u32..(1 << m) {
            if subset.count_ones() as usize != g {
                continue;
            }
            let members: Vec<usize> = (0..m).filter(|i| subset >> i & 1 == 1).collect();
            for levels in 0u32..(1 << g) {
                let assignments = members
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let level = if levels >> j & 1 == 1 { Level::One } else { Level::Zero };
                        (self.attributes[i].name.clone(), level)
                    })
                    .collect();
                out.push(Persona { country: country.to_string(), assignments });
            }
        }
        out
    }
}

/// Which cells a persona matches: `mask & care == bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pattern {
    pub care: u32,
    pub bits: u32,
}

impl Pattern {
    pub fn matches(self, mask: u32) -> bool {
        mask & self.care == self.bits
    }
}

/// An ordinal multiple-choice survey item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub topic: String,
    pub prompt_text: String,
    pub options: Vec<String>,
}

impl Question {
    pub fn k(&self) -> usize {
        self.options.len()
    }
}

/// Validates ids and option counts of a question catalog.
pub fn validate_catalog(questions: &[Question]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for q in questions {
        if q.id.trim().is_empty() {
            return Err(Error::Catalog("question ids must be nonempty".into()));
        }
        if q.k() < 2 {
            return Err(Error::Catalog(format!("question `{}` has {} options; need at least 2", q.id, q.k())));
        }
        if !ids.insert(q.id.as_str()) {
            return Err(Error::Catalog(format!("duplicate question id `{}`", q.id)));
        }
    }
    Ok(())
}

/// Reads a catalog: a JSON array of `{id, topic, prompt_text, options}`.
pub fn load_catalog(path: &Path) -> Result<Vec<Question>> {
    let text = std::fs::read_to_string(path)?;
    let questions: Vec<Question> = serde_json::from_str(&text)?;
    validate_catalog(&questions)?;
    Ok(questions)
}

/// A subgroup profile: a country plus a partial assignment of attributes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Persona {
    pub country: String,
    #[serde(default)]
    pub assignments: BTreeMap<String, Level>,
}

impl Persona {
    pub fn new(country: &str) -> Self {
        Self { country: country.to_string(), assignments: BTreeMap::new() }
    }

    pub fn with(mut self, attribute: &str, level: Level) -> Self {
        self.assignments.insert(attribute.to_string(), level);
        self
    }

    /// Number of specified attributes.
    pub fn granularity(&self) -> usize {
        self.assignments.len()
    }

    pub fn level(&self, attribute: &str) -> Option<Level> {
        self.assignments.get(attribute).copied()
    }

    /// Restricts the persona to `keep`, which must only name assigned attributes.
    pub fn project(&self, keep: &BTreeSet<String>) -> Result<Persona> {
        if let Some(missing) = keep.iter().find(|a| !self.assignments.contains_key(*a)) {
            return Err(Error::invalid(format!("cannot keep unassigned attribute `{missing}`")));
        }
        Ok(Persona {
            country: self.country.clone(),
            assignments: self
                .assignments
                .iter()
                .filter(|(k, _)| keep.contains(*k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        })
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.country)?;
        for (i, (name, level)) in self.assignments.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{name}={level}")?;
        }
        write!(f, "]")
    }
}

/// One survey respondent. Demographics are complete; answers may be partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub country: String,
    pub attribute_values: BTreeMap<String, Level>,
    /// Question id to 1-based option number.
    pub answers: BTreeMap<String, usize>,
    pub weight: f64,
}

/// Raw and weighted response counts for one persona on one question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupTable {
    pub persona: Persona,
    pub question_id: String,
    pub counts: Vec<f64>,
    pub respondent_count: usize,
}

/// How respondent weights enter subgroup distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Weighted,
    Unweighted,
}

/// Result of tabulating a persona on a question.
#[derive(Debug, Clone, PartialEq)]
pub enum Subgroup {
    Supported { distribution: OptionDistribution, respondent_count: usize },
    Empty,
}

impl Subgroup {
    pub fn distribution(&self) -> Option<&OptionDistribution> {
        match self {
            Subgroup::Supported { distribution, .. } => Some(distribution),
            Subgroup::Empty => None,
        }
    }

    pub fn respondent_count(&self) -> usize {
        match self {
            Subgroup::Supported { respondent_count, .. } => *respondent_count,
            Subgroup::Empty => 0,
        }
    }
}

/// Per-cell tallies for every question: one full attribute combination in one country.
#[derive(Debug, Clone, Default)]
struct CellTally {
    weighted: Vec<Vec<f64>>,
    unweighted: Vec<Vec<u64>>,
}

/// Immutable, indexed survey dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: AttributeSchema,
    questions: Vec<Question>,
    question_index: HashMap<String, usize>,
    records: Vec<RespondentRecord>,
    cells: BTreeMap<(String, u32), CellTally>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.questions == other.questions && self.records == other.records
    }
}

impl Dataset {
    /// Validates records against the schema and catalog and builds the cell index.
    pub fn new(schema: AttributeSchema, questions: Vec<Question>, records: Vec<RespondentRecord>) -> Result<Self> {
        validate_catalog(&questions)?;
        let question_index: HashMap<String, usize> =
            questions.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect();
        let mut cells: BTreeMap<(String, u32), CellTally> = BTreeMap::new();
        for (n, record) in records.iter().enumerate() {
            if !(record.weight.is_finite() && record.weight > 0.0) {
                return Err(Error::invalid(format!("record {n}: weight must be positive")));
            }
            if record.attribute_values.len() != schema.len() {
                return Err(Error::invalid(format!("record {n}: demographics must cover the schema")));
            }
            let mask = schema.mask_of(&record.attribute_values)?;
            let tally = cells.entry((record.country.clone(), mask)).or_insert_with(|| CellTally {
                weighted: questions.iter().map(|q| vec![0.0; q.k()]).collect(),
                unweighted: questions.iter().map(|q| vec![0; q.k()]).collect(),
            });
            for (qid, &answer) in &record.answers {
                let qi = *question_index.get(qid).ok_or_else(|| Error::UnknownQuestion(qid.clone()))?;
                let k = questions[qi].k();
                if !(1..=k).contains(&answer) {
                    return Err(Error::invalid(format!(
                        "record {n}: answer {answer} to `{qid}` is outside 1..={k}"
                    )));
                }
                tally.weighted[qi][answer - 1] += record.weight;
                tally.unweighted[qi][answer - 1] += 1;
            }
        }
        Ok(Self { schema, questions, question_index, records, cells })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn records(&self) -> &[RespondentRecord] {
        &self.records
    }

    pub fn question(&self, id: &str) -> Result<&Question> {
        self.question_index
            .get(id)
            .map(|&i| &self.questions[i])
            .ok_or_else(|| Error::UnknownQuestion(id.to_string()))
    }

    fn question_position(&self, id: &str) -> Result<usize> {
        self.question_index.get(id).copied().ok_or_else(|| Error::UnknownQuestion(id.to_string()))
    }

    /// Countries present in the data, sorted.
    pub fn countries(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.cells.keys().map(|(c, _)| c).collect();
        set.into_iter().cloned().collect()
    }

    /// Sums the tallies of every cell matching `persona`.
    fn accumulate(&self, persona: &Persona, qi: usize, weighting: Weighting) -> Result<(Vec<f64>, usize)> {
        let pattern = self.schema.pattern(persona)?;
        let k = self.questions[qi].k();
        let mut counts = vec![0.0; k];
        let mut respondents = 0u64;
        let lo = (persona.country.clone(), 0u32);
        let hi = (persona.country.clone(), u32::MAX);
        for ((_, mask), tally) in self.cells.range(lo..=hi) {
            if !pattern.matches(*mask) {
                continue;
            }
            for (j, c) in counts.iter_mut().enumerate() {
                *c += match weighting {
                    Weighting::Weighted => tally.weighted[qi][j],
                    Weighting::Unweighted => tally.unweighted[qi][j] as f64,
                };
            }
            respondents += tally.unweighted[qi].iter().sum::<u64>();
        }
        Ok((counts, respondents as usize))
    }

    pub fn subgroup_table(&self, persona: &Persona, question_id: &str, weighting: Weighting) -> Result<SubgroupTable> {
        let qi = self.question_position(question_id)?;
        let (counts, respondent_count) = self.accumulate(persona, qi, weighting)?;
        Ok(SubgroupTable { persona: persona.clone(), question_id: question_id.to_string(), counts, respondent_count })
    }

    /// Weighted response distribution of everyone matching all of `persona`'s
    /// assignments and its country.
    pub fn subgroup_distribution(&self, persona: &Persona, question_id: &str) -> Result<Subgroup> {
        self.subgroup_distribution_with(persona, question_id, Weighting::Weighted)
    }

    pub fn subgroup_distribution_with(
        &self,
        persona: &Persona,
        question_id: &str,
        weighting: Weighting,
    ) -> Result<Subgroup> {
        let table = self.subgroup_table(persona, question_id, weighting)?;
        if table.respondent_count == 0 {
            return Ok(Subgroup::Empty);
        }
        Ok(Subgroup::Supported {
            distribution: OptionDistribution::from_weights(&table.counts)?,
            respondent_count: table.respondent_count,
        })
    }

    /// Unweighted number of matched respondents who answered `question_id`.
    pub fn respondent_count(&self, persona: &Persona, question_id: &str) -> Result<usize> {
        let qi = self.question_position(question_id)?;
        Ok(self.accumulate(persona, qi, Weighting::Unweighted)?.1)
    }

    /// Modal option (1-based) by weighted count; ties go to the lowest option.
    pub fn empirical_mode(&self, persona: &Persona, question_id: &str) -> Result<usize> {
        match self.subgroup_distribution(persona, question_id)? {
            Subgroup::Supported { distribution, .. } => Ok(distribution.mode()),
            Subgroup::Empty => {
                Err(Error::EmptySupport { persona: persona.to_string(), question: question_id.to_string() })
            }
        }
    }

    fn cell_respondents(&self, country: &str, mask: u32, qi: usize) -> u64 {
        self.cells
            .get(&(country.to_string(), mask))
            .map(|t| t.unweighted[qi].iter().sum())
            .unwrap_or(0)
    }

    /// All single-attribute edits at the finest granularity where both
    /// endpoints have at least `min_support` respondents for the question.
    ///
    /// Sorted by country, question id, treatment (schema order), then the
    /// levels of the remaining attributes.
    pub fn enumerate_contexts(&self, min_support: usize) -> Vec<EditContext> {
        let m = self.schema.len();
        let mut question_order: Vec<usize> = (0..self.questions.len()).collect();
        question_order.sort_by(|&a, &b| self.questions[a].id.cmp(&self.questions[b].id));
        let mut out = Vec::new();
        for country in self.countries() {
            for &qi in &question_order {
                for t in 0..m {
                    let rest: Vec<usize> = (0..m).filter(|&i| i != t).collect();
                    for levels in 0u32..(1 << (m - 1)) {
                        // Most significant remaining attribute varies slowest.
                        let mut base_mask = 0u32;
                        for (j, &i) in rest.iter().enumerate() {
                            if levels >> (m - 2 - j) & 1 == 1 {
                                base_mask |= 1 << i;
                            }
                        }
                        let s1 = self.cell_respondents(&country, base_mask | 1 << t, qi);
                        let s0 = self.cell_respondents(&country, base_mask, qi);
                        if (s1 as usize) < min_support || (s0 as usize) < min_support {
                            continue;
                        }
                        let mut base = self.schema.full_persona(&country, base_mask);
                        base.assignments.remove(&self.schema.attributes[t].name);
                        out.push(EditContext {
                            treatment: self.schema.attributes[t].name.clone(),
                            base,
                            question_id: self.questions[qi].id.clone(),
                        });
                    }
                }
            }
        }
        out
    }
}

/// A controlled persona edit: toggle `treatment` while holding `base`
/// (the other attributes plus country) and the question fixed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EditContext {
    pub treatment: String,
    pub base: Persona,
    pub question_id: String,
}

impl EditContext {
    pub fn new(treatment: &str, base: Persona, question_id: &str) -> Result<Self> {
        if base.assignments.contains_key(treatment) {
            return Err(Error::invalid(format!("base context already assigns treatment `{treatment}`")));
        }
        Ok(Self { treatment: treatment.to_string(), base, question_id: question_id.to_string() })
    }

    pub fn endpoint(&self, level: Level) -> Persona {
        self.base.clone().with(&self.treatment, level)
    }

    /// `(s1, s0)`: the treated and untreated personas.
    pub fn endpoints(&self) -> (Persona, Persona) {
        (self.endpoint(Level::One), self.endpoint(Level::Zero))
    }

    pub fn country(&self) -> &str {
        &self.base.country
    }
}

impl fmt::Display for EditContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {}", self.question_id, self.treatment, self.base)
    }
}
