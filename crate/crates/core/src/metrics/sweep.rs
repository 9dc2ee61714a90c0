use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ResponseModel;
use crate::par::ordered_map;
use crate::survey::{Dataset, Persona, Subgroup};

use super::{alignment_score, AlignmentScore};

/// Score of one persona over the questions where its subgroup has respondents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonaScore {
    pub persona: Persona,
    pub score: AlignmentScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub model: String,
    pub personas: Vec<PersonaScore>,
    /// Personas with no respondents on any question, per (country, G).
    pub skipped: BTreeMap<String, BTreeMap<usize, usize>>,
}

impl SweepTable {
    /// Per-(country, G) mean of persona scores.
    pub fn country_means(&self) -> Vec<AlignmentScore> {
        let mut acc: BTreeMap<(String, usize), (f64, usize, usize)> = BTreeMap::new();
        for p in &self.personas {
            let e = acc.entry((p.persona.country.clone(), p.persona.granularity())).or_default();
            e.0 += p.score.value;
            e.1 += 1;
            e.2 = e.2.max(p.score.question_count);
        }
        acc.into_iter()
            .map(|((country, g), (sum, n, q))| AlignmentScore {
                value: sum / n as f64,
                question_count: q,
                country: Some(country),
                topic: None,
                granularity: Some(g),
            })
            .collect()
    }

    /// Country means in points (S × 100), one row per (model, granularity).
    pub fn score_table(&self) -> ScoreTable {
        let mut table = ScoreTable::default();
        for s in self.country_means() {
            let country = s.country.expect("country means are grouped by country");
            if !table.countries.contains(&country) {
                table.countries.push(country.clone());
            }
            table.set(&self.model, s.granularity.expect("grouped by granularity"), &country, s.value * 100.0);
        }
        table
    }

    pub fn skipped_total(&self) -> usize {
        self.skipped.values().flat_map(|m| m.values()).sum()
    }
}

/// Scores every persona of each requested granularity in every dataset country.
///
/// Personas are evaluated on up to `threads` workers; output order is fixed
/// (country, then G, then persona enumeration order).
pub fn granularity_sweep<M: ResponseModel + Sync + ?Sized>(
    model_name: &str,
    model: &M,
    dataset: &Dataset,
    g_values: &[usize],
    threads: usize,
) -> Result<SweepTable> {
    let schema = dataset.schema();
    if let Some(&g) = g_values.iter().find(|&&g| g == 0 || g > schema.len()) {
        return Err(Error::invalid(format!("granularity {g} outside 1..={}", schema.len())));
    }
    let mut personas = Vec::new();
    for country in dataset.countries() {
        for &g in g_values {
            personas.extend(schema.personas_of_granularity(&country, g));
        }
    }
    let scored = ordered_map(&personas, threads, |persona| score_persona(model, dataset, persona));
    let mut table = SweepTable { model: model_name.to_string(), personas: Vec::new(), skipped: BTreeMap::new() };
    for (persona, score) in personas.into_iter().zip(scored) {
        match score? {
            Some(score) => table.personas.push(PersonaScore { persona, score }),
            None => {
                *table
                    .skipped
                    .entry(persona.country.clone())
                    .or_default()
                    .entry(persona.granularity())
                    .or_default() += 1
            }
        }
    }
    Ok(table)
}

fn score_persona<M: ResponseModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    persona: &Persona,
) -> Result<Option<AlignmentScore>> {
    let mut model_dists = BTreeMap::new();
    let mut data_dists = BTreeMap::new();
    for q in dataset.questions() {
        if let Subgroup::Supported { distribution, .. } = dataset.subgroup_distribution(persona, &q.id)? {
            model_dists.insert(q.id.clone(), model.predict(persona, &q.id)?);
            data_dists.insert(q.id.clone(), distribution);
        }
    }
    if data_dists.is_empty() {
        return Ok(None);
    }
    let mut score = alignment_score(&model_dists, &data_dists)?;
    score.country = Some(persona.country.clone());
    score.granularity = Some(persona.granularity());
    Ok(Some(score))
}

/// Per-country scores for one (model, G) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub granularity: usize,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreRow {
    pub fn average(&self) -> f64 {
        self.scores.values().sum::<f64>() / self.scores.len() as f64
    }
}

/// Country-by-(model, G) score grid; columns keep first-seen country order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub countries: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn set(&mut self, model: &str, granularity: usize, country: &str, value: f64) {
        if !self.countries.iter().any(|c| c == country) {
            self.countries.push(country.to_string());
        }
        match self.rows.iter_mut().find(|r| r.model == model && r.granularity == granularity) {
            Some(row) => {
                row.scores.insert(country.to_string(), value);
            }
            None => self.rows.push(ScoreRow {
                model: model.to_string(),
                granularity,
                scores: BTreeMap::from([(country.to_string(), value)]),
            }),
        }
    }

    pub fn row(&self, model: &str, granularity: usize) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.model == model && r.granularity == granularity)
    }

    /// Model names in first-seen order.
    pub fn models(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.model.as_str()) {
                out.push(&r.model);
            }
        }
        out
    }

    /// Appends the rows of `other`; later values win on overlap.
    pub fn merge(&mut self, other: &ScoreTable) {
        for r in &other.rows {
            for c in &other.countries {
                if let Some(v) = r.scores.get(c) {
                    self.set(&r.model, r.granularity, c, *v);
                }
            }
        }
    }

    /// `model,granularity,<country...>,avg`; blank cells for missing countries.
    pub fn write_csv<W: Write>(&self, preamble: &[String], mut sink: W) -> Result<()> {
        for line in preamble {
            writeln!(sink, "# {line}")?;
        }
        let mut writer = csv::Writer::from_writer(sink);
        let mut header = vec!["model".to_string(), "granularity".into()];
        header.extend(self.countries.iter().cloned());
        header.push("avg".into());
        writer.write_record(&header)?;
        for r in &self.rows {
            let mut out = vec![r.model.clone(), r.granularity.to_string()];
            out.extend(self.countries.iter().map(|c| r.scores.get(c).map(|v| format!("{v:.4}")).unwrap_or_default()));
            out.push(format!("{:.4}", r.average()));
            writer.write_record(&out)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`write_csv`](Self::write_csv); an `avg` column is ignored.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers()?.clone();
        if header.get(0) != Some("model") || header.get(1) != Some("granularity") {
            return Err(Error::MalformedRow { line: 1, message: "score table must start with model,granularity".into() });
        }
        let countries: Vec<(usize, String)> =
            header.iter().enumerate().skip(2).filter(|(_, h)| *h != "avg").map(|(i, h)| (i, h.to_string())).collect();
        let mut table = ScoreTable { countries: countries.iter().map(|(_, c)| c.clone()).collect(), rows: Vec::new() };
        for row in csv.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::MalformedRow { line, message };
            let model = row.get(0).unwrap_or_default().to_string();
            let granularity: usize =
                row.get(1).unwrap_or_default().parse().map_err(|_| bad("granularity is not an integer".into()))?;
            let mut scores = BTreeMap::new();
            for (i, c) in &countries {
                let cell = row.get(*i).unwrap_or_default();
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| bad(format!("score for {c} is not a number: `{cell}`")))?;
                scores.insert(c.clone(), v);
            }
            table.rows.push(ScoreRow { model, granularity, scores });
        }
        Ok(table)
    }
}
