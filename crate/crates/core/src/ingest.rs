//! Survey CSV ingestion and export.
//!
//! Layout: `country,<attr1>,...,<attrM>,<qid1>,...[,weight]` with a header row.
//! Attribute cells hold `0`/`1`, answer cells a 1-based option number, and an
//! empty answer cell marks a missing answer for that question only.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{AttributeSchema, Dataset, Level, Question, RespondentRecord};

/// What to do with rows that cannot be parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    /// Malformed rows abort ingestion.
    #[default]
    Strict,
    /// Malformed rows are skipped and counted.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingDemographics,
    OutOfRange,
    Malformed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::MissingDemographics => "missing_demographics",
            DropReason::OutOfRange => "out_of_range",
            DropReason::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRow {
    pub line: u64,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub records_kept: usize,
    pub dropped: Vec<DroppedRow>,
    pub dropped_by_reason: BTreeMap<DropReason, usize>,
    /// Individual empty answer cells (the rest of the row is kept).
    pub missing_answers: usize,
    pub has_weight_column: bool,
}

impl IngestReport {
    pub fn dropped_count(&self, reason: DropReason) -> usize {
        self.dropped_by_reason.get(&reason).copied().unwrap_or(0)
    }

    fn drop_row(&mut self, line: u64, reason: DropReason, detail: String) {
        *self.dropped_by_reason.entry(reason).or_default() += 1;
        self.dropped.push(DroppedRow { line, reason, detail });
    }
}

enum Column {
    Country,
    Attribute(String),
    Question { id: String, k: usize },
    Weight,
}

enum RowOutcome {
    Keep(RespondentRecord, usize),
    Drop(DropReason, String),
}

/// Parses a survey CSV stream into a [`Dataset`].
///
/// Header errors (unknown question column, missing attribute column) are
/// always fatal. Row-level format errors are fatal in [`IngestMode::Strict`].
pub fn ingest_survey<R: Read>(
    source: R,
    schema: &AttributeSchema,
    catalog: &[Question],
    mode: IngestMode,
) -> Result<(Dataset, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).comment(Some(b'#')).from_reader(source);
    let header = reader.headers()?.clone();
    let known: HashMap<&str, &Question> = catalog.iter().map(|q| (q.id.as_str(), q)).collect();

    let mut columns = Vec::with_capacity(header.len());
    let mut seen_country = false;
    for (i, name) in header.iter().enumerate() {
        let name = name.trim();
        let column = if name == "country" {
            seen_country = true;
            Column::Country
        } else if name == "weight" {
            Column::Weight
        } else if schema.index_of(name).is_some() {
            Column::Attribute(name.to_string())
        } else if let Some(q) = known.get(name) {
            Column::Question { id: q.id.clone(), k: q.k() }
        } else {
            return Err(Error::UnknownQuestion(format!("{name} (header column {})", i + 1)));
        };
        columns.push(column);
    }
    if !seen_country {
        return Err(Error::MalformedRow { line: 1, message: "header has no `country` column".into() });
    }
    for attr in schema.names() {
        if !columns.iter().any(|c| matches!(c, Column::Attribute(a) if a == attr)) {
            return Err(Error::MalformedRow { line: 1, message: format!("header is missing attribute column `{attr}`") });
        }
    }

    let mut report = IngestReport {
        has_weight_column: columns.iter().any(|c| matches!(c, Column::Weight)),
        ..Default::default()
    };
    let mut records = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                if mode == IngestMode::Strict {
                    return Err(Error::MalformedRow { line, message: e.to_string() });
                }
                report.rows_read += 1;
                report.drop_row(line, DropReason::Malformed, e.to_string());
                continue;
            }
        };
        report.rows_read += 1;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != columns.len() {
            let message = format!("expected {} fields, found {}", columns.len(), row.len());
            if mode == IngestMode::Strict {
                return Err(Error::MalformedRow { line, message });
            }
            report.drop_row(line, DropReason::Malformed, message);
            continue;
        }
        match parse_row(&row, &columns) {
            Ok(RowOutcome::Keep(record, missing)) => {
                report.missing_answers += missing;
                records.push(record);
            }
            Ok(RowOutcome::Drop(reason, detail)) => report.drop_row(line, reason, detail),
            Err(message) => {
                if mode == IngestMode::Strict {
                    return Err(Error::MalformedRow { line, message });
                }
                report.drop_row(line, DropReason::Malformed, message);
            }
        }
    }
    report.records_kept = records.len();
    let dataset = Dataset::new(schema.clone(), catalog.to_vec(), records)?;
    Ok((dataset, report))
}

fn parse_row(row: &csv::StringRecord, columns: &[Column]) -> std::result::Result<RowOutcome, String> {
    let mut country = None;
    let mut attribute_values = BTreeMap::new();
    let mut answers = BTreeMap::new();
    let mut weight = 1.0;
    let mut missing_demographics = None;
    let mut out_of_range = None;
    let mut missing_answers = 0;

    for (cell, column) in row.iter().zip(columns) {
        let cell = cell.trim();
        match column {
            Column::Country => {
                if cell.is_empty() {
                    missing_demographics = Some("empty country".to_string());
                } else {
                    country = Some(cell.to_string());
                }
            }
            Column::Attribute(name) => match cell {
                "" => missing_demographics = Some(format!("empty `{name}`")),
                "0" => {
                    attribute_values.insert(name.clone(), Level::Zero);
                }
                "1" => {
                    attribute_values.insert(name.clone(), Level::One);
                }
                other => return Err(format!("attribute `{name}` must be 0 or 1, got `{other}`")),
            },
            Column::Question { id, k } => {
                if cell.is_empty() {
                    missing_answers += 1;
                    continue;
                }
                let answer: i64 =
                    cell.parse().map_err(|_| format!("answer to `{id}` is not an integer: `{cell}`"))?;
                if answer < 1 || answer as u64 > *k as u64 {
                    out_of_range = Some(format!("answer {answer} to `{id}` is outside 1..={k}"));
                } else {
                    answers.insert(id.clone(), answer as usize);
                }
            }
            Column::Weight => {
                if !cell.is_empty() {
                    weight = cell.parse::<f64>().map_err(|_| format!("weight is not a number: `{cell}`"))?;
                    if !(weight.is_finite() && weight > 0.0) {
                        return Err(format!("weight must be positive, got `{cell}`"));
                    }
                }
            }
        }
    }
    if let Some(detail) = missing_demographics {
        return Ok(RowOutcome::Drop(DropReason::MissingDemographics, detail));
    }
    if let Some(detail) = out_of_range {
        return Ok(RowOutcome::Drop(DropReason::OutOfRange, detail));
    }
    let record = RespondentRecord { country: country.expect("country column present"), attribute_values, answers, weight };
    Ok(RowOutcome::Keep(record, missing_answers))
}

/// Writes a dataset in the ingestion layout; `ingest_survey` reads it back unchanged.
pub fn write_survey<W: Write>(dataset: &Dataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let schema = dataset.schema();
    let mut header = vec!["country".to_string()];
    header.extend(schema.names().map(str::to_string));
    header.extend(dataset.questions().iter().map(|q| q.id.clone()));
    header.push("weight".to_string());
    writer.write_record(&header)?;
    for record in dataset.records() {
        let mut row = Vec::with_capacity(header.len());
        row.push(record.country.clone());
        for name in schema.names() {
            row.push(record.attribute_values[name].to_string());
        }
        for q in dataset.questions() {
            row.push(record.answers.get(&q.id).map(|a| a.to_string()).unwrap_or_default());
        }
        row.push(record.weight.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Vec<Question> {
        vec![Question {
            id: "q1".into(),
            topic: "Economic Values".into(),
            prompt_text: "How much do you agree?".into(),
            options: (1..=5).map(|i| format!("opt{i}")).collect(),
        }]
    }

    fn ingest(text: &str, mode: IngestMode) -> Result<(Dataset, IngestReport)> {
        ingest_survey(text.as_bytes(), &AttributeSchema::default(), &catalog(), mode)
    }

    const HEADER: &str = "country,gender,education,residence,marital_status,q1\n";

    #[test]
    fn well_formed_rows_are_kept() {
        let text = format!("{HEADER}USA,0,1,0,1,3\nUSA,1,1,0,0,5\nDEU,0,0,0,0,1\n");
        let (ds, report) = ingest(&text, IngestMode::Strict).unwrap();
        assert_eq!(ds.records().len(), 3);
        assert_eq!(report.records_kept, 3);
        assert!(report.dropped.is_empty());
        assert!(!report.has_weight_column);
        assert_eq!(ds.records()[0].weight, 1.0);
    }

    #[test]
    fn out_of_range_answer_drops_row() {
        let text = format!("{HEADER}USA,0,1,0,1,3\nUSA,1,1,0,0,6\nDEU,0,0,0,0,1\n");
        let (ds, report) = ingest(&text, IngestMode::Strict).unwrap();
        assert_eq!(ds.records().len(), 2);
        assert_eq!(report.dropped_count(DropReason::OutOfRange), 1);
        assert_eq!(report.dropped[0].reason.as_str(), "out_of_range");
        assert_eq!(report.dropped[0].line, 3);
    }

    #[test]
    fn missing_demographics_and_missing_answers() {
        let text = format!("{HEADER}USA,,1,0,1,3\nUSA,1,1,0,0,\n");
        let (ds, report) = ingest(&text, IngestMode::Strict).unwrap();
        assert_eq!(ds.records().len(), 1);
        assert!(ds.records()[0].answers.is_empty());
        assert_eq!(report.dropped_count(DropReason::MissingDemographics), 1);
        assert_eq!(report.missing_answers, 1);
    }

    #[test]
    fn malformed_row_strict_vs_lenient() {
        let text = format!("{HEADER}USA,0,1,0,1,3\nUSA,0,2,0,1,3\nUSA,0,1,0\n");
        match ingest(&text, IngestMode::Strict) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed row error, got {other:?}"),
        }
        let (ds, report) = ingest(&text, IngestMode::Lenient).unwrap();
        assert_eq!(ds.records().len(), 1);
        assert_eq!(report.dropped_count(DropReason::Malformed), 2);
    }

    #[test]
    fn unknown_question_column_is_fatal() {
        let text = "country,gender,education,residence,marital_status,q9\nUSA,0,1,0,1,3\n";
        assert!(matches!(ingest(text, IngestMode::Lenient), Err(Error::UnknownQuestion(_))));
    }

    #[test]
    fn weight_column_is_parsed() {
        let text = "country,gender,education,residence,marital_status,q1,weight\nUSA,0,1,0,1,3,2.5\n";
        let (ds, report) = ingest(text, IngestMode::Strict).unwrap();
        assert!(report.has_weight_column);
        assert_eq!(ds.records()[0].weight, 2.5);
        let bad = "country,gender,education,residence,marital_status,q1,weight\nUSA,0,1,0,1,3,-1\n";
        assert!(ingest(bad, IngestMode::Strict).is_err());
    }
}
