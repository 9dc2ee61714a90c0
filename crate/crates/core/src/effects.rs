//! Causal-effect vectors, their cumulative (ΔCDF) transform, the CDF
//! alignment distance, and scalar effect summaries.
//!
//! Effects are always "level 1 minus level 0" of the treatment attribute.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distribution::{prefix_sums, OptionDistribution};
use crate::error::{Error, Result};
use crate::model::ResponseModel;
use crate::survey::{AttributeSchema, Dataset, EditContext, Subgroup};

/// Per-option probability shift `p(y | A=1, Z) - p(y | A=0, Z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEffectVector {
    values: Vec<f64>,
}

impl CausalEffectVector {
    /// Wraps raw shifts, checking that they could be a difference of two distributions.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::invalid("effect entries must lie in [-1, 1]"));
        }
        let total: f64 = values.iter().sum();
        if total.abs() > 1e-9 {
            return Err(Error::invalid(format!("effect entries sum to {total}, not 0")));
        }
        Ok(Self { values })
    }

    pub fn zeros(k: usize) -> Self {
        Self { values: vec![0.0; k] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn negate(&self) -> Self {
        Self { values: self.values.iter().map(|v| -v).collect() }
    }

    /// Largest absolute per-option difference to `other`.
    pub fn linf_distance(&self, other: &Self) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Which response source an effect was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Data,
    Model,
}

/// An effect vector attached to the edit it was measured under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextEffect {
    pub context: EditContext,
    pub side: Side,
    pub effect: CausalEffectVector,
}

/// Prefix sums of an effect vector; the last entry is 0 by mass conservation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCdf {
    values: Vec<f64>,
}

impl DeltaCdf {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

pub fn causal_effect(p1: &OptionDistribution, p0: &OptionDistribution) -> Result<CausalEffectVector> {
    check_len(p1.len(), p0.len())?;
    Ok(CausalEffectVector { values: p1.probs().iter().zip(p0.probs()).map(|(a, b)| a - b).collect() })
}

pub fn delta_cdf(ce: &CausalEffectVector) -> DeltaCdf {
    DeltaCdf { values: prefix_sums(&ce.values) }
}

/// Mean absolute ΔCDF discrepancy over all K levels (the top level included).
pub fn cdf_distance(ce_model: &CausalEffectVector, ce_data: &CausalEffectVector) -> Result<f64> {
    check_len(ce_data.len(), ce_model.len())?;
    let k = ce_model.len();
    let mut model_cum = 0.0;
    let mut data_cum = 0.0;
    let mut total = 0.0;
    for (m, d) in ce_model.values.iter().zip(&ce_data.values) {
        model_cum += m;
        data_cum += d;
        total += (model_cum - data_cum).abs();
    }
    Ok(total / k as f64)
}

/// How an effect vector is collapsed to one signed number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalarization {
    /// Shift of the expected option number, `sum_k k * ce[k]`.
    #[default]
    ExpectedShift,
    /// Mean |ΔCDF| signed so that positive means mass moved toward higher options.
    SignedMeanAbsCdf,
}

pub fn scalar_effect(ce: &CausalEffectVector) -> f64 {
    scalar_effect_with(ce, Scalarization::ExpectedShift)
}

pub fn scalar_effect_with(ce: &CausalEffectVector, how: Scalarization) -> f64 {
    match how {
        Scalarization::ExpectedShift => ce.values.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum(),
        Scalarization::SignedMeanAbsCdf => {
            let cdf = delta_cdf(ce).values;
            let magnitude = cdf.iter().map(|d| d.abs()).sum::<f64>() / cdf.len() as f64;
            let mut peak = 0.0f64;
            for d in &cdf {
                if d.abs() > peak.abs() {
                    peak = *d;
                }
            }
            // A positive ΔCDF means mass moved down the scale.
            if peak > 0.0 {
                -magnitude
            } else {
                magnitude
            }
        }
    }
}

/// Data-side effect for one edit: difference of the two endpoint subgroup distributions.
pub fn data_effect(dataset: &Dataset, context: &EditContext) -> Result<CausalEffectVector> {
    let (s1, s0) = context.endpoints();
    let p1 = dataset.subgroup_distribution(&s1, &context.question_id)?;
    let p0 = dataset.subgroup_distribution(&s0, &context.question_id)?;
    match (p1, p0) {
        (Subgroup::Supported { distribution: d1, .. }, Subgroup::Supported { distribution: d0, .. }) => {
            causal_effect(&d1, &d0)
        }
        (Subgroup::Empty, _) => {
            Err(Error::EmptySupport { persona: s1.to_string(), question: context.question_id.clone() })
        }
        (_, Subgroup::Empty) => {
            Err(Error::EmptySupport { persona: s0.to_string(), question: context.question_id.clone() })
        }
    }
}

/// Model-side effect for one edit: two predictions, one per endpoint.
pub fn model_effect<M: ResponseModel + ?Sized>(model: &M, context: &EditContext) -> Result<CausalEffectVector> {
    let (s1, s0) = context.endpoints();
    causal_effect(&model.predict(&s1, &context.question_id)?, &model.predict(&s0, &context.question_id)?)
}

/// One row of an exported effect table.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub context: EditContext,
    pub data: CausalEffectVector,
    /// Model-side effect, when a model was evaluated on the same edit.
    pub model: Option<CausalEffectVector>,
}

/// Writes effect rows as CSV: one row per edit with per-option effects and ΔCDF
/// (padded to the widest question), the distance to the model effect when
/// present, and the scalar effect of the data side.
pub fn write_effect_table<W: Write>(
    schema: &AttributeSchema,
    rows: &[EffectRow],
    preamble: &[String],
    mut sink: W,
) -> Result<()> {
    for line in preamble {
        writeln!(sink, "# {line}")?;
    }
    let k_max = rows.iter().map(|r| r.data.len()).max().unwrap_or(0);
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["country".to_string(), "question_id".into(), "treatment".into()];
    header.extend(schema.names().map(str::to_string));
    header.push("k".into());
    header.extend((1..=k_max).map(|k| format!("ce_{k}")));
    header.extend((1..=k_max).map(|k| format!("dcdf_{k}")));
    header.extend(["d_cdf".to_string(), "scalar_effect".into(), "model_scalar_effect".into()]);
    writer.write_record(&header)?;
    for row in rows {
        let ctx = &row.context;
        let mut out = vec![ctx.country().to_string(), ctx.question_id.clone(), ctx.treatment.clone()];
        for name in schema.names() {
            out.push(ctx.base.level(name).map(|l| l.to_string()).unwrap_or_default());
        }
        let k = row.data.len();
        out.push(k.to_string());
        let pad = |values: &[f64]| -> Vec<String> {
            let mut cells: Vec<String> = values.iter().map(f64::to_string).collect();
            cells.resize(k_max, String::new());
            cells
        };
        out.extend(pad(row.data.values()));
        out.extend(pad(delta_cdf(&row.data).values()));
        match &row.model {
            Some(model) => {
                out.push(cdf_distance(model, &row.data)?.to_string());
                out.push(scalar_effect(&row.data).to_string());
                out.push(scalar_effect(model).to_string());
            }
            None => {
                out.push(String::new());
                out.push(scalar_effect(&row.data).to_string());
                out.push(String::new());
            }
        }
        writer.write_record(&out)?;
    }
    writer.flush()?;
    Ok(())
}
