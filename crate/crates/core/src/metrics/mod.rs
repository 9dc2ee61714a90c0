//! Wasserstein alignment scores, granularity sweeps, tier equity reports,
//! attribute heterogeneity and the misalignment taxonomy.

mod diagnose;
mod equity;
mod svg;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::distribution::{prefix_sums, OptionDistribution};
use crate::error::{Error, Result};
use crate::model::ResponseModel;
use crate::survey::{Dataset, EditContext, Persona, Subgroup};

pub use diagnose::*;
pub use equity::*;
pub use svg::{equity_svg, heterogeneity_svg};
pub use sweep::*;

/// Earth mover's distance between two distributions on the option positions `1..=K`.
pub fn wasserstein_1d(d1: &OptionDistribution, d2: &OptionDistribution) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(Error::LengthMismatch { expected: d1.len(), actual: d2.len() });
    }
    let c1 = prefix_sums(d1.probs());
    let c2 = prefix_sums(d2.probs());
    Ok(c1[..c1.len() - 1].iter().zip(&c2).map(|(a, b)| (a - b).abs()).sum())
}

/// `1 - WD / (K - 1)` for a single question.
pub fn question_score(model: &OptionDistribution, data: &OptionDistribution) -> Result<f64> {
    Ok(1.0 - wasserstein_1d(model, data)? / (data.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub value: f64,
    pub question_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<usize>,
}

impl AlignmentScore {
    fn ungrouped(value: f64, question_count: usize) -> Self {
        Self { value, question_count, country: None, topic: None, granularity: None }
    }
}

/// Mean per-question score over a shared question set.
pub fn alignment_score(
    model_dists: &BTreeMap<String, OptionDistribution>,
    data_dists: &BTreeMap<String, OptionDistribution>,
) -> Result<AlignmentScore> {
    if !model_dists.keys().eq(data_dists.keys()) {
        let m: BTreeSet<_> = model_dists.keys().collect();
        let d: BTreeSet<_> = data_dists.keys().collect();
        let diff: Vec<_> = m.symmetric_difference(&d).map(|s| s.as_str()).collect();
        return Err(Error::invalid(format!("question sets differ on {}", diff.join(", "))));
    }
    if data_dists.is_empty() {
        return Err(Error::invalid("alignment score needs at least one question"));
    }
    let mut total = 0.0;
    for (q, data) in data_dists {
        total += question_score(&model_dists[q], data)?;
    }
    Ok(AlignmentScore::ungrouped(total / data_dists.len() as f64, data_dists.len()))
}

/// Alignment on the subgroups touched by a set of edits.
///
/// Every distinct endpoint persona is scored over the questions it appears
/// with in `contexts`; the result is the mean over those personas.
pub fn context_alignment_score<M: ResponseModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    contexts: &[EditContext],
) -> Result<AlignmentScore> {
    let mut by_persona: BTreeMap<Persona, BTreeSet<&str>> = BTreeMap::new();
    for ctx in contexts {
        let (s1, s0) = ctx.endpoints();
        by_persona.entry(s1).or_default().insert(&ctx.question_id);
        by_persona.entry(s0).or_default().insert(&ctx.question_id);
    }
    if by_persona.is_empty() {
        return Err(Error::invalid("no contexts to score"));
    }
    let mut total = 0.0;
    let mut questions = BTreeSet::new();
    for (persona, qs) in &by_persona {
        let mut model_dists = BTreeMap::new();
        let mut data_dists = BTreeMap::new();
        for &q in qs {
            let data = match dataset.subgroup_distribution(persona, q)? {
                Subgroup::Supported { distribution, .. } => distribution,
                Subgroup::Empty => {
                    return Err(Error::EmptySupport { persona: persona.to_string(), question: q.to_string() })
                }
            };
            model_dists.insert(q.to_string(), model.predict(persona, q)?);
            data_dists.insert(q.to_string(), data);
            questions.insert(q);
        }
        total += alignment_score(&model_dists, &data_dists)?.value;
    }
    Ok(AlignmentScore::ungrouped(total / by_persona.len() as f64, questions.len()))
}
