use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapDefinition {
    /// Best country minus worst country.
    #[default]
    MaxMinCountry,
    /// Highest tier mean minus lowest tier mean.
    TierMeanDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    /// Country code to tier number.
    pub tiers: BTreeMap<String, u8>,
    #[serde(default)]
    pub gap: GapDefinition,
}

impl Default for TierConfig {
    fn default() -> Self {
        let mut tiers = BTreeMap::new();
        for (tier, members) in [
            (1u8, &["USA", "DEU", "GBR", "JPN", "AUS", "NZL"][..]),
            (2, &["CHL", "MEX", "RUS", "IND", "PHL"][..]),
            (3, &["EGY", "ETH", "NGA"][..]),
        ] {
            for c in members {
                tiers.insert(c.to_string(), tier);
            }
        }
        Self { tiers, gap: GapDefinition::MaxMinCountry }
    }
}

impl TierConfig {
    pub fn tier_of(&self, country: &str) -> Result<u8> {
        self.tiers
            .get(country)
            .copied()
            .ok_or_else(|| Error::invalid(format!("country `{country}` has no tier assignment")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GranularityEquity {
    pub granularity: usize,
    pub tier_means: BTreeMap<u8, f64>,
    pub best_country: String,
    pub worst_country: String,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEquity {
    pub model: String,
    pub per_granularity: Vec<GranularityEquity>,
    /// Mean of the per-G gaps.
    pub mean_gap: f64,
}

/// Improvement of a model over the baseline within one tier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierGain {
    pub model: String,
    pub baseline: String,
    pub tier: u8,
    /// Mean over the tier's countries of `model - baseline`, per G.
    pub per_granularity: BTreeMap<usize, f64>,
    /// Mean of the per-G gains.
    pub mean_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquityReport {
    pub gap_definition: GapDefinition,
    pub models: Vec<ModelEquity>,
    pub gains: Vec<TierGain>,
}

impl EquityReport {
    pub fn model(&self, name: &str) -> Option<&ModelEquity> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn gain(&self, model: &str, tier: u8) -> Option<&TierGain> {
        self.gains.iter().find(|g| g.model == model && g.tier == tier)
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Tier means and gaps for every (model, G) row, plus per-tier gains of every
/// other model over `baseline` when given.
pub fn equity_report(table: &ScoreTable, tiers: &TierConfig, baseline: Option<&str>) -> Result<EquityReport> {
    for c in &table.countries {
        tiers.tier_of(c)?;
    }
    let mut models = Vec::new();
    for name in table.models() {
        let mut per_granularity = Vec::new();
        for row in table.rows.iter().filter(|r| r.model == name) {
            if row.scores.is_empty() {
                continue;
            }
            let mut grouped: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
            for (c, v) in &row.scores {
                grouped.entry(tiers.tier_of(c)?).or_default().push(*v);
            }
            let tier_means: BTreeMap<u8, f64> = grouped.into_iter().map(|(t, v)| (t, mean(v))).collect();
            // Ties resolve to the first country in column order.
            let ordered: Vec<(&String, f64)> =
                table.countries.iter().filter_map(|c| row.scores.get(c).map(|v| (c, *v))).collect();
            let best = ordered.iter().fold(ordered[0], |b, x| if x.1 > b.1 { *x } else { b });
            let worst = ordered.iter().fold(ordered[0], |w, x| if x.1 < w.1 { *x } else { w });
            let gap = match tiers.gap {
                GapDefinition::MaxMinCountry => best.1 - worst.1,
                GapDefinition::TierMeanDifference => {
                    let hi = tier_means.values().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = tier_means.values().copied().fold(f64::INFINITY, f64::min);
                    hi - lo
                }
            };
            per_granularity.push(GranularityEquity {
                granularity: row.granularity,
                tier_means,
                best_country: best.0.clone(),
                worst_country: worst.0.clone(),
                gap,
            });
        }
        per_granularity.sort_by_key(|g| g.granularity);
        let mean_gap = mean(per_granularity.iter().map(|g| g.gap));
        models.push(ModelEquity { model: name.to_string(), per_granularity, mean_gap });
    }

    let mut gains = Vec::new();
    if let Some(base) = baseline {
        if !table.rows.iter().any(|r| r.model == base) {
            return Err(Error::invalid(format!("baseline model `{base}` not in score table")));
        }
        let tier_ids: Vec<u8> = {
            let mut t: Vec<u8> = tiers.tiers.values().copied().collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        for name in table.models().into_iter().filter(|m| *m != base) {
            for &tier in &tier_ids {
                let mut per_granularity = BTreeMap::new();
                for row in table.rows.iter().filter(|r| r.model == name) {
                    let Some(base_row) = table.row(base, row.granularity) else { continue };
                    let diffs: Vec<f64> = row
                        .scores
                        .iter()
                        .filter(|(c, _)| tiers.tiers.get(*c) == Some(&tier))
                        .filter_map(|(c, v)| base_row.scores.get(c).map(|b| v - b))
                        .collect();
                    if !diffs.is_empty() {
                        per_granularity.insert(row.granularity, mean(diffs));
                    }
                }
                if per_granularity.is_empty() {
                    continue;
                }
                let mean_gain = mean(per_granularity.values().copied());
                gains.push(TierGain {
                    model: name.to_string(),
                    baseline: base.to_string(),
                    tier,
                    per_granularity,
                    mean_gain,
                });
            }
        }
    }
    Ok(EquityReport { gap_definition: tiers.gap, models, gains })
}
