use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use effalign::effects::Scalarization;
use effalign::ingest::IngestMode;
use effalign::metrics::{GapDefinition, TierConfig, DEFAULT_TAXONOMY_EPSILON};
use effalign::objective::LossConfig;
use effalign::surrogate::{Optimizer, Sampling, TrainerConfig};
use effalign::survey::{Weighting, DEFAULT_MIN_SUPPORT};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run depends on. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub loss: LossConfig,
    pub trainer: TrainerSection,
    pub metrics: MetricsConfig,
    pub tiers: TierSection,
    pub bridge: BridgeConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            loss: LossConfig::default(),
            trainer: TrainerSection::default(),
            metrics: MetricsConfig::default(),
            tiers: TierSection::default(),
            bridge: BridgeConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub survey: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Omitted means the built-in four-attribute schema.
    pub schema: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { survey: None, catalog: None, schema: None, output: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mode: IngestMode,
    pub min_support: usize,
    pub weighting: Weighting,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { mode: IngestMode::Strict, min_support: DEFAULT_MIN_SUPPORT, weighting: Weighting::Weighted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub learning_rate: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub optimizer: Optimizer,
    pub batch_size: Option<usize>,
    /// Full assignments withheld from training, as level labels.
    pub holdout: Vec<Vec<String>>,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs_stage1: t.epochs_stage1,
            epochs_stage2: t.epochs_stage2,
            optimizer: t.optimizer,
            batch_size: t.batch_size,
            holdout: Vec::new(),
        }
    }
}

impl TrainerSection {
    /// The trainer settings; the seed is the run seed.
    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.learning_rate,
            epochs_stage1: self.epochs_stage1,
            epochs_stage2: self.epochs_stage2,
            seed,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub epsilon: f64,
    pub scalarization: Scalarization,
    pub granularities: Vec<usize>,
    pub threads: usize,
    pub svg: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_TAXONOMY_EPSILON,
            scalarization: Scalarization::ExpectedShift,
            granularities: vec![1, 2, 3, 4],
            threads: 1,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierSection {
    pub gap: GapDefinition,
    pub members: BTreeMap<String, u8>,
    pub baseline: Option<String>,
}

impl Default for TierSection {
    fn default() -> Self {
        let t = TierConfig::default();
        Self { gap: t.gap, members: t.tiers, baseline: None }
    }
}

impl TierSection {
    pub fn tier_config(&self) -> TierConfig {
        TierConfig { tiers: self.members.clone(), gap: self.gap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub endpoint: Option<String>,
    pub fixtures: Option<PathBuf>,
    /// JSON prompt template; omitted means the built-in template.
    pub template: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            fixtures: None,
            template: None,
            max_in_flight: 4,
            timeout_secs: 60,
            attempts: 3,
            initial_backoff_ms: 200,
            max_backoff_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub countries: Vec<String>,
    pub questions: usize,
    pub options: usize,
    pub topics: usize,
    pub cell_size: usize,
    pub sampling: Sampling,
    pub min_magnitude: f64,
    pub max_magnitude: f64,
    pub base_scale: f64,
    pub country_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            countries: vec!["USA".into(), "NGA".into()],
            questions: 6,
            options: 5,
            topics: 3,
            cell_size: 500,
            sampling: Sampling::Random,
            min_magnitude: 0.1,
            max_magnitude: 0.8,
            base_scale: 1.0,
            country_scale: 0.5,
        }
    }
}

impl RunConfig {
    /// Reads a TOML config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut config.paths.survey, &mut config.paths.catalog, &mut config.paths.schema]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        resolve(&mut config.paths.output);
        for p in [&mut config.bridge.fixtures, &mut config.bridge.template].into_iter().flatten() {
            resolve(p);
        }
        Ok(config)
    }

    /// Truncated SHA-256 of the canonical JSON form of the effective config.
    /// The output directory is left out so a run hashes the same wherever it writes.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.paths.output = PathBuf::new();
        let canonical = serde_json::to_vec(&hashed).expect("config serializes");
        effalign::seed::sha256_hex(&canonical)[..16].to_string()
    }

    /// Lines prefixed to every CSV artifact.
    pub fn provenance(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash()), format!("seed={}", self.seed)]
    }
}

pub(crate) fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = toml::from_str("seed = 9\n[trainer]\nepochs_stage2 = 10\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.trainer.epochs_stage2, 10);
        assert_eq!(c.trainer.epochs_stage1, TrainerConfig::default().epochs_stage1);
        assert!(toml::from_str::<RunConfig>("sede = 9\n").is_err());
    }
}
