use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{validate_weights, RankConfig, DEFAULT_MIN_SIZE};
use crate::error::{Error, Result};
use crate::feedback::schedule::Cadence;
use crate::fusion::ViewMode;
use crate::gan::{GanTrainConfig, StyleFitConfig, DEFAULT_LAMBDA};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndustryConfig {
    pub name: String,
    /// Caption or tag keywords an asset must match; empty admits all.
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl IndustryConfig {
    pub fn new(name: &str, keywords: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
        }
    }
}

/// Directories re-read by the scheduled ingestion task.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sources {
    pub brand_dirs: Vec<PathBuf>,
    pub user_dirs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub industries: Vec<IndustryConfig>,
    pub sources: Sources,
    pub rank: RankConfig,
    pub min_cohort: usize,
    pub cadence: Cadence,
    pub profiler_mode: ViewMode,
    pub profiler: TrainConfig,
    pub gan: GanTrainConfig,
    pub gan_steps: usize,
    pub style: StyleFitConfig,
    /// Weight of the source style when mixing with random latents.
    pub lambda: f64,
    /// Enables the admin endpoints.
    pub admin: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            industries: vec![
                IndustryConfig::new("automobile", &[]),
                IndustryConfig::new("fast_food", &[]),
                IndustryConfig::new("fashion", &[]),
            ],
            sources: Sources::default(),
            rank: RankConfig::default(),
            min_cohort: DEFAULT_MIN_SIZE,
            cadence: Cadence::default(),
            profiler_mode: ViewMode::Fused,
            profiler: TrainConfig::default(),
            gan: GanTrainConfig::default(),
            gan_steps: 2000,
            style: StyleFitConfig::default(),
            lambda: DEFAULT_LAMBDA,
            admin: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.industries.is_empty() {
            return Err(Error::invalid("industries", "at least one industry is required"));
        }
        for (i, a) in self.industries.iter().enumerate() {
            if a.name.is_empty() || self.industries[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::invalid("industries", format!("empty or repeated name {:?}", a.name)));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda", format!("{} outside [0,1]", self.lambda)));
        }
        if self.rank.top_k == 0 {
            return Err(Error::invalid("rank.top_k", "must be positive"));
        }
        validate_weights(&self.rank.weights)?;
        self.cadence.validate()?;
        self.profiler.validate()?;
        self.gan.generator.validate()
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::invalid("config", e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }
}
