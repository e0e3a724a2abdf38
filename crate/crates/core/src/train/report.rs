use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::trainer::{cache_features, seeded_backbone, train_with, ModeResult, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::ViewMode;
use crate::mbti::Axis;

/// Test macro F1 for every view mode and axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub n_users: usize,
    pub axes: Vec<String>,
    pub modes: Vec<ViewMode>,
    /// `matrix[mode][axis]`.
    pub matrix: Vec<[f64; 4]>,
    pub details: Vec<ModeResult>,
}

impl EvalReport {
    pub fn from_results(seed: u64, n_users: usize, details: Vec<ModeResult>) -> Self {
        Self {
            seed,
            n_users,
            axes: Axis::ALL.iter().map(|a| a.name().to_string()).collect(),
            modes: details.iter().map(|d| d.mode).collect(),
            matrix: details.iter().map(|d| d.test_macro_f1).collect(),
            details,
        }
    }

    pub fn row(&self, mode: ViewMode) -> Result<[f64; 4]> {
        self.modes
            .iter()
            .position(|&m| m == mode)
            .map(|i| self.matrix[i])
            .ok_or_else(|| Error::NotFound(format!("mode {}", mode.name())))
    }

    pub fn get(&self, mode: ViewMode, axis: Axis) -> Result<f64> {
        Ok(self.row(mode)?[axis.index()])
    }

    /// Mean macro F1 of `mode` over `axes`.
    pub fn mean_over(&self, mode: ViewMode, axes: &[Axis]) -> Result<f64> {
        let row = self.row(mode)?;
        if axes.is_empty() {
            return Err(Error::InsufficientData("no axes to average".into()));
        }
        Ok(axes.iter().map(|a| row[a.index()]).sum::<f64>() / axes.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table, one row per mode.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<8}", "mode");
        for a in &self.axes {
            let _ = write!(s, "{a:>8}");
        }
        s.push('\n');
        for (mode, row) in self.modes.iter().zip(&self.matrix) {
            let _ = write!(s, "{:<8}", mode.name());
            for v in row {
                let _ = write!(s, "{v:>8.3}");
            }
            s.push('\n');
        }
        s
    }
}

/// Trains text-only, image-only and fused profilers on the same split and
/// backbone and collects their test scores.
pub fn evaluate_matrix(corpus: &Corpus, config: &TrainConfig) -> Result<EvalReport> {
    let backbone = seeded_backbone(&config.dims, config.seed)?;
    let cache = if config.freeze_backbone {
        Some(cache_features(corpus, &backbone)?)
    } else {
        None
    };
    let mut details = Vec::new();
    for mode in ViewMode::ALL {
        details.push(train_with(corpus, mode, config, &backbone, cache.as_ref())?.result);
    }
    Ok(EvalReport::from_results(config.seed, corpus.len(), details))
}
