//! Human feedback on generated variants, folded into the next retraining set.

pub mod augment;
pub mod schedule;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::store::Timestamp;

pub use augment::{augment, Augmentation, Recipe};
pub use schedule::{Cadence, DueTask, Scheduler, Task};

/// A source's augmentation multiplicity never exceeds this.
pub const MAX_MULTIPLICITY: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    Yes,
    No,
    DontKnow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub round_id: String,
    pub card_id: String,
    /// Percent, 0..=100.
    pub attractiveness: u32,
    /// Stars, 1..=5.
    pub preference: u32,
    pub compliance: Compliance,
    pub would_click: YesNo,
    #[serde(default)]
    pub timestamp: Timestamp,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<()> {
        if self.attractiveness > 100 {
            return Err(Error::invalid("attractiveness", format!("{} outside 0..=100", self.attractiveness)));
        }
        if !(1..=5).contains(&self.preference) {
            return Err(Error::invalid("preference", format!("{} outside 1..=5", self.preference)));
        }
        Ok(())
    }
}

/// A variant counts as successful when the viewer liked it (4 or 5 stars)
/// or would click it. Attractiveness and compliance are recorded only.
pub fn judge_variant(f: &FeedbackRecord) -> bool {
    f.preference >= 4 || f.would_click == YesNo::Yes
}

/// A generated (non-original) card and the asset that styled it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantCard {
    pub card_id: String,
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceOutcome {
    pub source_id: String,
    pub successes: u32,
    pub failures: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub round_id: String,
    /// Per source, sorted by id.
    pub outcomes: Vec<SourceOutcome>,
}

impl Settlement {
    pub fn penalized(&self) -> Vec<String> {
        self.outcomes
            .iter()
            .filter(|o| o.successes == 0)
            .map(|o| o.source_id.clone())
            .collect()
    }

    pub fn prioritized(&self) -> Vec<(String, u32)> {
        self.outcomes
            .iter()
            .filter(|o| o.successes > 0)
            .map(|o| (o.source_id.clone(), multiplicity(o.successes)))
            .collect()
    }
}

fn multiplicity(successes: u32) -> u32 {
    (1 + successes).min(MAX_MULTIPLICITY)
}

/// Judges every variant of a closed round. The latest feedback per card
/// counts; cards without feedback count as failures. Feedback on cards that
/// are not variants (the originals) is ignored.
pub fn settle_round(round_id: &str, variants: &[VariantCard], feedback: &[FeedbackRecord]) -> Result<Settlement> {
    let mut latest: BTreeMap<&str, &FeedbackRecord> = BTreeMap::new();
    for f in feedback {
        if f.round_id != round_id {
            return Err(Error::invalid("round_id", format!("feedback for {} in round {round_id}", f.round_id)));
        }
        f.validate()?;
        match latest.get(f.card_id.as_str()) {
            Some(prev) if prev.timestamp > f.timestamp => {}
            _ => {
                latest.insert(&f.card_id, f);
            }
        }
    }
    let mut outcomes: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    for v in variants {
        let ok = latest.get(v.card_id.as_str()).is_some_and(|f| judge_variant(f));
        let e = outcomes.entry(&v.source_id).or_default();
        if ok {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    Ok(Settlement {
        round_id: round_id.to_string(),
        outcomes: outcomes
            .into_iter()
            .map(|(s, (successes, failures))| SourceOutcome {
                source_id: s.to_string(),
                successes,
                failures,
            })
            .collect(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub successes: u32,
    pub failures: u32,
    pub penalized: bool,
    /// Augmented copies in the next retraining set; 0 when penalized.
    pub multiplicity: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLedger {
    pub entries: BTreeMap<String, SourceEntry>,
    pub settled_rounds: BTreeSet<String>,
}

impl SourceLedger {
    /// Folds a settlement in. The latest round decides a source's flag, so
    /// a later success lifts an earlier penalty. Returns false, changing
    /// nothing, when the round was already applied.
    pub fn apply(&mut self, s: &Settlement) -> bool {
        if !self.settled_rounds.insert(s.round_id.clone()) {
            return false;
        }
        for o in &s.outcomes {
            let e = self.entries.entry(o.source_id.clone()).or_default();
            e.successes += o.successes;
            e.failures += o.failures;
            e.penalized = o.successes == 0;
            e.multiplicity = if e.penalized { 0 } else { multiplicity(o.successes) };
        }
        true
    }

    pub fn is_penalized(&self, asset_id: &str) -> bool {
        self.entries.get(asset_id).is_some_and(|e| e.penalized)
    }

    pub fn multiplicity(&self, asset_id: &str) -> u32 {
        self.entries.get(asset_id).map_or(0, |e| e.multiplicity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub asset_id: String,
    /// Each recipe adds one augmented copy next to the original.
    pub augmentations: Vec<Augmentation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainManifest {
    pub round_id: String,
    pub industry: String,
    pub entries: Vec<ManifestEntry>,
}

impl RetrainManifest {
    pub fn asset_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.asset_id.as_str()).collect()
    }

    pub fn contains(&self, asset_id: &str) -> bool {
        self.entries.iter().any(|e| e.asset_id == asset_id)
    }
}

fn derive_seed(round_id: &str, asset_id: &str, j: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(round_id.as_bytes());
    h.update([0]);
    h.update(asset_id.as_bytes());
    h.update(j.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Retraining set for an industry: every candidate asset except the
/// penalized ones, each prioritized asset carrying `multiplicity`
/// augmentations with distinct recipes.
pub fn build_manifest<'a>(
    round_id: &str,
    industry: &str,
    ledger: &SourceLedger,
    candidates: impl IntoIterator<Item = &'a str>,
) -> RetrainManifest {
    let ids: BTreeSet<&str> = candidates.into_iter().collect();
    let entries = ids
        .into_iter()
        .filter(|id| !ledger.is_penalized(id))
        .map(|id| ManifestEntry {
            asset_id: id.to_string(),
            augmentations: (0..ledger.multiplicity(id) as usize)
                .map(|j| Augmentation {
                    recipe: Recipe::ALL[j % Recipe::ALL.len()],
                    seed: derive_seed(round_id, id, j),
                })
                .collect(),
        })
        .collect();
    RetrainManifest {
        round_id: round_id.to_string(),
        industry: industry.to_string(),
        entries,
    }
}
