//! Persistent platform state: assets, users, engagement, rounds, feedback,
//! settlements and manifests as JSONL journals plus PNG images.
//!
//! Layout under the data root:
//!
//! ```text
//! assets.jsonl  users.jsonl  engagements.jsonl  rounds.jsonl
//! feedback.jsonl  settlements.jsonl  manifests.jsonl  clock.jsonl
//! images/   models/
//! ```
//!
//! Every journal starts with a header naming the format, kind and version.
//! Upserted entities are appended whole and the last line per id wins;
//! [`Store::compact`] rewrites each journal to its current state.

pub mod ingest;
pub mod journal;
pub mod model;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use crate::cohort::EngagementRecord;
use crate::error::{Error, Result};
use crate::feedback::{build_manifest, settle_round, FeedbackRecord, RetrainManifest, Settlement, SourceLedger};
use crate::tensor::Tensor;
use journal::Journal;

pub use ingest::{ingest_brand_corpus, ingest_engagements, ingest_user_timeline, IngestReport};
pub use model::{
    Card, CardContext, ContentAsset, GenerationRound, Platform, RoundStatus, SocialPost, Timestamp, UserProfile,
};

pub const DATA_ENV: &str = "PERSONAFORGE_DATA";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StoreState {
    pub assets: BTreeMap<String, ContentAsset>,
    pub users: BTreeMap<String, UserProfile>,
    pub engagements: Vec<EngagementRecord>,
    pub rounds: BTreeMap<String, GenerationRound>,
    pub feedback: Vec<FeedbackRecord>,
    /// In settlement order; the ledger is their fold.
    pub settlements: Vec<Settlement>,
    pub ledger: SourceLedger,
    /// Every manifest ever built, oldest first.
    pub manifests: Vec<RetrainManifest>,
    pub clock: Timestamp,
}

impl StoreState {
    pub fn feedback_for(&self, round_id: &str) -> Vec<FeedbackRecord> {
        self.feedback.iter().filter(|f| f.round_id == round_id).cloned().collect()
    }

    pub fn latest_manifest(&self, industry: &str) -> Option<&RetrainManifest> {
        self.manifests.iter().rev().find(|m| m.industry == industry)
    }

    pub fn industry_assets(&self, industry: &str) -> impl Iterator<Item = &ContentAsset> {
        let industry = industry.to_string();
        self.assets.values().filter(move |a| a.industry == industry)
    }

    pub fn find_user(&self, id_or_handle: &str) -> Option<&UserProfile> {
        self.users
            .get(id_or_handle)
            .or_else(|| self.users.values().find(|u| u.handle == id_or_handle))
    }
}

#[derive(Debug, PartialEq, Eq, Serialize, Deserialize)]
struct ClockRecord {
    now: Timestamp,
}

struct Journals {
    assets: Journal,
    users: Journal,
    engagements: Journal,
    rounds: Journal,
    feedback: Journal,
    settlements: Journal,
    manifests: Journal,
    clock: Journal,
}

impl Journals {
    fn new(root: &Path) -> Self {
        let j = |file: &str, kind| Journal::new(root.join(file), kind);
        Self {
            assets: j("assets.jsonl", "assets"),
            users: j("users.jsonl", "users"),
            engagements: j("engagements.jsonl", "engagements"),
            rounds: j("rounds.jsonl", "rounds"),
            feedback: j("feedback.jsonl", "feedback"),
            settlements: j("settlements.jsonl", "settlements"),
            manifests: j("manifests.jsonl", "manifests"),
            clock: j("clock.jsonl", "clock"),
        }
    }
}

/// Single-writer, many-reader store. Readers take cheap immutable
/// snapshots; writers are serialized and append to disk before the new
/// state becomes visible.
pub struct Store {
    root: PathBuf,
    journals: Journals,
    state: RwLock<Arc<StoreState>>,
    writer: Mutex<()>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Store {
    /// Opens (creating if needed) the store at `root` and replays its
    /// journals.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("images"))?;
        std::fs::create_dir_all(root.join("models"))?;
        let journals = Journals::new(&root);
        let state = Self::replay(&journals)?;
        Ok(Self {
            root,
            journals,
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(()),
        })
    }

    fn replay(j: &Journals) -> Result<StoreState> {
        let mut s = StoreState::default();
        for a in j.assets.read::<ContentAsset>()? {
            s.assets.insert(a.id.clone(), a);
        }
        for u in j.users.read::<UserProfile>()? {
            s.users.insert(u.id.clone(), u);
        }
        s.engagements = j.engagements.read()?;
        for r in j.rounds.read::<GenerationRound>()? {
            s.rounds.insert(r.round_id.clone(), r);
        }
        s.feedback = j.feedback.read()?;
        for st in j.settlements.read::<Settlement>()? {
            if s.ledger.apply(&st) {
                s.settlements.push(st);
            }
        }
        s.manifests = j.manifests.read()?;
        s.clock = j.clock.read::<ClockRecord>()?.last().map_or(0, |c| c.now);
        Ok(s)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn image_path(&self, rel: &str) -> PathBuf {
        self.images_dir().join(rel)
    }

    pub fn load_image(&self, rel: &str) -> Result<Tensor> {
        let path = self.image_path(rel);
        if !path.exists() {
            return Err(Error::NotFound(format!("image {rel}")));
        }
        crate::imageio::load_png(&path)
    }

    pub fn save_image(&self, rel: &str, image: &Tensor) -> Result<()> {
        crate::imageio::save_png(&self.image_path(rel), image)
    }

    /// Immutable point-in-time view; later writes do not affect it.
    pub fn snapshot(&self) -> Arc<StoreState> {
        self.state.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Runs `f` on a private copy of the state under the writer lock. When
    /// `f` succeeds its journal writes are appended and the copy is
    /// published; on error nothing changes.
    fn write<R>(&self, f: impl FnOnce(&mut StoreState, &mut Pending) -> Result<R>) -> Result<R> {
        let _guard = lock(&self.writer);
        let mut next = (*self.snapshot()).clone();
        let mut pending = Pending::default();
        let out = f(&mut next, &mut pending)?;
        pending.flush(&self.journals)?;
        *self.state.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(next);
        Ok(out)
    }

    /// Inserts or replaces assets by id. Returns how many changed.
    pub fn upsert_assets(&self, assets: Vec<ContentAsset>) -> Result<usize> {
        self.write(|s, p| {
            let mut n = 0;
            for a in assets {
                if s.assets.get(&a.id) != Some(&a) {
                    p.assets.push(a.clone());
                    s.assets.insert(a.id.clone(), a);
                    n += 1;
                }
            }
            Ok(n)
        })
    }

    pub fn upsert_user(&self, user: UserProfile) -> Result<()> {
        user.validate()?;
        self.write(|s, p| {
            if s.users.get(&user.id) != Some(&user) {
                p.users.push(user.clone());
                s.users.insert(user.id.clone(), user);
            }
            Ok(())
        })
    }

    /// Applies `f` to a stored user and persists the result.
    pub fn update_user(&self, id: &str, f: impl FnOnce(&mut UserProfile)) -> Result<UserProfile> {
        self.write(|s, p| {
            let u = s.users.get_mut(id).ok_or_else(|| Error::NotFound(format!("user {id}")))?;
            f(u);
            u.validate()?;
            p.users.push(u.clone());
            Ok(u.clone())
        })
    }

    /// Appends records not already present. Returns how many were new.
    pub fn add_engagements(&self, records: Vec<EngagementRecord>) -> Result<usize> {
        self.write(|s, p| {
            for r in records {
                if !s.engagements.contains(&r) && !p.engagements.contains(&r) {
                    p.engagements.push(r);
                }
            }
            s.engagements.extend(p.engagements.iter().cloned());
            Ok(p.engagements.len())
        })
    }

    pub fn put_round(&self, round: GenerationRound) -> Result<()> {
        self.write(|s, p| {
            p.rounds.push(round.clone());
            s.rounds.insert(round.round_id.clone(), round);
            Ok(())
        })
    }

    /// Stores feedback for an open round. Unknown rounds or cards are not
    /// found; closed rounds conflict.
    pub fn add_feedback(&self, record: FeedbackRecord) -> Result<()> {
        record.validate()?;
        self.write(|s, p| {
            let round = s
                .rounds
                .get(&record.round_id)
                .ok_or_else(|| Error::NotFound(format!("round {}", record.round_id)))?;
            if round.status == RoundStatus::Closed {
                return Err(Error::Conflict(format!("round {} is closed", record.round_id)));
            }
            if round.card(&record.card_id).is_none() {
                return Err(Error::NotFound(format!("card {} in round {}", record.card_id, record.round_id)));
            }
            p.feedback.push(record.clone());
            s.feedback.push(record);
            Ok(())
        })
    }

    /// Closes a round: settles its feedback, folds the settlement into the
    /// ledger and stores the industry's next retraining manifest, in one
    /// write. Fails with a conflict if the round is already closed.
    pub fn close_round(&self, round_id: &str) -> Result<(Settlement, RetrainManifest)> {
        self.write(|s, p| {
            let mut round = s
                .rounds
                .get(round_id)
                .ok_or_else(|| Error::NotFound(format!("round {round_id}")))?
                .clone();
            if round.status == RoundStatus::Closed {
                return Err(Error::Conflict(format!("round {round_id} is already closed")));
            }
            let settlement = settle_round(round_id, &round.variant_cards(), &s.feedback_for(round_id))?;
            s.ledger.apply(&settlement);
            let manifest = build_manifest(
                round_id,
                &round.industry,
                &s.ledger,
                s.industry_assets(&round.industry).map(|a| a.id.as_str()),
            );
            round.status = RoundStatus::Closed;
            s.settlements.push(settlement.clone());
            s.manifests.push(manifest.clone());
            s.rounds.insert(round_id.to_string(), round.clone());
            p.rounds.push(round);
            p.settlements.push(settlement.clone());
            p.manifests.push(manifest.clone());
            Ok((settlement, manifest))
        })
    }

    pub fn set_clock(&self, now: Timestamp) -> Result<()> {
        self.write(|s, p| {
            s.clock = now;
            p.clock = Some(now);
            Ok(())
        })
    }

    /// Rewrites every journal to exactly the current state.
    pub fn compact(&self) -> Result<()> {
        let _guard = lock(&self.writer);
        let s = self.snapshot();
        let j = &self.journals;
        j.assets.rewrite(&s.assets.values().collect::<Vec<_>>())?;
        j.users.rewrite(&s.users.values().collect::<Vec<_>>())?;
        j.engagements.rewrite(&s.engagements)?;
        j.rounds.rewrite(&s.rounds.values().collect::<Vec<_>>())?;
        j.feedback.rewrite(&s.feedback)?;
        j.settlements.rewrite(&s.settlements)?;
        j.manifests.rewrite(&s.manifests)?;
        j.clock.rewrite(&[ClockRecord { now: s.clock }])?;
        Ok(())
    }
}

#[derive(Default)]
struct Pending {
    assets: Vec<ContentAsset>,
    users: Vec<UserProfile>,
    engagements: Vec<EngagementRecord>,
    rounds: Vec<GenerationRound>,
    feedback: Vec<FeedbackRecord>,
    settlements: Vec<Settlement>,
    manifests: Vec<RetrainManifest>,
    clock: Option<Timestamp>,
}

impl Pending {
    fn flush(self, j: &Journals) -> Result<()> {
        j.assets.append(&self.assets)?;
        j.users.append(&self.users)?;
        j.engagements.append(&self.engagements)?;
        j.rounds.append(&self.rounds)?;
        j.feedback.append(&self.feedback)?;
        j.settlements.append(&self.settlements)?;
        j.manifests.append(&self.manifests)?;
        if let Some(now) = self.clock {
            j.clock.append(&[ClockRecord { now }])?;
        }
        Ok(())
    }
}
