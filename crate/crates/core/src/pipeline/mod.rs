//! The end-to-end platform flow over a [`Store`]: profiler training and
//! inference, per-industry generator training, generation rounds, feedback
//! settlement and the logical-clock scheduler.

mod config;
pub mod demo;
mod jobs;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{IndustryConfig, PipelineConfig, Sources};
pub use jobs::{JobState, JobStatus, RetrainRequest, RetrainResult, RetrainTarget};

use crate::cohort::{build_cohort, rank_assets};
use crate::error::{Error, Result};
use crate::feedback::schedule::{DueTask, Scheduler, Task};
use crate::feedback::{augment, FeedbackRecord, RetrainManifest, Settlement};
use crate::fusion::{Profiler, ViewMode};
use crate::gan::{generate_variants, to_generator_size, GanModel, ModelRegistry};
use crate::mbti::{MbtiPayload, MbtiType};
use crate::store::ingest::{ingest_brand_corpus_with, ingest_engagements, ingest_user_timeline};
use crate::store::{Card, CardContext, GenerationRound, Platform, RoundStatus, Store, Timestamp, UserProfile};
use crate::tensor::Tensor;
use crate::train::{profile_input, train, Corpus, LabeledExample};

pub const MAX_VARIANTS: usize = 8;

fn derive_seed(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Number of originals mixed into a round of `k` variants.
pub fn originals_for(k: usize) -> usize {
    k.div_ceil(5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilerReport {
    pub mode: ViewMode,
    pub users: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub best_epoch: usize,
    pub test_macro_f1: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub industry: String,
    /// Round whose manifest selected the data; `None` when no round has
    /// been settled for the industry and every asset was used.
    pub manifest_round: Option<String>,
    /// Asset ids trained on, sorted.
    pub training_set: Vec<String>,
    /// Images after augmentation.
    pub images: usize,
    pub steps: usize,
    pub final_d_loss: Option<f64>,
    pub final_g_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub assets_admitted: usize,
    pub assets_skipped: usize,
    pub engagements_added: usize,
    pub users: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutcome {
    Executed,
    /// Handed to a retrain job.
    Started,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task: Task,
    pub at: Timestamp,
    pub manual: bool,
    pub outcome: TaskOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub now: Timestamp,
    pub executed: Vec<TaskRun>,
}

pub struct Pipeline {
    store: Store,
    config: PipelineConfig,
    profiler: RwLock<Option<Arc<Profiler>>>,
    generators: RwLock<HashMap<String, Arc<GanModel>>>,
    next_round: AtomicU64,
    jobs: jobs::JobBoard,
}

impl Pipeline {
    pub fn new(store: Store, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let next_round = AtomicU64::new(store.snapshot().rounds.len() as u64 + 1);
        Ok(Self {
            store,
            config,
            profiler: RwLock::new(None),
            generators: RwLock::new(HashMap::new()),
            next_round,
            jobs: jobs::JobBoard::default(),
        })
    }

    pub fn open(data_dir: impl Into<PathBuf>, config: PipelineConfig) -> Result<Self> {
        Self::new(Store::open(data_dir)?, config)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn industry(&self, name: &str) -> Result<&IndustryConfig> {
        self.config
            .industries
            .iter()
            .find(|i| i.name == name)
            .ok_or_else(|| Error::NotFound(format!("industry {name}")))
    }

    fn profiler_dir(&self) -> PathBuf {
        self.store.models_dir().join("profiler")
    }

    fn gan_dir(&self) -> PathBuf {
        self.store.models_dir().join("gan")
    }

    // Ingestion.

    /// Loads a brand corpus (per configured industry and its keywords),
    /// its engagement log when present, and a user timeline directory.
    pub fn ingest(&self, brand_dir: Option<&Path>, user_dir: Option<&Path>) -> Result<IngestSummary> {
        let mut summary = IngestSummary::default();
        if let Some(dir) = brand_dir {
            let industries = &self.config.industries;
            let r = ingest_brand_corpus_with(&self.store, dir, &|a| {
                industries
                    .iter()
                    .any(|i| i.name == a.industry && a.matches_keywords(&i.keywords))
            })?;
            summary.assets_admitted += r.admitted;
            summary.assets_skipped += r.skipped;
            let log = dir.join("engagements.jsonl");
            if log.exists() {
                summary.engagements_added += ingest_engagements(&self.store, &log)?;
            }
        }
        if let Some(dir) = user_dir {
            summary.users += ingest_user_timeline(&self.store, dir, None)?.len();
        }
        Ok(summary)
    }

    // Profiler.

    fn load_profile_images(&self, profile: &UserProfile, size: usize, images: &mut BTreeMap<String, Tensor>) -> UserProfile {
        let mut kept = profile.clone();
        for post in &mut kept.posts {
            post.images.retain(|name| {
                if images.contains_key(name) {
                    return true;
                }
                match self.store.load_image(name).and_then(|t| to_generator_size(&t, size)) {
                    Ok(t) => {
                        images.insert(name.clone(), t);
                        true
                    }
                    Err(e) => {
                        warn!("user {}: ignoring image {name}: {e}", profile.id);
                        false
                    }
                }
            });
        }
        kept.posts.retain(|p| !p.text.is_empty() || !p.images.is_empty());
        kept.normalize();
        kept
    }

    /// Trains the profiler on every stored user with a declared type and
    /// publishes it under `models/profiler`.
    pub fn train_profiler(&self) -> Result<ProfilerReport> {
        let snapshot = self.store.snapshot();
        let size = self.config.profiler.dims.image_size;
        let mut corpus = Corpus::default();
        for user in snapshot.users.values() {
            let Some(truth) = user.mbti else { continue };
            if user.posts.is_empty() {
                continue;
            }
            let profile = self.load_profile_images(user, size, &mut corpus.images);
            corpus.examples.push(LabeledExample { profile, truth });
        }
        if corpus.examples.len() < 10 {
            return Err(Error::InsufficientData(format!(
                "profiler training needs at least 10 users with a declared type, found {}",
                corpus.examples.len()
            )));
        }
        let out = train(&corpus, self.config.profiler_mode, &self.config.profiler)?;
        out.profiler.save(&self.profiler_dir())?;
        *self.profiler.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(out.profiler));
        let r = out.result;
        info!("profiler published: {} users, test macro F1 {:?}", corpus.examples.len(), r.test_macro_f1);
        Ok(ProfilerReport {
            mode: r.mode,
            users: corpus.examples.len(),
            train_size: r.train_size,
            val_size: r.val_size,
            test_size: r.test_size,
            best_epoch: r.best_epoch,
            test_macro_f1: r.test_macro_f1,
        })
    }

    fn current_profiler(&self) -> Result<Arc<Profiler>> {
        if let Some(p) = self.profiler.read().unwrap_or_else(|p| p.into_inner()).as_ref() {
            return Ok(p.clone());
        }
        let dir = self.profiler_dir();
        if !dir.join("profiler.ckpt").exists() {
            return Err(Error::NotTrained("no profiler checkpoint published".into()));
        }
        let p = Arc::new(Profiler::load(&dir)?);
        *self.profiler.write().unwrap_or_else(|p| p.into_inner()) = Some(p.clone());
        Ok(p)
    }

    /// Resolves a user by id, or by handle when `platform` is given.
    pub fn find_user(&self, id_or_handle: &str, platform: Option<Platform>) -> Result<UserProfile> {
        let snapshot = self.store.snapshot();
        let found = match platform {
            None => snapshot.find_user(id_or_handle),
            Some(pl) => snapshot.users.values().find(|u| u.handle == id_or_handle && u.platform == pl),
        };
        found.cloned().ok_or_else(|| Error::NotFound(format!("user {id_or_handle}")))
    }

    /// Predicts and stores the type of a user.
    pub fn infer(&self, user_id: &str) -> Result<(String, MbtiPayload)> {
        let user = self.find_user(user_id, None)?;
        let profiler = self.current_profiler()?;
        let size = profiler.config.image.input_size;
        let mut images = BTreeMap::new();
        let profile = self.load_profile_images(&user, size, &mut images);
        let lookup = |n: &str| images.get(n).cloned().ok_or_else(|| Error::NotFound(format!("image {n}")));
        let input = profile_input(&profile, &profiler.vocab, None, &lookup)?;
        let t = profiler.predict(&input)?;
        let payload = MbtiPayload::from(&t);
        let stored = payload.clone();
        self.store.update_user(&user.id, move |u| u.inferred = Some(stored))?;
        Ok((user.id, payload))
    }

    // Generator.

    fn generator(&self, industry: &str) -> Result<Arc<GanModel>> {
        if let Some(m) = self.generators.read().unwrap_or_else(|p| p.into_inner()).get(industry) {
            return Ok(m.clone());
        }
        let registry = ModelRegistry::load(&self.gan_dir())?;
        let rel = registry.path_for(industry)?;
        let model = Arc::new(GanModel::load(&self.gan_dir().join(rel))?);
        self.generators
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(industry.to_string(), model.clone());
        Ok(model)
    }

    /// The images a generator retrain would use: each manifest asset at
    /// generator size plus its augmented copies, or every industry asset
    /// when no round has been settled.
    pub fn generator_training_set(&self, industry: &str) -> Result<(Option<RetrainManifest>, Vec<(String, Tensor)>)> {
        self.industry(industry)?;
        let snapshot = self.store.snapshot();
        let size = self.config.gan.generator.output_size();
        let manifest = snapshot.latest_manifest(industry).cloned();
        let entries: Vec<(String, Vec<_>)> = match &manifest {
            Some(m) => m.entries.iter().map(|e| (e.asset_id.clone(), e.augmentations.clone())).collect(),
            None => snapshot.industry_assets(industry).map(|a| (a.id.clone(), Vec::new())).collect(),
        };
        let mut images = Vec::new();
        for (id, augs) in entries {
            let asset = snapshot
                .assets
                .get(&id)
                .ok_or_else(|| Error::NotFound(format!("manifest asset {id}")))?;
            let base = to_generator_size(&self.store.load_image(&asset.image)?, size)?;
            for a in &augs {
                images.push((id.clone(), augment(&base, a.recipe, a.seed)?));
            }
            images.push((id, base));
        }
        Ok((manifest, images))
    }

    /// Trains and publishes the generator of one industry.
    pub fn train_generator(&self, industry: &str) -> Result<GeneratorReport> {
        let (manifest, images) = self.generator_training_set(industry)?;
        let mut training_set: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
        training_set.sort();
        training_set.dedup();
        let tensors: Vec<Tensor> = images.into_iter().map(|(_, t)| t).collect();
        let steps = self.config.gan_steps;
        let (model, history) = GanModel::train(industry, &tensors, steps, &self.config.gan, &self.config.style, None)?;
        let file = format!("{industry}.ckpt");
        model.save(&self.gan_dir().join(&file))?;
        let mut registry = ModelRegistry::load(&self.gan_dir())?;
        registry.register(industry, PathBuf::from(file));
        registry.save(&self.gan_dir())?;
        self.generators
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(industry.to_string(), Arc::new(model));
        info!("generator for {industry} published after {steps} steps on {} images", tensors.len());
        Ok(GeneratorReport {
            industry: industry.to_string(),
            manifest_round: manifest.map(|m| m.round_id),
            training_set,
            images: tensors.len(),
            steps,
            final_d_loss: history.last().map(|s| s.d_loss),
            final_g_loss: history.last().map(|s| s.g_loss),
        })
    }

    // Rounds.

    fn next_round_id(&self) -> String {
        let snapshot = self.store.snapshot();
        loop {
            let n = self.next_round.fetch_add(1, Ordering::Relaxed);
            let id = format!("r{n:05}");
            if !snapshot.rounds.contains_key(&id) {
                return id;
            }
        }
    }

    /// Builds, persists and returns a round of `k` variants styled after
    /// the cohort's top assets, with `ceil(k/5)` originals shuffled in.
    pub fn generate(&self, user_id: &str, industry: &str, k: usize) -> Result<GenerationRound> {
        if !(1..=MAX_VARIANTS).contains(&k) {
            return Err(Error::invalid("num_variants", format!("{k} outside 1..={MAX_VARIANTS}")));
        }
        self.industry(industry)?;
        let user = self.find_user(user_id, None)?;
        let payload = user
            .inferred
            .clone()
            .ok_or_else(|| Error::Conflict(format!("user {} has no inferred type", user.id)))?;
        let anchor = MbtiType::try_from(&payload)?;
        let model = self.generator(industry)?;

        let snapshot = self.store.snapshot();
        let typed = snapshot
            .users
            .values()
            .filter_map(|u| u.inferred_type().or(u.mbti).map(|t| (u.id.as_str(), t)));
        let cohort = build_cohort(&anchor, typed, self.config.min_cohort);
        let assets: Vec<_> = snapshot.assets.values().cloned().collect();
        let ranking = rank_assets(&cohort, industry, &assets, &snapshot.engagements, snapshot.clock, &self.config.rank);
        if ranking.assets.is_empty() {
            return Err(Error::Unavailable(format!("no {industry} content to generate from")));
        }

        let round_id = self.next_round_id();
        let order_seed = derive_seed(&["order", &round_id]);
        let size = model.generator.output_size();
        let mut sources = BTreeMap::new();
        for s in &ranking.assets {
            let asset = &snapshot.assets[&s.asset_id];
            sources.insert(s.asset_id.clone(), to_generator_size(&self.store.load_image(&asset.image)?, size)?);
        }
        let source_at = |i: usize| &ranking.assets[i % ranking.assets.len()].asset_id;

        let mut pending: Vec<(Tensor, Card)> = Vec::with_capacity(k + originals_for(k));
        for i in 0..k {
            let src = source_at(i);
            let seed = derive_seed(&["variant", &round_id, &i.to_string()]);
            let v = generate_variants(&model, src, &sources[src], 1, self.config.lambda, seed)?
                .pop()
                .expect("one variant requested");
            pending.push((
                v.image,
                Card {
                    card_id: String::new(),
                    image: String::new(),
                    is_original: false,
                    source_asset_id: src.clone(),
                    variant: Some(v.meta),
                },
            ));
        }
        for j in 0..originals_for(k) {
            let src = source_at(j);
            pending.push((
                sources[src].clone(),
                Card {
                    card_id: String::new(),
                    image: String::new(),
                    is_original: true,
                    source_asset_id: src.clone(),
                    variant: None,
                },
            ));
        }
        pending.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));

        let mut cards = Vec::with_capacity(pending.len());
        for (pos, (image, mut card)) in pending.into_iter().enumerate() {
            card.card_id = format!("{round_id}-c{pos}");
            card.image = format!("rounds/{round_id}/{}.png", card.card_id);
            self.store.save_image(&card.image, &image)?;
            cards.push(card);
        }
        let round = GenerationRound {
            round_id,
            user_id: user.id,
            industry: industry.to_string(),
            created_at: snapshot.clock,
            order_seed,
            lambda: self.config.lambda,
            cold_start: cohort.cold_start || ranking.cold_start,
            context: CardContext {
                mbti: payload,
                cohort_size: cohort.size(),
                cohort_radius: cohort.radius,
            },
            cards,
            status: RoundStatus::Open,
        };
        self.store.put_round(round.clone())?;
        Ok(round)
    }

    pub fn round(&self, round_id: &str) -> Result<GenerationRound> {
        self.store
            .snapshot()
            .rounds
            .get(round_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("round {round_id}")))
    }

    pub fn submit_feedback(&self, record: FeedbackRecord) -> Result<()> {
        self.store.add_feedback(record)
    }

    pub fn close_round(&self, round_id: &str) -> Result<(Settlement, RetrainManifest)> {
        self.store.close_round(round_id)
    }

    // Retraining and the clock.

    /// Runs retrain requests in order on the calling thread.
    pub fn run_retrain(&self, requests: &[RetrainRequest]) -> Result<RetrainResult> {
        let mut result = RetrainResult::default();
        for req in requests {
            match (req.target, &req.industry) {
                (RetrainTarget::Profiler, _) => result.profiler = Some(self.train_profiler()?),
                (RetrainTarget::Generator, Some(industry)) => result.generators.push(self.train_generator(industry)?),
                (RetrainTarget::Generator, None) => {
                    for industry in &self.config.industries {
                        match self.train_generator(&industry.name) {
                            Ok(r) => result.generators.push(r),
                            Err(e @ Error::InsufficientData(_)) => {
                                result.skipped.push(format!("generator {}: {e}", industry.name))
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        Ok(result)
    }

    /// Starts a background retrain job. Only one job runs at a time.
    pub fn start_retrain(self: &Arc<Self>, requests: Vec<RetrainRequest>) -> Result<JobStatus> {
        for r in &requests {
            if let Some(i) = &r.industry {
                self.industry(i)?;
            }
        }
        let job = self.jobs.begin(requests, self.store.snapshot().clock)?;
        let pipeline = self.clone();
        let id = job.job_id.clone();
        let requests = job.requests.clone();
        std::thread::spawn(move || {
            let outcome = pipeline.run_retrain(&requests);
            if let Err(e) = &outcome {
                warn!("retrain job {id} failed: {e}");
            }
            pipeline.jobs.finish(&id, outcome);
        });
        Ok(job)
    }

    pub fn job(&self, job_id: &str) -> Result<JobStatus> {
        self.jobs.get(job_id)
    }

    /// Waits for a job to leave the running state.
    pub fn wait_job(&self, job_id: &str) -> Result<JobStatus> {
        self.jobs.wait(job_id)
    }

    fn run_ingestion(&self) -> Result<IngestSummary> {
        let mut total = IngestSummary::default();
        let sources = &self.config.sources;
        for dir in &sources.brand_dirs {
            let s = self.ingest(Some(dir), None)?;
            total.assets_admitted += s.assets_admitted;
            total.assets_skipped += s.assets_skipped;
            total.engagements_added += s.engagements_added;
        }
        for dir in &sources.user_dirs {
            total.users += self.ingest(None, Some(dir))?.users;
        }
        Ok(total)
    }

    /// Advances the logical clock by `hours` and runs what fell due.
    /// Ingestion runs inline; retrains are handed to one background job.
    pub fn tick(self: &Arc<Self>, hours: Timestamp) -> Result<TickReport> {
        let mut scheduler = Scheduler::new(self.config.cadence)?;
        scheduler.now = self.store.snapshot().clock;
        let due = scheduler.advance(hours);
        self.store.set_clock(scheduler.now)?;
        self.execute(due, scheduler.now)
    }

    /// Runs one task now, regardless of the clock.
    pub fn trigger(self: &Arc<Self>, task: Task) -> Result<TickReport> {
        let mut scheduler = Scheduler::new(self.config.cadence)?;
        scheduler.now = self.store.snapshot().clock;
        self.execute(vec![scheduler.trigger(task)], scheduler.now)
    }

    fn execute(self: &Arc<Self>, due: Vec<DueTask>, now: Timestamp) -> Result<TickReport> {
        let mut executed = Vec::with_capacity(due.len());
        let mut requests = Vec::new();
        for d in &due {
            let mut run = TaskRun {
                task: d.task,
                at: d.at,
                manual: d.manual,
                outcome: TaskOutcome::Executed,
                job_id: None,
                detail: None,
            };
            match d.task {
                Task::Ingestion => match self.run_ingestion() {
                    Ok(s) => run.detail = Some(serde_json::to_string(&s)?),
                    Err(e) => {
                        run.outcome = TaskOutcome::Skipped;
                        run.detail = Some(e.to_string());
                    }
                },
                Task::ProfilerRetrain | Task::GeneratorRetrain => {
                    let target = if d.task == Task::ProfilerRetrain {
                        RetrainTarget::Profiler
                    } else {
                        RetrainTarget::Generator
                    };
                    let req = RetrainRequest { target, industry: None };
                    if !requests.contains(&req) {
                        requests.push(req);
                    }
                    run.outcome = TaskOutcome::Started;
                }
            }
            executed.push(run);
        }
        if !requests.is_empty() {
            let (job_id, detail) = match self.start_retrain(requests) {
                Ok(job) => (Some(job.job_id), None),
                Err(e @ Error::Conflict(_)) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            for run in executed.iter_mut().filter(|r| r.outcome == TaskOutcome::Started) {
                run.job_id = job_id.clone();
                if let Some(d) = &detail {
                    run.outcome = TaskOutcome::Skipped;
                    run.detail = Some(d.clone());
                }
            }
        }
        Ok(TickReport { now, executed })
    }
}

