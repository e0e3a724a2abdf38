mod common;

use std::sync::Arc;

use common::flow::{fast_config, fixture, rating, INDUSTRY};
use personaforge::feedback::schedule::Task;
use personaforge::pipeline::{originals_for, Pipeline, JobState, RetrainRequest, RetrainTarget, TaskOutcome};
use personaforge::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn originals_are_one_per_five_variants() {
    assert_eq!((1..=8).map(originals_for).collect::<Vec<_>>(), [1, 1, 1, 1, 1, 2, 2, 2]);
}

#[test]
fn ingest_respects_keywords_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (_, layout) = fixture(dir.path(), fast_config());
    let mut config = fast_config();
    config.industries[1].keywords = vec!["nothing-matches".into()];
    let p = Pipeline::open(dir.path().join("other"), config).unwrap();
    let s = p.ingest(Some(&layout.brand_dir), Some(&layout.user_dir)).unwrap();
    assert_eq!(s.assets_admitted, 36);
    assert_eq!(s.users, 40);
    assert!(s.engagements_added > 0);
    let again = p.ingest(Some(&layout.brand_dir), Some(&layout.user_dir)).unwrap();
    assert_eq!(again.engagements_added, 0);
    let snap = p.store().snapshot();
    assert_eq!(snap.assets.len(), 36);
    assert!(snap.assets.values().all(|a| a.industry == INDUSTRY));
}

#[test]
fn generation_round_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let (p, layout) = fixture(dir.path(), fast_config());
    p.ingest(Some(&layout.brand_dir), Some(&layout.user_dir)).unwrap();

    assert!(matches!(p.infer("u0001"), Err(Error::NotTrained(_))));
    assert!(matches!(p.generate("u0001", INDUSTRY, 5), Err(Error::Conflict(_))));
    let report = p.train_profiler().unwrap();
    assert_eq!(report.users, 40);
    let (uid, first) = p.infer("user0001").unwrap();
    assert_eq!(uid, "u0001");
    assert_eq!(p.infer("u0001").unwrap().1, first);
    assert!(matches!(p.infer("ghost"), Err(Error::NotFound(_))));

    assert!(matches!(p.generate("u0001", INDUSTRY, 5), Err(Error::NotTrained(_))));
    assert!(matches!(p.generate("u0001", "aerospace", 5), Err(Error::NotFound(_))));
    assert!(matches!(p.generate("u0001", INDUSTRY, 9), Err(Error::Invalid { .. })));
    let g = p.train_generator(INDUSTRY).unwrap();
    assert_eq!(g.manifest_round, None);
    assert_eq!(g.training_set.len(), 36);

    let round = p.generate("u0001", INDUSTRY, 5).unwrap();
    assert_eq!(round.cards.len(), 6);
    assert_eq!(round.cards.iter().filter(|c| c.is_original).count(), 1);
    for (i, c) in round.cards.iter().enumerate() {
        assert_eq!(c.card_id, format!("{}-c{i}", round.round_id));
        let img = p.store().load_image(&c.image).unwrap();
        assert_eq!(img.shape(), [3, 32, 32]);
    }
    assert_eq!(p.round(&round.round_id).unwrap(), round);

    // The stored seed replays the order: unshuffled, variants come first.
    let mut slots: Vec<bool> = (0..6).map(|i| i >= 5).collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(round.order_seed));
    let served: Vec<bool> = round.cards.iter().map(|c| c.is_original).collect();
    assert_eq!(served, slots);

    let variants: Vec<_> = round.cards.iter().filter(|c| !c.is_original).collect();
    for (i, c) in variants.iter().enumerate() {
        p.submit_feedback(rating(&round.round_id, &c.card_id, i % 2 == 0, 1)).unwrap();
    }
    let (settlement, manifest) = p.close_round(&round.round_id).unwrap();
    for id in settlement.penalized() {
        assert!(!manifest.contains(&id));
    }
    assert!(matches!(
        p.submit_feedback(rating(&round.round_id, &variants[0].card_id, true, 2)),
        Err(Error::Conflict(_))
    ));

    let (_, images) = p.generator_training_set(INDUSTRY).unwrap();
    let retrained = p.train_generator(INDUSTRY).unwrap();
    assert_eq!(retrained.manifest_round.as_deref(), Some(round.round_id.as_str()));
    let listed: Vec<&str> = retrained.training_set.iter().map(String::as_str).collect();
    let mut expected = manifest.asset_ids();
    expected.sort();
    assert_eq!(listed, expected);
    assert_eq!(retrained.images, images.len());
    let augmented: usize = manifest.entries.iter().map(|e| e.augmentations.len()).sum();
    assert_eq!(images.len(), manifest.entries.len() + augmented);

    let next = p.generate("u0001", INDUSTRY, 6).unwrap();
    assert_ne!(next.round_id, round.round_id);
    assert_eq!(next.cards.len(), 8);
}

#[test]
fn tick_runs_due_tasks_and_retrain_jobs_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fast_config();
    let layout_dir = dir.path().join("corpus");
    config.sources.brand_dirs = vec![layout_dir.join("brand")];
    let (p, layout) = fixture(dir.path(), config);
    let p = Arc::new(p);
    p.ingest(None, Some(&layout.user_dir)).unwrap();
    assert!(p.store().snapshot().assets.is_empty());

    assert!(p.tick(0).unwrap().executed.is_empty());
    let t = p.tick(12).unwrap();
    assert_eq!(t.now, 12);
    assert_eq!(t.executed.len(), 1);
    assert_eq!((t.executed[0].task, t.executed[0].outcome.clone()), (Task::Ingestion, TaskOutcome::Executed));
    assert_eq!(p.store().snapshot().assets.len(), 72);

    let t = p.tick(12).unwrap();
    let tasks: Vec<Task> = t.executed.iter().map(|r| r.task).collect();
    assert_eq!(tasks, [Task::Ingestion, Task::GeneratorRetrain]);
    let job_id = t.executed[1].job_id.clone().unwrap();
    assert!(matches!(
        p.start_retrain(vec![RetrainRequest { target: RetrainTarget::Profiler, industry: None }]),
        Err(Error::Conflict(_))
    ));
    let done = p.wait_job(&job_id).unwrap();
    assert_eq!(done.state, JobState::Succeeded, "{:?}", done.error);
    assert_eq!(done.result.unwrap().generators.len(), 2);
    assert_eq!(p.store().snapshot().clock, 24);

    let manual = p.trigger(Task::ProfilerRetrain).unwrap();
    assert!(manual.executed[0].manual);
    let job = p.wait_job(manual.executed[0].job_id.as_deref().unwrap()).unwrap();
    assert_eq!(job.state, JobState::Succeeded, "{:?}", job.error);
    assert!(job.result.unwrap().profiler.is_some());
}
