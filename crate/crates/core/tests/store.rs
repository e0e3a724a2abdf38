use personaforge::cohort::EngagementRecord;
use personaforge::feedback::{Compliance, FeedbackRecord, YesNo};
use personaforge::mbti::{MbtiPayload, MbtiType};
use personaforge::store::{
    Card, CardContext, ContentAsset, GenerationRound, Platform, RoundStatus, SocialPost, Store, UserProfile,
};
use personaforge::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_asset(i: usize, rng: &mut ChaCha8Rng) -> ContentAsset {
    ContentAsset {
        id: format!("asset{i}"),
        brand_id: format!("brand{}", rng.random_range(0..5)),
        industry: ["automobile", "fast_food", "fashion"][rng.random_range(0..3)].into(),
        image: format!("assets/asset{i}.png"),
        caption: format!("caption {}", rng.random::<u32>()),
        created_at: rng.random_range(0..1000),
        tags: (0..rng.random_range(0..3)).map(|t| format!("tag{t}")).collect(),
    }
}

fn random_user(i: usize, rng: &mut ChaCha8Rng) -> UserProfile {
    let mut u = UserProfile::new(format!("user{i}"), format!("handle{i}"), Platform::Twitter);
    let posts = (0..rng.random_range(0..6))
        .map(|p| SocialPost {
            id: format!("u{i}p{p}"),
            text: format!("hello {}", rng.random::<u16>()),
            images: if rng.random() { vec![format!("users/user{i}/{p}.png")] } else { vec![] },
            timestamp: rng.random_range(0..500),
        })
        .collect::<Vec<_>>();
    u.merge_posts(posts);
    if rng.random() {
        u.mbti = Some(MbtiType::all_types()[rng.random_range(0..16)]);
    }
    if rng.random() {
        let t = MbtiType::from_probabilities(std::array::from_fn(|_| rng.random())).unwrap();
        u.inferred = Some(MbtiPayload::from(&t));
    }
    u
}

fn round(id: &str, industry: &str) -> GenerationRound {
    let t = MbtiType::all_types()[3];
    GenerationRound {
        round_id: id.into(),
        user_id: "user0".into(),
        industry: industry.into(),
        created_at: 0,
        order_seed: 9,
        lambda: 0.7,
        cold_start: false,
        context: CardContext {
            mbti: MbtiPayload::from(&t),
            cohort_size: 3,
            cohort_radius: 0,
        },
        cards: (0..3)
            .map(|i| Card {
                card_id: format!("{id}-c{i}"),
                image: format!("rounds/{id}/{i}.png"),
                is_original: i == 2,
                source_asset_id: format!("asset{i}"),
                variant: None,
            })
            .collect(),
        status: RoundStatus::Open,
    }
}

fn feedback(round: &str, card: &str, preference: u32) -> FeedbackRecord {
    FeedbackRecord {
        round_id: round.into(),
        card_id: card.into(),
        attractiveness: 70,
        preference,
        compliance: Compliance::Yes,
        would_click: YesNo::No,
        timestamp: 1,
    }
}

#[test]
fn empty_store_roundtrips_to_empty() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path()).unwrap();
    s.compact().unwrap();
    let again = Store::open(dir.path()).unwrap();
    assert_eq!(*again.snapshot(), Default::default());
}

#[test]
fn randomized_store_roundtrips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let store = Store::open(dir.path()).unwrap();
    store.upsert_assets((0..50).map(|i| random_asset(i, &mut rng)).collect()).unwrap();
    for i in 0..20 {
        store.upsert_user(random_user(i, &mut rng)).unwrap();
    }
    // Overwrite a few to exercise last-wins replay.
    store.upsert_assets((0..5).map(|i| random_asset(i, &mut rng)).collect()).unwrap();
    store.upsert_user(random_user(3, &mut rng)).unwrap();
    let records: Vec<EngagementRecord> = (0..40)
        .map(|_| EngagementRecord {
            user_id: format!("user{}", rng.random_range(0..20)),
            asset_id: format!("asset{}", rng.random_range(0..50)),
            clicks: rng.random_range(0..4),
            likes: rng.random_range(0..4),
            engagements: rng.random_range(0..4),
            timestamp: rng.random_range(0..100),
        })
        .collect();
    store.add_engagements(records).unwrap();
    store.put_round(round("r1", "fashion")).unwrap();
    store.add_feedback(feedback("r1", "r1-c0", 5)).unwrap();
    store.close_round("r1").unwrap();
    store.set_clock(36).unwrap();
    let before = store.snapshot();

    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(*reopened.snapshot(), *before);
    reopened.compact().unwrap();
    let compacted = Store::open(dir.path()).unwrap();
    assert_eq!(*compacted.snapshot(), *before);
}

#[test]
fn snapshots_do_not_see_later_writes() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let snap = store.snapshot();
    store.upsert_assets(vec![random_asset(0, &mut rng)]).unwrap();
    assert!(snap.assets.is_empty());
    assert_eq!(store.snapshot().assets.len(), 1);
}

#[test]
fn upserts_and_engagements_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_asset(0, &mut rng);
    assert_eq!(store.upsert_assets(vec![a.clone()]).unwrap(), 1);
    assert_eq!(store.upsert_assets(vec![a]).unwrap(), 0);
    let r = EngagementRecord {
        user_id: "u".into(),
        asset_id: "asset0".into(),
        clicks: 1,
        likes: 0,
        engagements: 0,
        timestamp: 0,
    };
    assert_eq!(store.add_engagements(vec![r.clone(), r.clone()]).unwrap(), 1);
    assert_eq!(store.add_engagements(vec![r]).unwrap(), 0);
}

#[test]
fn feedback_lifecycle_guards() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    store.put_round(round("r", "fashion")).unwrap();
    let mut bad = feedback("r", "r-c0", 3);
    bad.attractiveness = 101;
    assert!(matches!(store.add_feedback(bad), Err(Error::Invalid { .. })));
    assert!(matches!(store.add_feedback(feedback("nope", "x", 3)), Err(Error::NotFound(_))));
    assert!(matches!(store.add_feedback(feedback("r", "missing", 3)), Err(Error::NotFound(_))));
    store.add_feedback(feedback("r", "r-c1", 4)).unwrap();
    let (settlement, manifest) = store.close_round("r").unwrap();
    assert_eq!(settlement.penalized(), ["asset0"]);
    assert!(!manifest.contains("asset0"));
    assert!(matches!(store.add_feedback(feedback("r", "r-c0", 5)), Err(Error::Conflict(_))));
    assert!(matches!(store.close_round("r"), Err(Error::Conflict(_))));
    assert_eq!(store.snapshot().settlements.len(), 1);
}

#[test]
fn corrupt_journal_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        store.upsert_assets(vec![random_asset(0, &mut rng)]).unwrap();
    }
    let path = dir.path().join("assets.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"id\": 5}\n");
    std::fs::write(&path, text).unwrap();
    match Store::open(dir.path()) {
        Err(Error::Corrupt { line, path: p, .. }) => {
            assert_eq!(line, 3);
            assert!(p.ends_with("assets.jsonl"));
        }
        other => panic!("{other:?}"),
    }
}
