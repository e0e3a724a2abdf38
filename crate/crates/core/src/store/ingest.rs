//! Loading brand and user corpora from local directories.
//!
//! Brand corpus: `assets.jsonl` (one [`ContentAsset`] per line, `image`
//! naming a PNG under `images/`) and optionally `engagements.jsonl`.
//! User corpus: `users.jsonl` (one [`UserProfile`] per line, post images
//! under `images/`).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::model::{ContentAsset, UserProfile};
use super::Store;
use crate::cohort::EngagementRecord;
use crate::error::{Error, Result};
use crate::imageio::load_png;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Records that passed every filter and are now in the store.
    pub admitted: usize,
    /// Records filtered out by industry or keyword.
    pub filtered: usize,
    /// Malformed records or unreadable images.
    pub skipped: usize,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => e.into(),
    })?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty())))
}

/// A readable square RGB image whose side halves down to 32.
fn check_image(path: &Path) -> Result<()> {
    let t = load_png(path)?;
    match *t.shape() {
        [3, h, w] if h == w && h >= 32 && (h / 32).is_power_of_two() && h % 32 == 0 => Ok(()),
        ref s => Err(Error::dim(format!("{} has shape {s:?}", path.display()))),
    }
}

/// Upserts the assets of `dir` whose industry is in `industries` (all when
/// empty) and whose caption or tags match any of `keywords` (all when
/// empty). Images are copied into the store as `assets/<id>.png`.
pub fn ingest_brand_corpus(store: &Store, dir: &Path, industries: &[String], keywords: &[String]) -> Result<IngestReport> {
    ingest_brand_corpus_with(store, dir, &|a| {
        (industries.is_empty() || industries.contains(&a.industry)) && a.matches_keywords(keywords)
    })
}

/// Like [`ingest_brand_corpus`] with an arbitrary admission rule.
pub fn ingest_brand_corpus_with(store: &Store, dir: &Path, admit: &dyn Fn(&ContentAsset) -> bool) -> Result<IngestReport> {
    let path = dir.join("assets.jsonl");
    let mut report = IngestReport::default();
    let mut admitted = Vec::new();
    for (line_no, line) in open_lines(&path)? {
        let mut asset: ContentAsset = match serde_json::from_str(&line?) {
            Ok(a) => a,
            Err(e) => {
                warn!("{}:{line_no}: skipping malformed asset: {e}", path.display());
                report.skipped += 1;
                continue;
            }
        };
        if asset.id.is_empty() {
            warn!("{}:{line_no}: skipping asset without id", path.display());
            report.skipped += 1;
            continue;
        }
        if !admit(&asset) {
            report.filtered += 1;
            continue;
        }
        let src = dir.join("images").join(&asset.image);
        if let Err(e) = check_image(&src) {
            warn!("{}:{line_no}: skipping asset {}: {e}", path.display(), asset.id);
            report.skipped += 1;
            continue;
        }
        let rel = format!("assets/{}.png", asset.id);
        let dst = store.image_path(&rel);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::copy(&src, &dst)?;
        asset.image = rel;
        admitted.push(asset);
    }
    report.admitted = admitted.len();
    store.upsert_assets(admitted)?;
    Ok(report)
}

/// Appends engagement records from a JSONL file, skipping exact repeats
/// and malformed lines. Returns the number of new records.
pub fn ingest_engagements(store: &Store, path: &Path) -> Result<usize> {
    let mut records = Vec::new();
    for (line_no, line) in open_lines(path)? {
        match serde_json::from_str::<EngagementRecord>(&line?) {
            Ok(r) => records.push(r),
            Err(e) => warn!("{}:{line_no}: skipping malformed engagement: {e}", path.display()),
        }
    }
    store.add_engagements(records)
}

/// Stores the timelines in `dir/users.jsonl`, or only the one matching
/// `handle` (by handle or id). Posts merge by id, so re-ingesting is
/// idempotent; a stored inference is kept. Images are copied to
/// `users/<user id>/`.
pub fn ingest_user_timeline(store: &Store, dir: &Path, handle: Option<&str>) -> Result<Vec<UserProfile>> {
    let path = dir.join("users.jsonl");
    let mut out = Vec::new();
    for (line_no, line) in open_lines(&path)? {
        let incoming: UserProfile = match serde_json::from_str(&line?) {
            Ok(u) => u,
            Err(e) => {
                warn!("{}:{line_no}: skipping malformed user: {e}", path.display());
                continue;
            }
        };
        if handle.is_some_and(|h| h != incoming.handle && h != incoming.id) {
            continue;
        }
        if incoming.id.is_empty() {
            warn!("{}:{line_no}: skipping user without id", path.display());
            continue;
        }
        let mut posts = Vec::with_capacity(incoming.posts.len());
        for mut post in incoming.posts {
            let mut kept = Vec::new();
            for name in &post.images {
                let src = dir.join("images").join(name);
                if let Err(e) = load_png(&src) {
                    warn!("user {}: dropping image {name}: {e}", incoming.id);
                    continue;
                }
                let rel = format!("users/{}/{name}", incoming.id);
                let dst = store.image_path(&rel);
                if let Some(parent) = dst.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::copy(&src, &dst)?;
                kept.push(rel);
            }
            post.images = kept;
            if post.text.is_empty() && post.images.is_empty() {
                warn!("user {}: dropping empty post {}", incoming.id, post.id);
                continue;
            }
            posts.push(post);
        }
        let snapshot = store.snapshot();
        let mut user = snapshot.users.get(&incoming.id).cloned().unwrap_or_else(|| {
            UserProfile::new(incoming.id.clone(), incoming.handle.clone(), incoming.platform)
        });
        user.handle = incoming.handle;
        user.platform = incoming.platform;
        if incoming.mbti.is_some() {
            user.mbti = incoming.mbti;
        }
        user.merge_posts(posts);
        store.upsert_user(user.clone())?;
        out.push(user);
    }
    if let (Some(h), true) = (handle, out.is_empty()) {
        return Err(Error::NotFound(format!("user {h} in {}", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::save_png;
    use crate::store::{Platform, SocialPost};
    use crate::tensor::Tensor;
    use std::io::Write;

    fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) {
        let mut f = File::create(path).unwrap();
        for r in rows {
            writeln!(f, "{}", serde_json::to_string(r).unwrap()).unwrap();
        }
    }

    fn asset(id: &str, industry: &str, caption: &str) -> ContentAsset {
        ContentAsset {
            id: id.into(),
            brand_id: "brand".into(),
            industry: industry.into(),
            image: format!("{id}.png"),
            caption: caption.into(),
            created_at: 1,
            tags: vec![],
        }
    }

    fn brand_dir(assets: &[ContentAsset]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for a in assets {
            save_png(&dir.path().join("images").join(&a.image), &Tensor::zeros(&[3, 64, 64])).unwrap();
        }
        write_jsonl(&dir.path().join("assets.jsonl"), assets);
        dir
    }

    #[test]
    fn keyword_and_industry_filters_match_a_linear_scan() {
        let assets = vec![
            asset("a1", "fast_food", "Best Burger in town"),
            asset("a2", "fast_food", "fries"),
            asset("a3", "fashion", "burger print shirt"),
            asset("a4", "fast_food", "BURGER deal"),
        ];
        let dir = brand_dir(&assets);
        let store_dir = tempfile::tempdir().unwrap();
        let store = Store::open(store_dir.path()).unwrap();
        let inds = vec!["fast_food".to_string()];
        let kws = vec!["burger".to_string()];
        let r = ingest_brand_corpus(&store, dir.path(), &inds, &kws).unwrap();
        let oracle = assets
            .iter()
            .filter(|a| a.industry == "fast_food" && a.caption.to_lowercase().contains("burger"))
            .count();
        assert_eq!(r.admitted, oracle);
        assert_eq!(r.filtered, 2);
        let again = ingest_brand_corpus(&store, dir.path(), &inds, &kws).unwrap();
        assert_eq!(again.admitted, oracle);
        assert_eq!(store.snapshot().assets.len(), oracle);
        assert!(store.image_path("assets/a1.png").exists());
    }

    #[test]
    fn bad_lines_and_images_are_skipped() {
        let dir = brand_dir(&[asset("ok", "fashion", "")]);
        let mut f = std::fs::OpenOptions::new().append(true).open(dir.path().join("assets.jsonl")).unwrap();
        writeln!(f, "not json").unwrap();
        writeln!(f, "{}", serde_json::to_string(&asset("noimg", "fashion", "")).unwrap()).unwrap();
        let store_dir = tempfile::tempdir().unwrap();
        let store = Store::open(store_dir.path()).unwrap();
        let r = ingest_brand_corpus(&store, dir.path(), &[], &[]).unwrap();
        assert_eq!((r.admitted, r.skipped), (1, 2));
    }

    #[test]
    fn user_timelines_merge_idempotently() {
        let dir = tempfile::tempdir().unwrap();
        let mut u = UserProfile::new("u1", "alice", Platform::Instagram);
        u.posts = (0..12)
            .map(|i| SocialPost {
                id: format!("p{i}"),
                text: format!("post {i}"),
                images: vec![format!("i{i}.png")],
                timestamp: i,
            })
            .collect();
        for i in 0..12 {
            save_png(&dir.path().join("images").join(format!("i{i}.png")), &Tensor::zeros(&[3, 8, 8])).unwrap();
        }
        write_jsonl(&dir.path().join("users.jsonl"), &[u]);
        let store_dir = tempfile::tempdir().unwrap();
        let store = Store::open(store_dir.path()).unwrap();
        let got = ingest_user_timeline(&store, dir.path(), Some("alice")).unwrap();
        assert_eq!(got[0].flagged_images.len(), 10);
        assert_eq!(got[0].flagged_images[0], "users/u1/i11.png");
        ingest_user_timeline(&store, dir.path(), None).unwrap();
        assert_eq!(store.snapshot().users["u1"].posts.len(), 12);
        assert!(matches!(
            ingest_user_timeline(&store, dir.path(), Some("bob")),
            Err(Error::NotFound(_))
        ));
        let missing = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_user_timeline(&store, missing.path(), None), Err(Error::NotFound(_))));
    }
}
