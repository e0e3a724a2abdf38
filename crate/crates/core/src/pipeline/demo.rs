//! Seeded on-disk corpora in the ingestion layout, for demos and tests.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IndustryConfig;
use crate::cohort::EngagementRecord;
use crate::error::Result;
use crate::imageio::{save_png, tensor_from_rgb};
use crate::store::ContentAsset;
use crate::train::corpus::random_shapes;
use crate::train::{synthesize_corpus, CorpusConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub users: usize,
    pub assets_per_industry: usize,
    /// Side of brand images; a multiple of 32.
    pub asset_size: usize,
    /// Side of user images.
    pub user_image_size: usize,
    /// Engagement records per user.
    pub engagements_per_user: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            users: 60,
            assets_per_industry: 40,
            asset_size: 64,
            user_image_size: 64,
            engagements_per_user: 6,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoLayout {
    pub brand_dir: PathBuf,
    pub user_dir: PathBuf,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `brand/` (assets, images, engagements) and `users/` under `dir`.
/// Captions carry the first keyword of their industry so keyword filters
/// admit them.
pub fn write_demo_corpus(dir: &Path, config: &DemoConfig, industries: &[IndustryConfig]) -> Result<DemoLayout> {
    let layout = DemoLayout {
        brand_dir: dir.join("brand"),
        user_dir: dir.join("users"),
    };
    let mut corpus_cfg = CorpusConfig::new(config.users, config.seed);
    corpus_cfg.image_size = config.user_image_size;
    let corpus = synthesize_corpus(&corpus_cfg)?;
    corpus.save(&layout.user_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xb7a9d);
    std::fs::create_dir_all(layout.brand_dir.join("images"))?;
    let mut assets = Vec::new();
    for industry in industries {
        let word = industry.keywords.first().map_or("new", String::as_str);
        for i in 0..config.assets_per_industry {
            let id = format!("{}-{i:03}", industry.name);
            let image = format!("{id}.png");
            save_png(
                &layout.brand_dir.join("images").join(&image),
                &tensor_from_rgb(&random_shapes(config.asset_size, &mut rng)),
            )?;
            assets.push(ContentAsset {
                id,
                brand_id: format!("{}-brand{}", industry.name, i % 3),
                industry: industry.name.clone(),
                image,
                caption: format!("our {word} collection no. {i}"),
                created_at: 0,
                tags: vec![industry.name.clone()],
            });
        }
    }
    write_jsonl(&layout.brand_dir.join("assets.jsonl"), &assets)?;

    let mut log = Vec::new();
    if !assets.is_empty() {
        for ex in &corpus.examples {
            for _ in 0..config.engagements_per_user {
                let asset = &assets[rng.random_range(0..assets.len())];
                log.push(EngagementRecord {
                    user_id: ex.profile.id.clone(),
                    asset_id: asset.id.clone(),
                    clicks: rng.random_range(0..4),
                    likes: rng.random_range(0..6),
                    engagements: rng.random_range(0..3),
                    timestamp: 0,
                });
            }
        }
    }
    write_jsonl(&layout.brand_dir.join("engagements.jsonl"), &log)?;
    Ok(layout)
}
