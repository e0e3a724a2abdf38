use serde::{Deserialize, Serialize};

use crate::encoders::MAX_IMAGES;
use crate::error::{Error, Result};
use crate::feedback::VariantCard;
use crate::gan::VariantMeta;
use crate::mbti::{MbtiPayload, MbtiType};

/// Logical time in hours.
pub type Timestamp = u64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    #[default]
    Twitter,
    Instagram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentAsset {
    pub id: String,
    pub brand_id: String,
    pub industry: String,
    /// Image file name under the store's `images/` directory.
    pub image: String,
    #[serde(default)]
    pub caption: String,
    pub created_at: Timestamp,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl ContentAsset {
    /// Case-insensitive match of any keyword against the caption or tags.
    /// An empty keyword set matches everything.
    pub fn matches_keywords(&self, keywords: &[String]) -> bool {
        if keywords.is_empty() {
            return true;
        }
        let caption = self.caption.to_lowercase();
        let tags: Vec<String> = self.tags.iter().map(|t| t.to_lowercase()).collect();
        keywords.iter().any(|k| {
            let k = k.to_lowercase();
            caption.contains(&k) || tags.iter().any(|t| t.contains(&k))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialPost {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub images: Vec<String>,
    pub timestamp: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    #[serde(default)]
    pub handle: String,
    #[serde(default)]
    pub platform: Platform,
    /// Most recent first.
    #[serde(default)]
    pub posts: Vec<SocialPost>,
    /// Declared or ground-truth type, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbti: Option<MbtiType>,
    /// Latest profiler output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inferred: Option<MbtiPayload>,
    /// Images selected for encoding (the most recent ones).
    #[serde(default)]
    pub flagged_images: Vec<String>,
}

impl UserProfile {
    pub fn new(id: impl Into<String>, handle: impl Into<String>, platform: Platform) -> Self {
        Self {
            id: id.into(),
            handle: handle.into(),
            platform,
            posts: Vec::new(),
            mbti: None,
            inferred: None,
            flagged_images: Vec::new(),
        }
    }

    /// Sorts posts newest first (ties by id) and refreshes the image flags.
    pub fn normalize(&mut self) {
        self.posts
            .sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then_with(|| a.id.cmp(&b.id)));
        self.flagged_images = self.recent_images(MAX_IMAGES);
    }

    /// Merges posts by id; existing posts are replaced, not duplicated.
    pub fn merge_posts(&mut self, posts: impl IntoIterator<Item = SocialPost>) {
        for p in posts {
            match self.posts.iter_mut().find(|q| q.id == p.id) {
                Some(q) => *q = p,
                None => self.posts.push(p),
            }
        }
        self.normalize();
    }

    /// Up to `n` image refs, newest post first.
    pub fn recent_images(&self, n: usize) -> Vec<String> {
        self.posts.iter().flat_map(|p| p.images.iter().cloned()).take(n).collect()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.posts.iter().filter(|p| !p.text.is_empty()).map(|p| p.text.as_str())
    }

    pub fn inferred_type(&self) -> Option<MbtiType> {
        self.inferred.as_ref().and_then(|p| MbtiType::try_from(p).ok())
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("id", "user id is empty"));
        }
        for p in &self.posts {
            if p.text.is_empty() && p.images.is_empty() {
                return Err(Error::invalid("posts", format!("post {} has neither text nor images", p.id)));
            }
        }
        Ok(())
    }
}

/// Shown next to every card of a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardContext {
    pub mbti: MbtiPayload,
    pub cohort_size: usize,
    pub cohort_radius: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub card_id: String,
    /// Image path under the store's `images/` directory.
    pub image: String,
    /// Server-side only; never part of a client payload.
    pub is_original: bool,
    pub source_asset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantMeta>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRound {
    pub round_id: String,
    pub user_id: String,
    pub industry: String,
    pub created_at: Timestamp,
    /// Seed of the card shuffle that places the originals.
    pub order_seed: u64,
    pub lambda: f64,
    /// The cohort was empty and sources came from the industry-wide ranking.
    pub cold_start: bool,
    pub context: CardContext,
    pub cards: Vec<Card>,
    pub status: RoundStatus,
}

impl GenerationRound {
    pub fn card(&self, card_id: &str) -> Option<&Card> {
        self.cards.iter().find(|c| c.card_id == card_id)
    }

    pub fn variant_cards(&self) -> Vec<VariantCard> {
        self.cards
            .iter()
            .filter(|c| !c.is_original)
            .map(|c| VariantCard {
                card_id: c.card_id.clone(),
                source_id: c.source_asset_id.clone(),
            })
            .collect()
    }

    pub fn source_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.cards.iter().map(|c| c.source_asset_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
