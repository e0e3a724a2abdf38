//! Client-visible payloads. Cards never carry originality or source ids.

use serde::{Deserialize, Serialize};

use crate::feedback::{Compliance, RetrainManifest, Settlement, YesNo};
use crate::mbti::{AxisProbabilities, MbtiPayload};
use crate::store::{GenerationRound, Platform, RoundStatus, Timestamp};

pub const API_PREFIX: &str = "/api/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequest {
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(default)]
    pub handle: Option<String>,
    #[serde(default)]
    pub platform: Option<Platform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub user_id: String,
    pub mbti: String,
    pub probabilities: AxisProbabilities,
}

impl InferResponse {
    pub fn new(user_id: String, p: MbtiPayload) -> Self {
        Self {
            user_id,
            mbti: p.mbti,
            probabilities: p.probabilities,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub user_id: String,
    pub industry: String,
    #[serde(default = "default_variants")]
    pub num_variants: usize,
}

fn default_variants() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextView {
    pub mbti: String,
    pub probabilities: AxisProbabilities,
    pub cohort_size: usize,
    pub cohort_radius: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardView {
    pub card_id: String,
    pub image_url: String,
    pub context: ContextView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round_id: String,
    pub user_id: String,
    pub industry: String,
    pub status: RoundStatus,
    pub created_at: Timestamp,
    pub cold_start: bool,
    pub context: ContextView,
    pub cards: Vec<CardView>,
    /// Cards that already have feedback, in card order.
    pub rated_cards: Vec<String>,
}

impl RoundView {
    pub fn new(round: &GenerationRound, rated: &[String]) -> Self {
        let context = ContextView {
            mbti: round.context.mbti.mbti.clone(),
            probabilities: round.context.mbti.probabilities,
            cohort_size: round.context.cohort_size,
            cohort_radius: round.context.cohort_radius,
        };
        Self {
            round_id: round.round_id.clone(),
            user_id: round.user_id.clone(),
            industry: round.industry.clone(),
            status: round.status,
            created_at: round.created_at,
            cold_start: round.cold_start,
            cards: round
                .cards
                .iter()
                .map(|c| CardView {
                    card_id: c.card_id.clone(),
                    image_url: format!("{API_PREFIX}/rounds/{}/cards/{}/image", round.round_id, c.card_id),
                    context: context.clone(),
                })
                .collect(),
            rated_cards: round
                .cards
                .iter()
                .filter(|c| rated.contains(&c.card_id))
                .map(|c| c.card_id.clone())
                .collect(),
            context,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub round_id: String,
    pub card_id: String,
    pub attractiveness: u32,
    pub preference: u32,
    pub compliance: Compliance,
    pub would_click: YesNo,
    /// Defaults to the logical clock.
    #[serde(default)]
    pub timestamp: Option<Timestamp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub round_id: String,
    pub card_id: String,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prioritized {
    pub asset_id: String,
    pub multiplicity: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseSummary {
    pub round_id: String,
    pub industry: String,
    pub penalized: Vec<String>,
    pub prioritized: Vec<Prioritized>,
    pub manifest: RetrainManifest,
}

impl CloseSummary {
    pub fn new(s: &Settlement, manifest: RetrainManifest) -> Self {
        Self {
            round_id: s.round_id.clone(),
            industry: manifest.industry.clone(),
            penalized: s.penalized(),
            prioritized: s
                .prioritized()
                .into_iter()
                .map(|(asset_id, multiplicity)| Prioritized { asset_id, multiplicity })
                .collect(),
            manifest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRequest {
    pub hours: Timestamp,
}
