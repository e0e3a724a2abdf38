//! Same-personality cohorts and engagement-based asset ranking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mbti::{mbti_distance, MbtiType};
use crate::store::{ContentAsset, Timestamp};

pub const DEFAULT_MIN_SIZE: usize = 5;
/// 30 days of logical hours.
pub const DEFAULT_WINDOW_HOURS: Timestamp = 30 * 24;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementRecord {
    pub user_id: String,
    pub asset_id: String,
    pub clicks: u64,
    pub likes: u64,
    pub engagements: u64,
    pub timestamp: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub anchor: MbtiType,
    /// Sorted member ids.
    pub members: Vec<String>,
    /// Hamming radius used, 0 or 1.
    pub radius: u32,
    /// No user within radius 1; rankings fall back to all users.
    pub cold_start: bool,
}

impl Cohort {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Users whose type equals `anchor`; if fewer than `min_size`, those within
/// Hamming distance 1.
pub fn build_cohort<'a>(
    anchor: &MbtiType,
    users: impl IntoIterator<Item = (&'a str, MbtiType)>,
    min_size: usize,
) -> Cohort {
    let anchor = anchor.hard();
    let typed: Vec<(&str, u32)> = users
        .into_iter()
        .map(|(id, t)| (id, mbti_distance(&anchor, &t)))
        .collect();
    let within = |r: u32| -> Vec<String> {
        let set: BTreeSet<&str> = typed.iter().filter(|(_, d)| *d <= r).map(|(id, _)| *id).collect();
        set.into_iter().map(str::to_string).collect()
    };
    let exact = within(0);
    let (members, radius) = if exact.len() >= min_size { (exact, 0) } else { (within(1), 1) };
    Cohort {
        anchor,
        cold_start: members.is_empty(),
        members,
        radius,
    }
}

/// Per-record score weights. Integers keep rankings exactly invariant
/// under common rescaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngagementWeights {
    pub clicks: u64,
    pub likes: u64,
    pub engagements: u64,
}

impl Default for EngagementWeights {
    fn default() -> Self {
        Self {
            clicks: 3,
            likes: 1,
            engagements: 2,
        }
    }
}

impl EngagementWeights {
    pub fn score(&self, r: &EngagementRecord) -> u64 {
        self.clicks
            .saturating_mul(r.clicks)
            .saturating_add(self.likes.saturating_mul(r.likes))
            .saturating_add(self.engagements.saturating_mul(r.engagements))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub weights: EngagementWeights,
    /// Assets older than `now - window_hours` are ignored.
    pub window_hours: Timestamp,
    pub top_k: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            weights: EngagementWeights::default(),
            window_hours: DEFAULT_WINDOW_HOURS,
            top_k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredAsset {
    pub asset_id: String,
    pub score: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub assets: Vec<ScoredAsset>,
    /// Set when the cohort was empty (global fallback) or the industry has
    /// no asset in the window.
    pub cold_start: bool,
}

/// Top `top_k` industry assets created within the window ending at `now`,
/// scored by the weighted engagement of cohort members (all users when the
/// cohort is cold). Descending score, ties by ascending asset id. Assets
/// without engagement are still candidates, with score 0.
pub fn rank_assets(
    cohort: &Cohort,
    industry: &str,
    assets: &[ContentAsset],
    log: &[EngagementRecord],
    now: Timestamp,
    config: &RankConfig,
) -> Ranking {
    let start = now.saturating_sub(config.window_hours);
    let mut scores: BTreeMap<&str, u64> = assets
        .iter()
        .filter(|a| a.industry == industry && (start..=now).contains(&a.created_at))
        .map(|a| (a.id.as_str(), 0))
        .collect();
    let members: BTreeSet<&str> = cohort.members.iter().map(String::as_str).collect();
    for r in log {
        if !cohort.cold_start && !members.contains(r.user_id.as_str()) {
            continue;
        }
        if let Some(s) = scores.get_mut(r.asset_id.as_str()) {
            *s = s.saturating_add(config.weights.score(r));
        }
    }
    let mut ranked: Vec<ScoredAsset> = scores
        .into_iter()
        .map(|(id, score)| ScoredAsset {
            asset_id: id.to_string(),
            score,
        })
        .collect();
    // The map iterates ids ascending, so a stable sort keeps the tie rule.
    ranked.sort_by(|a, b| b.score.cmp(&a.score));
    let cold_start = cohort.cold_start || ranked.is_empty();
    ranked.truncate(config.top_k);
    Ranking {
        assets: ranked,
        cold_start,
    }
}

pub fn validate_weights(w: &EngagementWeights) -> Result<()> {
    if w.clicks == 0 && w.likes == 0 && w.engagements == 0 {
        return Err(Error::invalid("weights", "at least one engagement weight must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> MbtiType {
        s.parse().unwrap()
    }

    fn asset(id: &str, industry: &str, at: Timestamp) -> ContentAsset {
        ContentAsset {
            id: id.into(),
            brand_id: "b".into(),
            industry: industry.into(),
            image: format!("{id}.png"),
            caption: String::new(),
            created_at: at,
            tags: vec![],
        }
    }

    fn rec(user: &str, asset: &str, c: u64, l: u64, e: u64) -> EngagementRecord {
        EngagementRecord {
            user_id: user.into(),
            asset_id: asset.into(),
            clicks: c,
            likes: l,
            engagements: e,
            timestamp: 0,
        }
    }

    #[test]
    fn ten_exact_matches_need_no_expansion() {
        let ids: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let c = build_cohort(&t("ENTJ"), ids.iter().map(|i| (i.as_str(), t("ENTJ"))), 5);
        assert_eq!((c.radius, c.size(), c.cold_start), (0, 10, false));
    }

    #[test]
    fn small_exact_cohort_expands_to_radius_one() {
        let mut users: Vec<(String, MbtiType)> = vec![("a".into(), t("ENTJ")), ("b".into(), t("ENTJ"))];
        for (i, code) in ["INTJ", "ESTJ", "ENFJ", "ENTP", "INTJ", "ESTJ"].iter().enumerate() {
            users.push((format!("n{i}"), t(code)));
        }
        users.push(("far".into(), t("ISFP")));
        let c = build_cohort(&t("ENTJ"), users.iter().map(|(i, m)| (i.as_str(), *m)), 5);
        assert_eq!((c.radius, c.size()), (1, 8));
        assert!(!c.members.contains(&"far".to_string()));
    }

    #[test]
    fn nobody_nearby_is_a_cold_start() {
        let c = build_cohort(&t("ENTJ"), [("x", t("ISFP"))], 5);
        assert!(c.cold_start);
        assert!(c.members.is_empty());
    }

    #[test]
    fn single_record_scores_three_per_click() {
        let c = build_cohort(&t("ENTJ"), [("u", t("ENTJ"))], 1);
        let r = rank_assets(&c, "fashion", &[asset("a", "fashion", 10)], &[rec("u", "a", 1, 0, 0)], 10, &RankConfig::default());
        assert_eq!(r.assets, vec![ScoredAsset { asset_id: "a".into(), score: 3 }]);
    }

    #[test]
    fn equal_scores_rank_lower_id_first() {
        let c = build_cohort(&t("ENTJ"), [("u", t("ENTJ"))], 1);
        let assets = [asset("b", "fashion", 0), asset("a", "fashion", 0)];
        let log = [rec("u", "b", 0, 2, 0), rec("u", "a", 0, 0, 1)];
        let r = rank_assets(&c, "fashion", &assets, &log, 0, &RankConfig::default());
        let ids: Vec<&str> = r.assets.iter().map(|a| a.asset_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn other_industries_and_stale_assets_are_excluded() {
        let c = build_cohort(&t("ENTJ"), [("u", t("ENTJ"))], 1);
        let assets = [asset("old", "fashion", 0), asset("new", "fashion", 800), asset("car", "automobile", 800)];
        let r = rank_assets(&c, "fashion", &assets, &[], 800, &RankConfig::default());
        assert_eq!(r.assets.len(), 1);
        assert_eq!(r.assets[0].asset_id, "new");
        let none = rank_assets(&c, "fast_food", &assets, &[], 800, &RankConfig::default());
        assert!(none.cold_start && none.assets.is_empty());
    }

    #[test]
    fn cold_cohort_ranks_on_everyone() {
        let c = build_cohort(&t("ENTJ"), [("x", t("ISFP"))], 5);
        let assets = [asset("a", "fashion", 0), asset("b", "fashion", 0)];
        let r = rank_assets(&c, "fashion", &assets, &[rec("x", "b", 1, 0, 0)], 0, &RankConfig::default());
        assert!(r.cold_start);
        assert_eq!(r.assets[0].asset_id, "b");
    }

    #[test]
    fn all_zero_weights_are_rejected() {
        let w = EngagementWeights { clicks: 0, likes: 0, engagements: 0 };
        assert!(validate_weights(&w).is_err());
        assert!(validate_weights(&EngagementWeights::default()).is_ok());
    }

    proptest! {
        #[test]
        fn ranking_is_invariant_under_common_weight_rescaling(
            counts in prop::collection::vec((0usize..6, 0usize..4, 0u64..5, 0u64..5, 0u64..5), 0..30),
            factor in 1u64..20,
        ) {
            let users: Vec<(String, MbtiType)> = (0..6).map(|i| (format!("u{i}"), MbtiType::all_types()[i])).collect();
            let c = build_cohort(&MbtiType::all_types()[0], users.iter().map(|(i, m)| (i.as_str(), *m)), 2);
            let assets: Vec<ContentAsset> = (0..4).map(|i| asset(&format!("a{i}"), "fashion", 0)).collect();
            let log: Vec<EngagementRecord> = counts
                .iter()
                .map(|&(u, a, cl, li, en)| rec(&format!("u{u}"), &format!("a{a}"), cl, li, en))
                .collect();
            let base = RankConfig { top_k: 4, ..RankConfig::default() };
            let w = base.weights;
            let scaled = RankConfig {
                weights: EngagementWeights {
                    clicks: w.clicks * factor,
                    likes: w.likes * factor,
                    engagements: w.engagements * factor,
                },
                ..base.clone()
            };
            let ids = |r: Ranking| r.assets.into_iter().map(|a| a.asset_id).collect::<Vec<_>>();
            prop_assert_eq!(
                ids(rank_assets(&c, "fashion", &assets, &log, 0, &base)),
                ids(rank_assets(&c, "fashion", &assets, &log, 0, &scaled))
            );
        }

        #[test]
        fn members_respect_the_recorded_radius(types in prop::collection::vec(0usize..16, 0..25), anchor in 0usize..16, min in 0usize..8) {
            let all = MbtiType::all_types();
            let ids: Vec<String> = (0..types.len()).map(|i| format!("u{i}")).collect();
            let c = build_cohort(&all[anchor], ids.iter().zip(&types).map(|(i, &k)| (i.as_str(), all[k])), min);
            for (id, &k) in ids.iter().zip(&types) {
                let d = mbti_distance(&all[anchor], &all[k]);
                prop_assert_eq!(c.members.contains(id), d <= c.radius);
            }
        }
    }
}
