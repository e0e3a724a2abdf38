//! Settlement checks shared by the feedback tests and the acceptance run.

use personaforge::feedback::{
    build_manifest, settle_round, Compliance, FeedbackRecord, SourceLedger, VariantCard, YesNo,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn record(round: &str, card: &str, preference: u32, click: bool, t: u64) -> FeedbackRecord {
    FeedbackRecord {
        round_id: round.into(),
        card_id: card.into(),
        attractiveness: 50,
        preference,
        compliance: Compliance::DontKnow,
        would_click: if click { YesNo::Yes } else { YesNo::No },
        timestamp: t,
    }
}

/// Five variants from five sources, positive feedback on the first, third
/// and fourth. Returns a description of the first mismatch.
pub fn five_variant_scenario() -> Result<(), String> {
    let variants: Vec<VariantCard> = (1..=5)
        .map(|i| VariantCard {
            card_id: format!("gen{i}"),
            source_id: format!("src{i}"),
        })
        .collect();
    let feedback: Vec<FeedbackRecord> = (1..=5)
        .map(|i| {
            let positive = [1, 3, 4].contains(&i);
            record("r1", &format!("gen{i}"), if positive { 5 } else { 2 }, false, 1)
        })
        .collect();
    let s = settle_round("r1", &variants, &feedback).map_err(|e| e.to_string())?;
    if s.penalized() != ["src2", "src5"] {
        return Err(format!("penalized {:?}", s.penalized()));
    }
    let prioritized: Vec<String> = s.prioritized().into_iter().map(|(id, _)| id).collect();
    if prioritized != ["src1", "src3", "src4"] {
        return Err(format!("prioritized {prioritized:?}"));
    }
    let mut ledger = SourceLedger::default();
    ledger.apply(&s);
    let candidates: Vec<String> = (1..=8).map(|i| format!("src{i}")).collect();
    let m = build_manifest("r1", "fashion", &ledger, candidates.iter().map(String::as_str));
    for id in ["src2", "src5"] {
        if m.contains(id) {
            return Err(format!("{id} is penalized but in the manifest"));
        }
    }
    for id in &prioritized {
        let n = m.entries.iter().find(|e| &e.asset_id == id).map_or(0, |e| e.augmentations.len());
        if n < 2 {
            return Err(format!("{id} has {n} augmented entries"));
        }
    }
    Ok(())
}

fn arb_round() -> impl Strategy<Value = (Vec<VariantCard>, Vec<(usize, u32, bool, u64)>)> {
    (
        prop::collection::vec(0usize..6, 1..10).prop_map(|sources| {
            sources
                .iter()
                .enumerate()
                .map(|(i, s)| VariantCard {
                    card_id: format!("c{i}"),
                    source_id: format!("s{s}"),
                })
                .collect::<Vec<_>>()
        }),
        prop::collection::vec((0usize..10, 1u32..=5, any::<bool>(), 0u64..4), 0..15),
    )
}

/// Runs `cases` randomized sequences of rounds, checking that settling is
/// idempotent and that manifests never list a penalized source.
pub fn settlement_properties(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(cases)
    });
    runner
        .run(&prop::collection::vec(arb_round(), 1..4), |rounds| {
            let mut ledger = SourceLedger::default();
            for (i, (variants, raw)) in rounds.into_iter().enumerate() {
                let rid = format!("r{i}");
                let feedback: Vec<FeedbackRecord> = raw
                    .into_iter()
                    .filter(|(c, ..)| *c < variants.len())
                    .map(|(c, p, click, t)| record(&rid, &format!("c{c}"), p, click, t))
                    .collect();
                let s = settle_round(&rid, &variants, &feedback).unwrap();
                prop_assert_eq!(&settle_round(&rid, &variants, &feedback).unwrap(), &s);
                prop_assert!(ledger.apply(&s));
                let once = ledger.clone();
                prop_assert!(!ledger.apply(&s));
                prop_assert_eq!(&ledger, &once);
                let all: Vec<String> = (0..8).map(|k| format!("s{k}")).collect();
                let m = build_manifest(&rid, "fashion", &ledger, all.iter().map(String::as_str));
                for id in s.penalized() {
                    prop_assert!(!m.contains(&id));
                }
                for (id, _) in s.prioritized() {
                    prop_assert!(m.entries.iter().any(|e| e.asset_id == id && e.augmentations.len() >= 2));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}
