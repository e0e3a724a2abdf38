//! The scripted platform run over HTTP, shared by the service tests and the
//! acceptance run. Panics on the first broken expectation.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use personaforge::pipeline::demo::write_demo_corpus;
use personaforge::pipeline::Pipeline;
use serde_json::{json, Value};

use super::api::{redacted, Api};
use super::flow::{demo_config, fast_config, INDUSTRY};

pub struct FlowReport {
    pub round_id: String,
    pub penalized: usize,
    pub manifest: usize,
}

fn await_job(api: &Api, job: &Value) -> Value {
    let path = format!("/api/v1/admin/jobs/{}", job["job_id"].as_str().unwrap());
    loop {
        let status = api.expect(&api.get(&path), StatusCode::OK, "job_status");
        match status["state"].as_str().unwrap() {
            "running" => std::thread::sleep(Duration::from_millis(50)),
            "succeeded" => return status,
            other => panic!("job ended {other}: {}", status["error"]),
        }
    }
}

fn retrain(api: &Api, body: Value) -> Value {
    let r = api.post("/api/v1/admin/retrain", body);
    await_job(api, &api.expect(&r, StatusCode::ACCEPTED, "job_status"))
}

/// Ingest through a scheduler tick, train both models, serve a round, rate
/// it, close it and retrain the generator on the resulting manifest.
pub fn api_flow(dir: &Path) -> FlowReport {
    let mut config = fast_config();
    let layout = write_demo_corpus(&dir.join("corpus"), &demo_config(), &config.industries).unwrap();
    config.sources.brand_dirs = vec![layout.brand_dir.clone()];
    config.sources.user_dirs = vec![layout.user_dir.clone()];
    let pipeline = Arc::new(Pipeline::open(dir.join("data"), config).unwrap());
    let api = Api::new(pipeline);

    api.expect(&api.get("/api/v1/health"), StatusCode::OK, "health");
    let tick = api.expect(&api.post("/api/v1/admin/tick", json!({ "hours": 12 })), StatusCode::OK, "tick_report");
    assert_eq!(tick["executed"][0]["task"], "ingestion");

    retrain(&api, json!({ "target": "profiler" }));
    retrain(&api, json!({ "target": "generator", "industry": INDUSTRY }));

    let user = "u0007";
    let r = api.post("/api/v1/profiles/infer", json!({ "user_id": user }));
    api.expect(&r, StatusCode::OK, "infer_response");
    let r = api.post("/api/v1/generate", json!({ "user_id": user, "industry": INDUSTRY, "num_variants": 5 }));
    let round = api.expect(&r, StatusCode::CREATED, "round");
    assert!(redacted(&round), "round leaks originality: {round}");
    let cards = round["cards"].as_array().unwrap().clone();
    assert_eq!(cards.len(), 6);
    let round_id = round["round_id"].as_str().unwrap().to_string();

    for (i, card) in cards.iter().enumerate() {
        let img = api.get(card["image_url"].as_str().unwrap());
        assert_eq!(img.status, StatusCode::OK);
        let positive = i % 2 == 0;
        let body = json!({
            "round_id": round_id, "card_id": card["card_id"], "attractiveness": if positive { 90 } else { 20 },
            "preference": if positive { 5 } else { 1 }, "compliance": "yes", "would_click": "no"
        });
        api.expect(&api.post("/api/v1/feedback", body), StatusCode::OK, "feedback_ack");
    }
    let view = api.expect(&api.get(&format!("/api/v1/rounds/{round_id}")), StatusCode::OK, "round");
    assert!(redacted(&view));
    assert_eq!(view["rated_cards"].as_array().unwrap().len(), 6);

    let r = api.post(&format!("/api/v1/rounds/{round_id}/close"), json!({}));
    let summary = api.expect(&r, StatusCode::OK, "close_summary");
    assert!(redacted(&summary["prioritized"]) && redacted(&summary["penalized"]));
    let mut manifest: Vec<String> = summary["manifest"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["asset_id"].as_str().unwrap().to_string())
        .collect();
    manifest.sort();
    for p in summary["penalized"].as_array().unwrap() {
        assert!(!manifest.contains(&p.as_str().unwrap().to_string()));
    }

    let job = retrain(&api, json!({ "target": "generator", "industry": INDUSTRY }));
    let g = &job["result"]["generators"][0];
    assert_eq!(g["manifest_round"], round_id.as_str());
    let trained: Vec<String> = g["training_set"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(trained, manifest, "retrain set differs from the manifest");

    FlowReport {
        round_id,
        penalized: summary["penalized"].as_array().unwrap().len(),
        manifest: manifest.len(),
    }
}
