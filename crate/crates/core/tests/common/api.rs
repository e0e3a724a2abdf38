//! In-process HTTP client for the router, with response schema checks.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use personaforge::pipeline::Pipeline;
use personaforge::service::{router, IDEMPOTENCY_HEADER};
use serde_json::Value;
use tower::ServiceExt;

pub struct Api {
    router: Router,
    schemas: HashMap<String, jsonschema::Validator>,
    pub runtime: tokio::runtime::Runtime,
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

fn load_schemas() -> HashMap<String, jsonschema::Validator> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("api/schemas");
    std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            let name = path.file_stem().unwrap().to_string_lossy().into_owned();
            let v = jsonschema::validator_for(&schema).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, v)
        })
        .collect()
}

impl Api {
    pub fn new(pipeline: Arc<Pipeline>) -> Self {
        Self {
            router: router(pipeline),
            schemas: load_schemas(),
            runtime: tokio::runtime::Builder::new_multi_thread()
                .worker_threads(1)
                .enable_all()
                .build()
                .unwrap(),
        }
    }

    pub fn call(&self, method: Method, path: &str, body: Option<Value>, key: Option<&str>) -> Reply {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(k) = key {
            req = req.header(IDEMPOTENCY_HEADER, k);
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let req = req.body(body).unwrap();
        self.runtime.block_on(async {
            let resp = self.router.clone().oneshot(req).await.unwrap();
            let status = resp.status();
            let content_type = resp
                .headers()
                .get("content-type")
                .map(|v| v.to_str().unwrap().to_string());
            let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
            Reply { status, content_type, bytes }
        })
    }

    pub fn get(&self, path: &str) -> Reply {
        self.call(Method::GET, path, None, None)
    }

    pub fn post(&self, path: &str, body: Value) -> Reply {
        self.call(Method::POST, path, Some(body), None)
    }

    /// Panics unless `value` satisfies the named schema.
    pub fn check(&self, schema: &str, value: &Value) {
        let v = self.schemas.get(schema).unwrap_or_else(|| panic!("no schema {schema}"));
        if let Err(e) = v.validate(value) {
            panic!("{schema} rejects {value}: {e}");
        }
    }

    /// Expects `status` and a body valid for `schema` (or the error schema
    /// on failures), returning the body.
    pub fn expect(&self, reply: &Reply, status: StatusCode, schema: &str) -> Value {
        assert_eq!(reply.status, status, "{}", reply.text());
        let v = reply.json();
        self.check(if status.is_success() { schema } else { "error" }, &v);
        v
    }

    pub fn is_valid(&self, schema: &str, value: &Value) -> bool {
        self.schemas[schema].is_valid(value)
    }
}

/// True when no object key anywhere in `v` mentions originality or a source.
pub fn redacted(v: &Value) -> bool {
    match v {
        Value::Object(m) => m
            .iter()
            .all(|(k, v)| !k.contains("original") && !k.contains("source") && redacted(v)),
        Value::Array(a) => a.iter().all(redacted),
        _ => true,
    }
}
