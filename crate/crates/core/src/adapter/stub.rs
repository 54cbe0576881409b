// SPDX-License-Identifier: Apache-2.0

//! In-process HTTP stub for the captioner/generator wire contract, with
//! seeded fault injection and idempotency-key deduplication.
//!
//! Faults come in two flavours. A plain transient fault answers 503 without
//! touching the handler. A lost-ack fault runs the handler, stores the
//! response under the idempotency key and still answers 503, so only a
//! server that honours the key avoids processing the request twice.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::Value;

use super::IDEMPOTENCY_HEADER;
use crate::hashing::derive_seed_indexed;

/// Request handler: `(path, body) -> Ok(json) | Err((status, message))`.
pub type Handler = dyn Fn(&str, &Value) -> Result<Value, (u16, String)> + Send + Sync;

#[derive(Clone, Debug, PartialEq)]
pub struct FaultPlan {
    /// Probability that a given attempt fails.
    pub failure_rate: f64,
    pub seed: u64,
    /// Upper bound on injected failures for one idempotency key.
    pub max_failures_per_key: u32,
    /// Fraction of injected failures that are lost acknowledgements.
    pub lost_ack_share: f64,
    /// Answer injected failures with 429 instead of 503.
    pub rate_limit: bool,
}

impl FaultPlan {
    pub fn none() -> Self {
        FaultPlan {
            failure_rate: 0.0,
            seed: 0,
            max_failures_per_key: 0,
            lost_ack_share: 0.0,
            rate_limit: false,
        }
    }

    pub fn transient(failure_rate: f64, seed: u64) -> Self {
        FaultPlan {
            failure_rate,
            seed,
            max_failures_per_key: 2,
            lost_ack_share: 0.5,
            rate_limit: false,
        }
    }

    fn roll(&self, key: &str, attempt: u32, salt: &str) -> f64 {
        let bits = derive_seed_indexed(self.seed, &format!("{salt}/{key}"), attempt as u64);
        (bits >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StubStats {
    pub requests: usize,
    pub injected_failures: usize,
    pub lost_acks: usize,
    /// Requests answered from the idempotency cache.
    pub replays: usize,
    /// Handler executions per idempotency key.
    pub processed: HashMap<String, usize>,
    pub missing_key: usize,
}

impl StubStats {
    pub fn duplicate_processing(&self) -> usize {
        self.processed.values().map(|&n| n.saturating_sub(1)).sum()
    }
}

#[derive(Default)]
struct State {
    stats: StubStats,
    attempts: HashMap<String, u32>,
    failures: HashMap<String, u32>,
    cache: HashMap<String, (u16, String)>,
}

pub struct StubServer {
    url: String,
    state: Arc<Mutex<State>>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind to an ephemeral localhost port and serve until dropped.
    pub fn start(handler: Arc<Handler>, faults: FaultPlan) -> std::io::Result<StubServer> {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub bound to a non-IP address"))?;
        let url = format!("http://{addr}");
        let state = Arc::new(Mutex::new(State::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => {
                            let state = Arc::clone(&state);
                            let handler = Arc::clone(&handler);
                            let faults = faults.clone();
                            // One thread per request so concurrent clients are served concurrently.
                            std::thread::spawn(move || serve(req, handler.as_ref(), &faults, &state));
                        }
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })
        };
        Ok(StubServer {
            url,
            state,
            stop,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn stats(&self) -> StubStats {
        self.state.lock().expect("stub state").stats.clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn serve(mut req: tiny_http::Request, handler: &Handler, faults: &FaultPlan, state: &Mutex<State>) {
    let key = req
        .headers()
        .iter()
        .find(|h| h.field.equiv(IDEMPOTENCY_HEADER))
        .map(|h| h.value.as_str().to_string());
    let path = req.url().to_string();
    let mut body = String::new();
    let read_ok = req.as_reader().read_to_string(&mut body).is_ok();

    let (status, text) = decide(key, &path, read_ok, &body, handler, faults, state);
    let mut resp = tiny_http::Response::from_string(text).with_status_code(status).with_header(
        "Content-Type: application/json"
            .parse::<tiny_http::Header>()
            .expect("static header"),
    );
    if status == 429 {
        resp = resp.with_header("Retry-After: 0".parse::<tiny_http::Header>().expect("static header"));
    }
    let _ = req.respond(resp);
}

fn decide(
    key: Option<String>,
    path: &str,
    read_ok: bool,
    body: &str,
    handler: &Handler,
    faults: &FaultPlan,
    state: &Mutex<State>,
) -> (u16, String) {
    let mut st = state.lock().expect("stub state");
    st.stats.requests += 1;
    let Some(key) = key else {
        st.stats.missing_key += 1;
        return (400, r#"{"error":"missing Idempotency-Key"}"#.into());
    };
    let attempt = {
        let a = st.attempts.entry(key.clone()).or_insert(0);
        *a += 1;
        *a
    };

    let failures = *st.failures.get(&key).unwrap_or(&0);
    let inject = failures < faults.max_failures_per_key && faults.roll(&key, attempt, "fail") < faults.failure_rate;
    let fail_status = if faults.rate_limit { 429 } else { 503 };
    if inject {
        *st.failures.entry(key.clone()).or_insert(0) += 1;
        st.stats.injected_failures += 1;
        let lost_ack = faults.roll(&key, attempt, "ack") < faults.lost_ack_share;
        if !lost_ack || st.cache.contains_key(&key) {
            return (fail_status, r#"{"error":"injected transient failure"}"#.into());
        }
        st.stats.lost_acks += 1;
    } else if let Some(cached) = st.cache.get(&key).cloned() {
        st.stats.replays += 1;
        return cached;
    }

    *st.stats.processed.entry(key.clone()).or_insert(0) += 1;
    drop(st);
    let outcome = if !read_ok {
        (400, r#"{"error":"unreadable body"}"#.to_string())
    } else {
        match serde_json::from_str::<Value>(body) {
            Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
            Ok(v) => match handler(path, &v) {
                Ok(out) => (200, out.to_string()),
                Err((status, msg)) => (status, serde_json::json!({ "error": msg }).to_string()),
            },
        }
    };
    let mut st = state.lock().expect("stub state");
    if outcome.0 == 200 {
        st.cache.insert(key, outcome.clone());
    }
    if inject {
        return (fail_status, r#"{"error":"injected transient failure"}"#.into());
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{with_retries, EndpointConfig, JsonClient, RetryPolicy};

    fn echo() -> Arc<Handler> {
        Arc::new(|path: &str, body: &Value| {
            if path != "/v1/echo" {
                return Err((404, "no route".into()));
            }
            Ok(serde_json::json!({ "echo": body["x"] }))
        })
    }

    fn fast_retries() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            base_backoff_ms: 1,
            max_backoff_ms: 5,
        }
    }

    #[test]
    fn echo_round_trip_and_rejection() {
        let stub = StubServer::start(echo(), FaultPlan::none()).unwrap();
        let client = JsonClient::new(EndpointConfig::new(stub.url()));
        let v: Value = client.post("v1/echo", "k1", &serde_json::json!({"x": 5})).unwrap();
        assert_eq!(v["echo"], 5);
        let err = client.post::<_, Value>("v1/nope", "k2", &serde_json::json!({})).unwrap_err();
        assert!(matches!(err, crate::adapter::AdapterFailure::Rejected { status: 404, .. }));
    }

    #[test]
    fn lost_ack_is_replayed_not_reprocessed() {
        let plan = FaultPlan {
            failure_rate: 1.0,
            seed: 3,
            max_failures_per_key: 1,
            lost_ack_share: 1.0,
            rate_limit: false,
        };
        let stub = StubServer::start(echo(), plan).unwrap();
        let client = JsonClient::new(EndpointConfig::new(stub.url()));
        let out = with_retries(&fast_retries(), |_| {
            client.post::<_, Value>("v1/echo", "key", &serde_json::json!({"x": 1}))
        })
        .unwrap();
        assert_eq!(out.attempts, 2);
        let stats = stub.stats();
        assert_eq!((stats.lost_acks, stats.replays, stats.duplicate_processing()), (1, 1, 0));
    }

    #[test]
    fn rate_limit_is_retried() {
        let plan = FaultPlan {
            rate_limit: true,
            lost_ack_share: 0.0,
            ..FaultPlan::transient(1.0, 1)
        };
        let stub = StubServer::start(echo(), plan).unwrap();
        let client = JsonClient::new(EndpointConfig::new(stub.url()));
        let out = with_retries(&fast_retries(), |_| {
            client.post::<_, Value>("v1/echo", "k", &serde_json::json!({"x": 2}))
        })
        .unwrap();
        assert_eq!(out.attempts, 3);
    }
}
