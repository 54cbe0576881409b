// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;

use biasamp::adapter::stub::{FaultPlan, Handler, StubServer};
use biasamp::adapter::{EndpointConfig, RetryPolicy};
use biasamp::caption::{build_corpus, CaptionError, HttpCaptioner};
use biasamp::dataset::{synth_generate, Split, SynthShapesSpec};
use biasamp::extract::ConflictCandidateSet;
use biasamp::generate::{shapes_generate_handler, GenerateError, Generator, HttpGenerator};
use biasamp::Error;

fn quick() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        base_backoff_ms: 1,
        max_backoff_ms: 5,
    }
}

#[test]
fn rejected_requests_are_not_retried_and_are_recorded() {
    let handler: Arc<Handler> = Arc::new(|_, _| Err((422, "cannot read image".to_string())));
    let server = StubServer::start(handler, FaultPlan::none()).unwrap();
    let captioner = HttpCaptioner::new(EndpointConfig::new(server.url()).with_retry(quick()));
    match captioner.caption_png(b"not a png", 2, 0) {
        Err(CaptionError::Failed { retries, reason }) => {
            assert_eq!(retries, 0);
            assert!(reason.contains("422"), "{reason}");
        }
        other => panic!("expected failure, got {other:?}"),
    }
    assert_eq!(server.stats().requests, 1);
}

#[test]
fn wrong_caption_count_is_a_sample_failure() {
    let handler: Arc<Handler> = Arc::new(|_, _| Ok(json!({ "captions": ["only one"] })));
    let server = StubServer::start(handler, FaultPlan::none()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&SynthShapesSpec::new(2, 0.2, 10, 4, 0), dir.path()).unwrap();
    let ids: Vec<String> = manifest.split(Split::Train).take(3).map(|s| s.id.clone()).collect();
    let cands = ConflictCandidateSet {
        losses: vec![0.0; 3],
        sample_ids: ids,
        k: 3,
        source_model: String::new(),
    };
    let captioner = HttpCaptioner::new(EndpointConfig::new(server.url()).with_retry(quick()));
    let corpus = build_corpus(&cands, &manifest, &captioner, 2, 0, 2).unwrap();
    assert!(corpus.records.is_empty());
    assert_eq!(corpus.failures.len(), 3);
}

#[test]
fn unreachable_backend_aborts_the_build() {
    // Nothing listens on the discard port of localhost.
    let cfg = EndpointConfig::new("http://127.0.0.1:9")
        .with_retry(quick())
        .with_timeout(Duration::from_secs(2));
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&SynthShapesSpec::new(2, 0.2, 10, 4, 0), dir.path()).unwrap();
    let id = manifest.split(Split::Train).next().unwrap().id.clone();
    let cands = ConflictCandidateSet {
        losses: vec![0.0],
        sample_ids: vec![id],
        k: 1,
        source_model: String::new(),
    };
    match build_corpus(&cands, &manifest, &HttpCaptioner::new(cfg), 1, 0, 1) {
        Err(Error::Backend { .. }) => {}
        other => panic!("expected backend error, got {other:?}"),
    }
}

#[test]
fn generator_survives_rate_limits_and_rejects_bad_prompts() {
    let mut plan = FaultPlan::transient(0.5, 3);
    plan.rate_limit = true;
    let server = StubServer::start(shapes_generate_handler(), plan).unwrap();
    let generator = HttpGenerator::new(EndpointConfig::new(server.url()).with_retry(quick()));
    for seed in 0..10 {
        let out = generator.generate("a blue circle on a plain background", 24, seed).unwrap();
        assert_eq!(out.image.dimensions(), (24, 24));
    }
    let stats = server.stats();
    assert!(stats.injected_failures > 0);
    assert_eq!(stats.duplicate_processing(), 0);

    let clean = StubServer::start(shapes_generate_handler(), FaultPlan::none()).unwrap();
    let generator = HttpGenerator::new(EndpointConfig::new(clean.url()).with_retry(quick()));
    match generator.generate("a photo of something", 24, 0) {
        Err(GenerateError::Failed { retries, .. }) => assert_eq!(retries, 0),
        other => panic!("expected rejection, got {other:?}"),
    }
}
