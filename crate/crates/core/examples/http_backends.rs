// SPDX-License-Identifier: Apache-2.0

//! Talk to captioning and generation services over HTTP. Two local stub
//! servers stand in for the real models and inject transient failures, so
//! the retry and idempotency behaviour is visible.
//!
//! Point `BIASAMP_CAPTION_URL` / `BIASAMP_GENERATE_URL` at real services to
//! use them from the pipeline; see `docs/adapter-contract.md` at the repository root.
//!
//! ```bash
//! cargo run --example http_backends
//! ```

use biasamp::adapter::stub::{FaultPlan, StubServer};
use biasamp::adapter::{EndpointConfig, RetryPolicy};
use biasamp::caption::{build_corpus, shapes_caption_handler, HttpCaptioner};
use biasamp::dataset::{synth_generate, Split, SynthShapesSpec};
use biasamp::extract::ConflictCandidateSet;
use biasamp::generate::{shapes_generate_handler, Generator, HttpGenerator};

fn main() -> biasamp::Result<()> {
    let retry = RetryPolicy {
        max_retries: 4,
        base_backoff_ms: 5,
        max_backoff_ms: 50,
    };
    let caption_server = StubServer::start(shapes_caption_handler(), FaultPlan::transient(0.3, 1)).expect("bind");
    let generate_server = StubServer::start(shapes_generate_handler(), FaultPlan::transient(0.3, 2)).expect("bind");
    println!("caption service at {}, generation at {}", caption_server.url(), generate_server.url());

    let dir = std::env::temp_dir().join("biasamp-http-backends");
    let manifest = synth_generate(&SynthShapesSpec::new(4, 0.1, 40, 8, 0), &dir)?;
    let ids: Vec<String> = manifest.split(Split::Train).take(12).map(|s| s.id.clone()).collect();
    let candidates = ConflictCandidateSet {
        losses: vec![0.0; ids.len()],
        k: ids.len(),
        sample_ids: ids,
        source_model: "example".into(),
    };

    let captioner = HttpCaptioner::new(EndpointConfig::new(caption_server.url()).with_retry(retry.clone()));
    let corpus = build_corpus(&candidates, &manifest, &captioner, 3, 0, 4)?;
    println!(
        "captions: {} records, {} failures, {} retries",
        corpus.records.len(),
        corpus.failures.len(),
        corpus.retries
    );

    let generator = HttpGenerator::new(EndpointConfig::new(generate_server.url()).with_retry(retry));
    let out = generator
        .generate("a red triangle on a plain background", 32, 9)
        .map_err(|e| biasamp::Error::Domain(e.to_string()))?;
    println!("generated {:?} image after {} retries", out.image.dimensions(), out.retries);

    for (name, server) in [("caption", &caption_server), ("generate", &generate_server)] {
        let s = server.stats();
        println!(
            "{name}: {} requests, {} injected failures, {} duplicate executions",
            s.requests,
            s.injected_failures,
            s.duplicate_processing()
        );
    }
    Ok(())
}
