// SPDX-License-Identifier: Apache-2.0

//! Generator backed by an HTTP endpoint (`POST {url}/v1/generate`).

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{oracle_generate, GenerateError, Generated, Generator, GeneratorDescriptor};
use crate::adapter::stub::Handler;
use crate::adapter::{base64_encode, decode_png_base64, encode_png, with_retries, AdapterFailure, EndpointConfig, JsonClient};
use crate::error::Error;
use crate::hashing::hash_parts;

pub const GENERATE_PATH: &str = "v1/generate";

#[derive(Serialize, Deserialize)]
pub struct GenerateWireRequest {
    pub prompt: String,
    pub size: u32,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
pub struct GenerateWireResponse {
    pub image_png_base64: String,
}

pub struct HttpGenerator {
    client: JsonClient,
}

impl HttpGenerator {
    pub fn new(config: EndpointConfig) -> Self {
        HttpGenerator {
            client: JsonClient::new(config),
        }
    }
}

impl Generator for HttpGenerator {
    fn descriptor(&self) -> GeneratorDescriptor {
        GeneratorDescriptor {
            id: format!("http:{}", self.client.config.url),
            deterministic: false,
        }
    }

    /// Idempotency key `hash(prompt, seed)`, fixed across retries.
    fn generate(&self, prompt: &str, size: u32, seed: u64) -> Result<Generated, GenerateError> {
        let key = hash_parts(&[prompt.as_bytes(), &seed.to_le_bytes()]);
        let body = GenerateWireRequest {
            prompt: prompt.to_string(),
            size,
            seed,
        };
        let out = with_retries(&self.client.config.retry, |_| {
            let resp: GenerateWireResponse = self.client.post(GENERATE_PATH, &key, &body)?;
            decode_png_base64(&resp.image_png_base64).map_err(AdapterFailure::Malformed)
        })
        .map_err(|e| match e.failure {
            AdapterFailure::Connection(m) => GenerateError::Unavailable(m),
            _ => GenerateError::Failed {
                reason: e.to_string(),
                retries: e.attempts - 1,
            },
        })?;
        Ok(Generated {
            retries: out.retries(),
            image: out.value,
        })
    }
}

/// Stub-server handler rendering prompts with the oracle generator.
/// Unparsable prompts answer 422.
pub fn shapes_generate_handler() -> Arc<Handler> {
    Arc::new(|path: &str, body: &Value| {
        if path.trim_start_matches('/') != GENERATE_PATH {
            return Err((404, format!("no route {path}")));
        }
        let req: GenerateWireRequest = serde_json::from_value(body.clone()).map_err(|e| (400, e.to_string()))?;
        let img = oracle_generate(&req.prompt, req.size, req.seed).map_err(|e| match e {
            Error::UnparsablePrompt { .. } => (422, e.to_string()),
            other => (400, other.to_string()),
        })?;
        Ok(serde_json::json!({ "image_png_base64": base64_encode(&encode_png(&img)) }))
    })
}
