// SPDX-License-Identifier: Apache-2.0

//! Captioner backed by an HTTP endpoint (`POST {url}/v1/caption`).

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{oracle_caption, CaptionError, CaptionRequest, Captioned, Captioner, CaptionerDescriptor};
use crate::adapter::stub::Handler;
use crate::adapter::{base64_encode, decode_png_base64, encode_png, with_retries, AdapterFailure, EndpointConfig, JsonClient};
use crate::hashing::hash_parts;
use crate::shapes;

pub const CAPTION_PATH: &str = "v1/caption";
pub const DEFAULT_INSTRUCTION: &str = "Describe this image in one short sentence.";

#[derive(Serialize, Deserialize)]
pub struct CaptionWireRequest {
    pub image_png_base64: String,
    pub count: usize,
    pub seed: u64,
    pub instruction: String,
}

#[derive(Serialize, Deserialize)]
pub struct CaptionWireResponse {
    pub captions: Vec<String>,
}

pub struct HttpCaptioner {
    client: JsonClient,
    pub instruction: String,
}

impl HttpCaptioner {
    pub fn new(config: EndpointConfig) -> Self {
        HttpCaptioner {
            client: JsonClient::new(config),
            instruction: DEFAULT_INSTRUCTION.into(),
        }
    }

    /// One captioning call with retries; the idempotency key is
    /// `hash(image bytes, seed)` and stays fixed across retries.
    pub fn caption_png(&self, png: &[u8], count: usize, seed: u64) -> Result<Captioned, CaptionError> {
        let key = hash_parts(&[png, &seed.to_le_bytes()]);
        let body = CaptionWireRequest {
            image_png_base64: base64_encode(png),
            count,
            seed,
            instruction: self.instruction.clone(),
        };
        let out = with_retries(&self.client.config.retry, |_| {
            let resp: CaptionWireResponse = self.client.post(CAPTION_PATH, &key, &body)?;
            if resp.captions.len() != count || resp.captions.iter().any(|c| c.trim().is_empty()) {
                return Err(AdapterFailure::Malformed(format!(
                    "expected {count} non-empty captions, got {}",
                    resp.captions.len()
                )));
            }
            Ok(resp.captions)
        })
        .map_err(|e| match e.failure {
            AdapterFailure::Connection(m) => CaptionError::Unavailable(m),
            _ => CaptionError::Failed {
                reason: e.to_string(),
                retries: e.attempts - 1,
            },
        })?;
        Ok(Captioned {
            retries: out.retries(),
            texts: out.value,
        })
    }
}

impl Captioner for HttpCaptioner {
    fn descriptor(&self) -> CaptionerDescriptor {
        CaptionerDescriptor {
            id: format!("http:{}", self.client.config.url),
            deterministic: false,
        }
    }

    fn caption(&self, req: &CaptionRequest) -> Result<Captioned, CaptionError> {
        let img = crate::dataset::load_raster(&req.image_path).map_err(|e| CaptionError::Failed {
            reason: e.to_string(),
            retries: 0,
        })?;
        self.caption_png(&encode_png(&img), req.count, req.seed)
    }
}

/// Stub-server handler that captions synthetic shape images by parsing
/// the pixels and applying the oracle templates.
pub fn shapes_caption_handler() -> Arc<Handler> {
    Arc::new(|path: &str, body: &Value| {
        if path.trim_start_matches('/') != CAPTION_PATH {
            return Err((404, format!("no route {path}")));
        }
        let req: CaptionWireRequest = serde_json::from_value(body.clone()).map_err(|e| (400, e.to_string()))?;
        let img = decode_png_base64(&req.image_png_base64).map_err(|e| (400, e))?;
        let parsed = shapes::parse(&img).map_err(|e| (422, e.to_string()))?;
        let captions =
            oracle_caption(parsed.shape.name(), parsed.color, req.count, req.seed).map_err(|e| (422, e.to_string()))?;
        Ok(serde_json::json!({ "captions": captions }))
    })
}
