// SPDX-License-Identifier: Apache-2.0

//! HTTP plumbing shared by the external captioner and generator adapters:
//! endpoint configuration, typed failures, bounded retries and
//! idempotency keys.
//!
//! Every request carries an `Idempotency-Key` header derived from the
//! request content, so a retried call can be deduplicated by the server.

pub mod stub;

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub const IDEMPOTENCY_HEADER: &str = "Idempotency-Key";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_backoff_ms: 200,
            max_backoff_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .base_backoff_ms
            .saturating_mul(1u64 << (retry.saturating_sub(1)).min(16));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into().trim_end_matches('/').to_string(),
            token: None,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    /// Read `{prefix}_URL` and optionally `{prefix}_TOKEN` and
    /// `{prefix}_TIMEOUT_SECS` from the environment.
    pub fn from_env(prefix: &str) -> Result<Self> {
        let url_var = format!("{prefix}_URL");
        let url = std::env::var(&url_var).map_err(|_| Error::Config(format!("{url_var} is not set")))?;
        let mut cfg = EndpointConfig::new(url);
        cfg.token = std::env::var(format!("{prefix}_TOKEN")).ok();
        if let Ok(secs) = std::env::var(format!("{prefix}_TIMEOUT_SECS")) {
            let secs: f64 = secs
                .parse()
                .map_err(|_| Error::Config(format!("{prefix}_TIMEOUT_SECS must be a number")))?;
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        Ok(cfg)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// Failure of a single request.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum AdapterFailure {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("transient server error (status {status})")]
    Transient { status: u16 },
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected (status {status}): {body}")]
    Rejected { status: u16, body: String },
}

impl AdapterFailure {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            AdapterFailure::Timeout
                | AdapterFailure::RateLimited { .. }
                | AdapterFailure::Transient { .. }
                | AdapterFailure::Connection(_)
        )
    }
}

/// A failure after the retry budget, with how many attempts were made.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("{failure} after {attempts} attempt(s)")]
pub struct RetryExhausted {
    pub failure: AdapterFailure,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attempted<T> {
    pub value: T,
    pub attempts: u32,
}

impl<T> Attempted<T> {
    pub fn retries(&self) -> u32 {
        self.attempts - 1
    }
}

/// Run `op` until it succeeds, fails permanently, or the retry budget is
/// spent. `op` receives the 1-based attempt number.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> std::result::Result<T, AdapterFailure>,
) -> std::result::Result<Attempted<T>, RetryExhausted> {
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(value) => return Ok(Attempted { value, attempts: attempt }),
            Err(failure) if failure.is_retryable() && attempt <= policy.max_retries => {
                let wait = match &failure {
                    AdapterFailure::RateLimited { retry_after: Some(d) } => {
                        (*d).min(Duration::from_millis(policy.max_backoff_ms))
                    }
                    _ => policy.backoff(attempt),
                };
                log::debug!("attempt {attempt} failed ({failure}), retrying in {wait:?}");
                std::thread::sleep(wait);
                attempt += 1;
            }
            Err(failure) => {
                return Err(RetryExhausted {
                    failure,
                    attempts: attempt,
                })
            }
        }
    }
}

/// Blocking JSON client for one endpoint.
#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    pub config: EndpointConfig,
}

impl JsonClient {
    pub fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonClient { agent, config }
    }

    /// One POST attempt, mapping transport and status errors to
    /// [`AdapterFailure`].
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        idempotency_key: &str,
        body: &Req,
    ) -> std::result::Result<Resp, AdapterFailure> {
        let url = format!("{}/{}", self.config.url, path.trim_start_matches('/'));
        let mut req = self.agent.post(&url).header(IDEMPOTENCY_HEADER, idempotency_key);
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<Resp>()
                .map_err(|e| match map_transport(e) {
                    AdapterFailure::Connection(m) => AdapterFailure::Malformed(m),
                    other => other,
                }),
            429 => {
                let retry_after = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .map(Duration::from_secs_f64);
                Err(AdapterFailure::RateLimited { retry_after })
            }
            500..=599 => Err(AdapterFailure::Transient { status }),
            _ => {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                Err(AdapterFailure::Rejected { status, body })
            }
        }
    }
}

/// Lossless PNG bytes for a raster, as carried in request/response bodies.
pub fn encode_png(img: &image::RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

pub fn decode_png_base64(data: &str) -> std::result::Result<image::RgbImage, String> {
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| format!("invalid base64: {e}"))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map(|i| i.to_rgb8())
        .map_err(|e| format!("invalid PNG: {e}"))
}

pub fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn map_transport(e: ureq::Error) -> AdapterFailure {
    match e {
        ureq::Error::Timeout(_) => AdapterFailure::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => AdapterFailure::Timeout,
        ureq::Error::Json(e) => AdapterFailure::Malformed(e.to_string()),
        other => AdapterFailure::Connection(other.to_string()),
    }
}
