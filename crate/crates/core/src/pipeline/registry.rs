// SPDX-License-Identifier: Apache-2.0

//! String ids to captioner/generator constructors.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::adapter::EndpointConfig;
use crate::caption::{Captioner, HttpCaptioner, OracleCaptioner};
use crate::error::{Error, Result};
use crate::generate::{Generator, HttpGenerator, OracleGenerator};

pub type CaptionerFactory = Box<dyn Fn() -> Result<Arc<dyn Captioner>> + Send + Sync>;
pub type GeneratorFactory = Box<dyn Fn() -> Result<Arc<dyn Generator>> + Send + Sync>;

/// Environment prefix of the external captioner endpoint
/// (`BIASAMP_CAPTION_URL`, `BIASAMP_CAPTION_TOKEN`, `BIASAMP_CAPTION_TIMEOUT_SECS`).
pub const CAPTION_ENV: &str = "BIASAMP_CAPTION";
/// Environment prefix of the external generator endpoint.
pub const GENERATE_ENV: &str = "BIASAMP_GENERATE";

pub struct BackendRegistry {
    captioners: BTreeMap<String, CaptionerFactory>,
    generators: BTreeMap<String, GeneratorFactory>,
}

impl Default for BackendRegistry {
    /// `oracle` and `http` for both kinds; `http` reads its endpoint from
    /// the environment when constructed.
    fn default() -> Self {
        let mut r = BackendRegistry::empty();
        r.register_captioner("oracle", || Ok(Arc::new(OracleCaptioner)));
        r.register_captioner("http", || {
            Ok(Arc::new(HttpCaptioner::new(EndpointConfig::from_env(CAPTION_ENV)?)))
        });
        r.register_generator("oracle", || Ok(Arc::new(OracleGenerator)));
        r.register_generator("http", || {
            Ok(Arc::new(HttpGenerator::new(EndpointConfig::from_env(GENERATE_ENV)?)))
        });
        r
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            captioners: BTreeMap::new(),
            generators: BTreeMap::new(),
        }
    }

    pub fn register_captioner(
        &mut self,
        id: &str,
        factory: impl Fn() -> Result<Arc<dyn Captioner>> + Send + Sync + 'static,
    ) {
        self.captioners.insert(id.to_string(), Box::new(factory));
    }

    pub fn register_generator(
        &mut self,
        id: &str,
        factory: impl Fn() -> Result<Arc<dyn Generator>> + Send + Sync + 'static,
    ) {
        self.generators.insert(id.to_string(), Box::new(factory));
    }

    pub fn captioner_ids(&self) -> Vec<&str> {
        self.captioners.keys().map(String::as_str).collect()
    }

    pub fn generator_ids(&self) -> Vec<&str> {
        self.generators.keys().map(String::as_str).collect()
    }

    pub fn check(&self, captioner: &str, generator: &str) -> Result<()> {
        if !self.captioners.contains_key(captioner) {
            return Err(Error::UnregisteredBackend {
                kind: "captioner",
                id: captioner.to_string(),
            });
        }
        if !self.generators.contains_key(generator) {
            return Err(Error::UnregisteredBackend {
                kind: "generator",
                id: generator.to_string(),
            });
        }
        Ok(())
    }

    pub fn captioner(&self, id: &str) -> Result<Arc<dyn Captioner>> {
        let f = self.captioners.get(id).ok_or_else(|| Error::UnregisteredBackend {
            kind: "captioner",
            id: id.to_string(),
        })?;
        f()
    }

    pub fn generator(&self, id: &str) -> Result<Arc<dyn Generator>> {
        let f = self.generators.get(id).ok_or_else(|| Error::UnregisteredBackend {
            kind: "generator",
            id: id.to_string(),
        })?;
        f()
    }
}
