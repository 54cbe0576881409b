// SPDX-License-Identifier: Apache-2.0

//! Deterministic generator for the synthetic shapes dataset: renders the
//! shape and color named in the prompt.

use std::collections::BTreeSet;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GenerateError, Generated, Generator, GeneratorDescriptor};
use crate::error::{Error, Result};
use crate::filter::tokenize;
use crate::shapes::{self, Shape};

/// The single shape and single color a prompt names.
pub fn parse_prompt(prompt: &str) -> Result<(Shape, &'static str)> {
    let tokens = tokenize(prompt);
    let shapes: BTreeSet<Shape> = tokens.iter().filter_map(|t| Shape::from_name(t)).collect();
    let colors: BTreeSet<&'static str> = tokens
        .iter()
        .filter_map(|t| shapes::PALETTE.iter().find(|(c, _)| c == t).map(|(c, _)| *c))
        .collect();
    let unparsable = |reason: String| Error::UnparsablePrompt {
        prompt: prompt.to_string(),
        reason,
    };
    if shapes.len() != 1 {
        return Err(unparsable(format!("expected one shape word, found {}", shapes.len())));
    }
    if colors.len() != 1 {
        return Err(unparsable(format!("expected one color word, found {}", colors.len())));
    }
    Ok((*shapes.first().expect("one"), colors.first().expect("one")))
}

pub fn oracle_generate(prompt: &str, size: u32, seed: u64) -> Result<RgbImage> {
    let (shape, color) = parse_prompt(prompt)?;
    if size < 8 {
        return Err(Error::InvalidParameter(format!("image size {size} too small")));
    }
    let rgb = shapes::color_rgb(color).expect("palette color");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(shapes::render(size, shape, rgb, &mut rng))
}

#[derive(Clone, Debug, Default)]
pub struct OracleGenerator;

impl Generator for OracleGenerator {
    fn descriptor(&self) -> GeneratorDescriptor {
        GeneratorDescriptor {
            id: "oracle".into(),
            deterministic: true,
        }
    }

    fn generate(&self, prompt: &str, size: u32, seed: u64) -> std::result::Result<Generated, GenerateError> {
        oracle_generate(prompt, size, seed)
            .map(|image| Generated { image, retries: 0 })
            .map_err(|e| GenerateError::Failed {
                reason: e.to_string(),
                retries: 0,
            })
    }
}
