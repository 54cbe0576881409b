// SPDX-License-Identifier: Apache-2.0

//! Deterministic captioner for the synthetic shapes dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CaptionError, CaptionRequest, Captioned, Captioner, CaptionerDescriptor};
use crate::error::{Error, Result};
use crate::shapes::{is_color, Shape};

/// Sentences that name neither a shape nor a color.
pub const DISTRACTORS: [&str; 12] = [
    "a brightly lit studio photograph",
    "a close up picture with soft lighting",
    "an abstract image with a dark backdrop",
    "a simple computer graphic",
    "a small object centered in the frame",
    "a blurry low resolution picture",
    "an icon drawn with flat colors",
    "a minimal illustration of a single object",
    "a photo taken indoors at night",
    "a tiny thumbnail image",
    "a geometric figure in the middle of a dark image",
    "an image with a lot of empty space",
];

pub fn attribute_sentence(color: &str, shape: &str) -> String {
    format!("a {color} {shape} on a plain background")
}

/// The attribute sentence first, then `count - 1` distractors chosen by
/// `seed` (without repetition until the pool is exhausted).
pub fn oracle_caption(shape: &str, color: &str, count: usize, seed: u64) -> Result<Vec<String>> {
    if Shape::from_name(shape).is_none() {
        return Err(Error::MissingGroundTruth(format!("unknown shape {shape:?}")));
    }
    if !is_color(color) {
        return Err(Error::MissingGroundTruth(format!("unknown color {color:?}")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![attribute_sentence(color, shape)];
    let mut pool: Vec<&str> = Vec::new();
    while out.len() < count {
        if pool.is_empty() {
            pool = DISTRACTORS.to_vec();
            pool.shuffle(&mut rng);
        }
        out.push(pool.pop().expect("refilled").to_string());
    }
    Ok(out)
}

/// Captions from ground-truth `(class name = shape, bias attribute = color)`.
#[derive(Clone, Debug, Default)]
pub struct OracleCaptioner;

impl Captioner for OracleCaptioner {
    fn descriptor(&self) -> CaptionerDescriptor {
        CaptionerDescriptor {
            id: "oracle".into(),
            deterministic: true,
        }
    }

    fn caption(&self, req: &CaptionRequest) -> std::result::Result<Captioned, CaptionError> {
        let color = req.bias_attr.as_deref().ok_or_else(|| CaptionError::Failed {
            reason: "missing ground-truth bias attribute".into(),
            retries: 0,
        })?;
        let texts = oracle_caption(&req.class_name, color, req.count, req.seed).map_err(|e| CaptionError::Failed {
            reason: e.to_string(),
            retries: 0,
        })?;
        Ok(Captioned { texts, retries: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::PALETTE;

    #[test]
    fn deterministic_and_attribute_first() {
        let a = oracle_caption("circle", "red", 3, 7).unwrap();
        assert_eq!(a, oracle_caption("circle", "red", 3, 7).unwrap());
        assert_eq!(a[0], "a red circle on a plain background");
        assert_eq!(a.len(), 3);
        assert_ne!(a[1], a[2]);
        assert_eq!(oracle_caption("circle", "red", 1, 7).unwrap(), ["a red circle on a plain background"]);
    }

    #[test]
    fn distractors_carry_no_attribute_words() {
        for d in DISTRACTORS {
            for w in d.split(' ') {
                assert!(Shape::from_name(w).is_none(), "{d}");
                assert!(!PALETTE.iter().any(|(c, _)| *c == w), "{d}");
            }
        }
    }

    #[test]
    fn missing_metadata() {
        assert!(oracle_caption("blob", "red", 3, 0).is_err());
        assert!(oracle_caption("circle", "mauve", 3, 0).is_err());
    }
}
