// SPDX-License-Identifier: Apache-2.0

//! Content hashes and seed derivation.
//!
//! Every per-item seed in the pipeline is derived from the run seed and a
//! stable key, so results never depend on scheduling or iteration order.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of a byte slice.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(content_hash(&bytes))
}

/// Hash of several length-prefixed parts, hex encoded.
pub fn hash_parts(parts: &[&[u8]]) -> String {
    hex::encode(digest_parts(parts))
}

fn digest_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Derive a child seed from a parent seed and a key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let digest = digest_parts(&[&seed.to_le_bytes(), key.as_bytes()]);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn derive_seed_indexed(seed: u64, key: &str, index: u64) -> u64 {
    let digest = digest_parts(&[&seed.to_le_bytes(), key.as_bytes(), &index.to_le_bytes()]);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_key_sensitive() {
        assert_eq!(derive_seed(7, "s1"), derive_seed(7, "s1"));
        assert_ne!(derive_seed(7, "s1"), derive_seed(7, "s2"));
        assert_ne!(derive_seed(7, "s1"), derive_seed(8, "s1"));
        assert_ne!(derive_seed_indexed(7, "k", 0), derive_seed_indexed(7, "k", 1));
    }

    #[test]
    fn parts_are_length_prefixed() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }
}
