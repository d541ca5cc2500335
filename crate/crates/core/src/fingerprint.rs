//! Content fingerprints for reproducibility checks.
//!
//! A fingerprint is the lowercase hex SHA-256 of a canonical byte encoding
//! of the value. For serde values the canonical encoding is compact JSON
//! with struct fields in declaration order and maps as `BTreeMap` (sorted
//! keys), so equal values always hash equal.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of raw bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Hex SHA-256 of a value's compact JSON encoding.
///
/// Panics if the value cannot be serialized; fingerprinted types are all
/// plain data and serialization cannot fail for them.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("fingerprinted value must serialize");
    hash_bytes(&json)
}

/// Hex SHA-256 of several already-hashed parts, combined in order.
///
/// Each part is fed through with a NUL separator so part boundaries cannot
/// be confused.
pub fn combine(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_bytes_matches_known_vector() {
        // sha256 of the empty string, a standard test vector
        assert_eq!(
            hash_bytes(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn equal_values_hash_equal() {
        #[derive(Serialize)]
        struct Probe {
            a: u32,
            b: String,
        }
        let x = Probe { a: 1, b: "x".into() };
        let y = Probe { a: 1, b: "x".into() };
        assert_eq!(hash_json(&x), hash_json(&y));
    }

    #[test]
    fn different_values_hash_differently() {
        assert_ne!(hash_json(&1u32), hash_json(&2u32));
    }

    #[test]
    fn combine_respects_boundaries() {
        // ["ab", "c"] and ["a", "bc"] must not collide
        assert_ne!(combine(&["ab", "c"]), combine(&["a", "bc"]));
        assert_eq!(combine(&["a", "b"]), combine(&["a", "b"]));
    }
}
