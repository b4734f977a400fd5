//! Stable state digests.
//!
//! `std`'s default hasher is randomly keyed per process, so digests and
//! fingerprints feed `Hash` impls into unkeyed XXH3 instead.

use std::hash::{Hash, Hasher};

use xxhash_rust::xxh3::Xxh3;

#[derive(Clone, Default)]
pub struct StableHasher(Xxh3);

impl StableHasher {
    pub fn new() -> Self {
        Self(Xxh3::new())
    }

    pub fn finish128(&self) -> u128 {
        self.0.digest128()
    }
}

impl Hasher for StableHasher {
    fn finish(&self) -> u64 {
        self.0.digest()
    }

    fn write(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }
}

/// 64-bit digest printed in traces as 16 hex digits.
pub fn digest<T: Hash + ?Sized>(value: &T) -> u64 {
    let mut h = StableHasher::new();
    value.hash(&mut h);
    h.finish()
}

/// 128-bit fingerprint used for visited-state sets in the explorers.
pub fn fingerprint<T: Hash + ?Sized>(value: &T) -> u128 {
    let mut h = StableHasher::new();
    value.hash(&mut h);
    h.finish128()
}

pub fn hex(d: u64) -> String {
    format!("{d:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_stable_and_discriminating() {
        assert_eq!(digest(&(1u32, "a")), digest(&(1u32, "a")));
        assert_ne!(digest(&(1u32, "a")), digest(&(2u32, "a")));
        assert_eq!(hex(digest(&0u8)).len(), 16);
    }
}
