//! Per-task seeds derived from one master seed.

use sha2::{Digest, Sha256};

/// Hashes `(master, path)` into an independent 64-bit seed. Paths are
/// slash-separated task names such as `"eval/multinomial/unweighted/tmaze/3"`.
pub fn derive_seed(master: u64, path: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(path.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_distinct() {
        assert_eq!(derive_seed(1, "a/b"), derive_seed(1, "a/b"));
        assert_ne!(derive_seed(1, "a/b"), derive_seed(2, "a/b"));
        assert_ne!(derive_seed(1, "a/b"), derive_seed(1, "a/c"));
    }
}
