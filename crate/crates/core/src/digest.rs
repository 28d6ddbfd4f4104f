//! SHA-256 helpers for fingerprints and cache keys.

use sha2::{Digest, Sha256};

pub use sha2::Sha256 as Hasher;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn finish(h: Sha256) -> String {
    hex(&h.finalize())
}

pub fn sha256_hex(data: &[u8]) -> String {
    finish(Sha256::new_with_prefix(data))
}

pub fn file_sha256(path: &std::path::Path) -> crate::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    #[test]
    fn known_digest() {
        assert_eq!(
            super::sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
