//! Content digests used for mock scripts, idempotence keys and run manifests.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// First eight bytes of the SHA-256 of `data`, big-endian.
pub fn sha256_u64(data: impl AsRef<[u8]>) -> u64 {
    let digest = Sha256::digest(data.as_ref());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}
