use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Digest of a serializable value through its canonical JSON form.
pub fn digest_of<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    short_digest(&json)
}
