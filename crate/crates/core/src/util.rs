//! Shared helpers: counter-based hashing for stateless pseudo-randomness,
//! content digests, and canonical float formatting for trace files.

use sha2::{Digest, Sha256};

/// splitmix64 finalizer; good avalanche, stable across platforms.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic hash of a key tuple, used for per-entity per-tick noise
/// without any RNG state in the world.
pub fn hash_u64(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ splitmix64(a ^ splitmix64(b)))
}

/// Uniform value in [0, 1) derived from a key tuple.
pub fn hash01(seed: u64, a: u64, b: u64) -> f64 {
    (hash_u64(seed, a, b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Canonical float formatting for line-delimited trace records: shortest
/// round-trip representation with negative zero normalized.
pub fn fmt_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x}")
}

/// Seconds since the Unix epoch; wall-clock metadata only, never used in
/// anything that must be deterministic.
pub fn unix_time_s() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
