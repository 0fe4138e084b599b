//! Root-seed fan-out.
//!
//! Every random quantity in a run (initial noise, per-frame noise, mock
//! encoders, projectors) is drawn from a ChaCha stream whose key is a
//! SHA-256 digest of `(domain, root seed, indices)`. Distinct domains never
//! share a stream, so adding a consumer cannot perturb existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Hash a domain label, root seed and index path into a 64-bit seed.
pub fn derive_seed(root: u64, domain: &str, indices: &[i64]) -> u64 {
    let digest = derive_key(root, domain, indices);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn derive_key(root: u64, domain: &str, indices: &[i64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(root.to_le_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Deterministic RNG for `(root, domain, indices)`.
pub fn stream(root: u64, domain: &str, indices: &[i64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(root, domain, indices))
}

/// Stream keyed additionally by an arbitrary byte payload (e.g. a prompt).
pub fn keyed_stream(root: u64, domain: &str, payload: &[u8]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(root.to_le_bytes());
    hasher.update((payload.len() as u64).to_le_bytes());
    hasher.update(payload);
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Standard-normal draws.
pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// SHA-256 of arbitrary bytes, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
