//! Deterministic fixtures shared by unit tests, integration tests and the
//! simulation harness. Key generation is seeded from the principal name so
//! every run sees the same keys; results are cached per process because
//! RSA key generation dominates test time otherwise.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};

use crate::crypto::{AlgorithmSuite, KeyMaterial};
use crate::model::PrincipalId;

pub fn test_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn principal(name: &str) -> PrincipalId {
    PrincipalId::new(name).expect("valid principal")
}

/// Seed derived from a label, for RNG streams that must not collide.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let digest = Sha256::new_with_prefix(base.to_be_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Key material for `name`, generated deterministically and cached.
pub fn test_keys(name: &str, suite: AlgorithmSuite) -> KeyMaterial {
    seeded_keys(name, 0x6b65_7973, suite)
}

/// Key material for `name` derived from `seed`, cached per process.
pub fn seeded_keys(name: &str, seed: u64, suite: AlgorithmSuite) -> KeyMaterial {
    type Cache = Mutex<HashMap<(String, u64, AlgorithmSuite), KeyMaterial>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (name.to_owned(), seed, suite);
    if let Some(found) = cache.lock().expect("cache lock").get(&key) {
        return found.clone();
    }
    let mut rng = test_rng(derive_seed(seed, name));
    let material = KeyMaterial::generate(principal(name), suite, &mut rng);
    cache.lock().expect("cache lock").entry(key).or_insert(material).clone()
}
