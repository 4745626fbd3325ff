//! The local keyring: a principal's private keys, sealed with AES-256-GCM
//! under an Argon2id key derived from a passphrase and stored as armored
//! text. The server never sees this file.
//!
//! Payload layout before armoring: version byte, Argon2id memory,
//! iterations and parallelism as big-endian `u32`s, 16-byte salt, 12-byte
//! nonce, then the ciphertext. The header is bound to the ciphertext as
//! associated data.

use std::path::Path;

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use argon2::{Algorithm, Argon2, Params, Version};
use epgp::codec::ArmoredText;
use epgp::crypto::KeyMaterial;
use epgp::directory::PasswordCost;
use rand::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::Zeroizing;

pub const KEYRING_LABEL: &str = "EPGP KEYRING";

const VERSION: u8 = 1;
const SALT_LEN: usize = 16;
const NONCE_LEN: usize = 12;
const HEADER_LEN: usize = 1 + 12 + SALT_LEN + NONCE_LEN;

#[derive(Debug, Error)]
pub enum KeyringError {
    #[error("no keyring at {0}; run `epgp register` first")]
    Missing(String),
    #[error("a keyring already exists at {0}")]
    Exists(String),
    #[error("wrong passphrase or damaged keyring")]
    Locked,
    #[error("keyring is malformed: {0}")]
    Malformed(String),
    #[error("keyring: {0}")]
    Io(#[from] std::io::Error),
}

fn derive_key(passphrase: &str, salt: &[u8], cost: PasswordCost) -> Result<Zeroizing<[u8; 32]>, KeyringError> {
    let params = Params::new(cost.memory_kib, cost.iterations, cost.parallelism, Some(32))
        .map_err(|e| KeyringError::Malformed(format!("key derivation parameters: {e}")))?;
    let mut key = Zeroizing::new([0u8; 32]);
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
        .hash_password_into(passphrase.as_bytes(), salt, key.as_mut())
        .map_err(|e| KeyringError::Malformed(format!("key derivation: {e}")))?;
    Ok(key)
}

pub fn seal(
    keys: &KeyMaterial,
    passphrase: &str,
    cost: PasswordCost,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<Vec<u8>, KeyringError> {
    let mut header = vec![VERSION];
    for v in [cost.memory_kib, cost.iterations, cost.parallelism] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    let mut salt_nonce = [0u8; SALT_LEN + NONCE_LEN];
    rng.fill_bytes(&mut salt_nonce);
    header.extend_from_slice(&salt_nonce);
    let (salt, nonce) = salt_nonce.split_at(SALT_LEN);

    let key = derive_key(passphrase, salt, cost)?;
    let cipher = Aes256Gcm::new_from_slice(key.as_ref()).expect("32-byte key");
    let secret = Zeroizing::new(keys.to_secret_bytes());
    let ciphertext = cipher
        .encrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: &secret,
                aad: &header,
            },
        )
        .map_err(|_| KeyringError::Malformed("encryption failed".into()))?;
    header.extend_from_slice(&ciphertext);
    Ok(ArmoredText::encode(KEYRING_LABEL, &header).to_bytes())
}

pub fn open(text: &[u8], passphrase: &str) -> Result<KeyMaterial, KeyringError> {
    let data = ArmoredText::parse_labeled(text, KEYRING_LABEL)
        .and_then(|a| a.decode())
        .map_err(|e| KeyringError::Malformed(e.to_string()))?;
    if data.len() < HEADER_LEN || data[0] != VERSION {
        return Err(KeyringError::Malformed("unknown version or truncated".into()));
    }
    let word = |i: usize| u32::from_be_bytes(data[1 + 4 * i..5 + 4 * i].try_into().expect("4 bytes"));
    let cost = PasswordCost {
        memory_kib: word(0),
        iterations: word(1),
        parallelism: word(2),
    };
    let (header, ciphertext) = data.split_at(HEADER_LEN);
    let salt = &header[13..13 + SALT_LEN];
    let nonce = &header[13 + SALT_LEN..];

    let key = derive_key(passphrase, salt, cost)?;
    let cipher = Aes256Gcm::new_from_slice(key.as_ref()).expect("32-byte key");
    let secret = Zeroizing::new(
        cipher
            .decrypt(
                Nonce::from_slice(nonce),
                Payload {
                    msg: ciphertext,
                    aad: header,
                },
            )
            .map_err(|_| KeyringError::Locked)?,
    );
    KeyMaterial::from_secret_bytes(&secret).map_err(|e| KeyringError::Malformed(e.to_string()))
}

pub fn load(path: &Path, passphrase: &str) -> Result<KeyMaterial, KeyringError> {
    let text = match std::fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(KeyringError::Missing(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    open(&text, passphrase)
}

/// Writes a new keyring, refusing to replace an existing one.
pub fn create(path: &Path, sealed: &[u8]) -> Result<(), KeyringError> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut options = std::fs::OpenOptions::new();
    options.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::AlreadyExists => KeyringError::Exists(path.display().to_string()),
        _ => e.into(),
    })?;
    file.write_all(sealed)?;
    file.sync_all()?;
    Ok(())
}
