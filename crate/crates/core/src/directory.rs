//! User accounts and the public-key directory.
//!
//! The directory stores salted password hashes and public keys only.
//! Private keys are generated and kept client-side.

use std::collections::{BTreeMap, HashMap};

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{tags, FramedConcat};
use crate::crypto::{AlgorithmSuite, KeyMaterial, KeyRole, PublicKey};
use crate::model::{ModelError, PrincipalId};

pub const MIN_PASSWORD_LEN: usize = 8;
pub const DEFAULT_TOKEN_TTL: u64 = 3600;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DirectoryError {
    #[error("email already registered")]
    EmailTaken,
    #[error("password must be at least {MIN_PASSWORD_LEN} characters")]
    WeakPassword,
    #[error("bad credentials")]
    BadCredentials,
    #[error("authentication required")]
    AuthRequired,
    #[error("unknown principal {0}")]
    UnknownPrincipal(String),
    #[error("key does not belong to {0} or has the wrong role")]
    BadKey(PrincipalId),
    #[error("password hashing failed: {0}")]
    Hashing(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Argon2id cost parameters, the pluggable slot for password hashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PasswordCost {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl PasswordCost {
    /// Cheap parameters for tests and simulations. Not for deployment.
    pub const TESTING: Self = Self {
        memory_kib: 64,
        iterations: 1,
        parallelism: 1,
    };

    fn hasher(self) -> Result<Argon2<'static>, DirectoryError> {
        let params = Params::new(self.memory_kib, self.iterations, self.parallelism, None)
            .map_err(|e| DirectoryError::Hashing(e.to_string()))?;
        Ok(Argon2::new(Algorithm::Argon2id, Version::V0x13, params))
    }
}

impl Default for PasswordCost {
    fn default() -> Self {
        Self {
            memory_kib: Params::DEFAULT_M_COST,
            iterations: Params::DEFAULT_T_COST,
            parallelism: Params::DEFAULT_P_COST,
        }
    }
}

/// Hashes with a fresh random salt. The result is a PHC string, which
/// records algorithm and parameters alongside salt and hash.
pub fn hash_password(
    password: &str,
    cost: PasswordCost,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<String, DirectoryError> {
    let mut salt = [0u8; 16];
    rng.fill_bytes(&mut salt);
    let salt = SaltString::encode_b64(&salt).map_err(|e| DirectoryError::Hashing(e.to_string()))?;
    let hash = cost
        .hasher()?
        .hash_password(password.as_bytes(), &salt)
        .map_err(|e| DirectoryError::Hashing(e.to_string()))?;
    Ok(hash.to_string())
}

/// Constant-time check (the comparison inside argon2 is constant-time).
pub fn verify_password(password: &str, phc: &str) -> bool {
    let Ok(parsed) = PasswordHash::new(phc) else {
        return false;
    };
    // Parameters come from the stored string, not the current config.
    Argon2::default().verify_password(password.as_bytes(), &parsed).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub email: PrincipalId,
    /// PHC-format argon2id hash.
    pub password_hash: String,
    pub signing_pub: PublicKey,
    pub encryption_pub: PublicKey,
    pub created_at: u64,
}

impl UserRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::OWNER, self.email.as_str())
            .push_str(tags::PASSWORD_HASH, &self.password_hash)
            .push(tags::SIGNING_PUB, self.signing_pub.to_bytes())
            .push(tags::ENCRYPTION_PUB, self.encryption_pub.to_bytes())
            .push_u64(tags::TIMESTAMP, self.created_at)
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[
            tags::OWNER,
            tags::PASSWORD_HASH,
            tags::SIGNING_PUB,
            tags::ENCRYPTION_PUB,
            tags::TIMESTAMP,
        ])?;
        Ok(Self {
            email: PrincipalId::new(f.require_str(tags::OWNER)?)?,
            password_hash: f.require_str(tags::PASSWORD_HASH)?.to_owned(),
            signing_pub: PublicKey::from_bytes(f.require(tags::SIGNING_PUB)?)?,
            encryption_pub: PublicKey::from_bytes(f.require(tags::ENCRYPTION_PUB)?)?,
            created_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

#[derive(Debug, Clone)]
struct Session {
    user: PrincipalId,
    expires_at: u64,
}

/// In-memory directory. Persistence is the server's job: it writes every
/// [`UserRecord`] this returns and replays them through [`Directory::restore`].
#[derive(Debug)]
pub struct Directory {
    users: BTreeMap<PrincipalId, UserRecord>,
    sessions: HashMap<String, Session>,
    cost: PasswordCost,
    token_ttl: u64,
    /// Verified against for unknown users so both failure paths cost the same.
    decoy_hash: Option<String>,
}

impl Directory {
    pub fn new(cost: PasswordCost) -> Self {
        Self {
            users: BTreeMap::new(),
            sessions: HashMap::new(),
            cost,
            token_ttl: DEFAULT_TOKEN_TTL,
            decoy_hash: None,
        }
    }

    pub fn with_token_ttl(mut self, ttl: u64) -> Self {
        self.token_ttl = ttl;
        self
    }

    /// Re-inserts a persisted record; later records for the same email win.
    pub fn restore(&mut self, record: UserRecord) {
        self.users.insert(record.email.clone(), record);
    }

    /// Server side of registration: the client has already generated its
    /// key pairs and sends only the public halves.
    pub fn register_user(
        &mut self,
        email: &str,
        password: &str,
        signing_pub: PublicKey,
        encryption_pub: PublicKey,
        now: u64,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<UserRecord, DirectoryError> {
        let email = PrincipalId::new(email)?;
        if self.users.contains_key(&email) {
            return Err(DirectoryError::EmailTaken);
        }
        if password.chars().count() < MIN_PASSWORD_LEN {
            return Err(DirectoryError::WeakPassword);
        }
        for (key, role) in [(&signing_pub, KeyRole::Signing), (&encryption_pub, KeyRole::Encryption)] {
            if key.owner() != &email || key.role() != role {
                return Err(DirectoryError::BadKey(email));
            }
        }
        let record = UserRecord {
            password_hash: hash_password(password, self.cost, rng)?,
            email: email.clone(),
            signing_pub,
            encryption_pub,
            created_at: now,
        };
        self.users.insert(email, record.clone());
        Ok(record)
    }

    pub fn authenticate(
        &mut self,
        email: &str,
        password: &str,
        now: u64,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<String, DirectoryError> {
        let user = PrincipalId::new(email).ok().and_then(|id| self.users.get(&id));
        let ok = match user {
            Some(record) => verify_password(password, &record.password_hash),
            None => {
                if self.decoy_hash.is_none() {
                    self.decoy_hash = Some(hash_password("decoy password", self.cost, rng)?);
                }
                verify_password(password, self.decoy_hash.as_deref().unwrap_or_default());
                false
            }
        };
        let Some(record) = user.filter(|_| ok) else {
            return Err(DirectoryError::BadCredentials);
        };
        let user = record.email.clone();
        let mut raw = [0u8; 16];
        rng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        self.sessions.retain(|_, s| s.expires_at > now);
        self.sessions.insert(
            token.clone(),
            Session {
                user,
                expires_at: now.saturating_add(self.token_ttl),
            },
        );
        Ok(token)
    }

    /// Resolves a session token to its user.
    pub fn check_token(&self, token: &str, now: u64) -> Result<PrincipalId, DirectoryError> {
        match self.sessions.get(token) {
            Some(s) if s.expires_at > now => Ok(s.user.clone()),
            _ => Err(DirectoryError::AuthRequired),
        }
    }

    pub fn lookup_public_key(&self, email: &str, role: KeyRole) -> Result<PublicKey, DirectoryError> {
        let record = self.user(email)?;
        Ok(match role {
            KeyRole::Signing => record.signing_pub.clone(),
            KeyRole::Encryption => record.encryption_pub.clone(),
        })
    }

    pub fn user(&self, email: &str) -> Result<&UserRecord, DirectoryError> {
        PrincipalId::new(email)
            .ok()
            .and_then(|id| self.users.get(&id))
            .ok_or_else(|| DirectoryError::UnknownPrincipal(email.to_owned()))
    }

    /// Drops a user again; used to roll back a registration whose
    /// persistence failed.
    pub fn forget(&mut self, id: &PrincipalId) {
        self.users.remove(id);
        self.sessions.retain(|_, s| &s.user != id);
    }

    pub fn contains(&self, id: &PrincipalId) -> bool {
        self.users.contains_key(id)
    }

    /// Administrative reset, standing in for mailed-back passwords. Drops
    /// the user's open sessions.
    pub fn reset_password(
        &mut self,
        email: &str,
        new_password: &str,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<UserRecord, DirectoryError> {
        if new_password.chars().count() < MIN_PASSWORD_LEN {
            return Err(DirectoryError::WeakPassword);
        }
        let hash = hash_password(new_password, self.cost, rng)?;
        let id = self.user(email)?.email.clone();
        let record = self.users.get_mut(&id).expect("looked up above");
        record.password_hash = hash;
        let record = record.clone();
        self.sessions.retain(|_, s| s.user != id);
        Ok(record)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }
}

/// Client-side registration against a local directory: generates both key
/// pairs, registers the public halves and hands back the private material.
pub fn register(
    directory: &mut Directory,
    email: &str,
    password: &str,
    suite: AlgorithmSuite,
    now: u64,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<(UserRecord, KeyMaterial), DirectoryError> {
    let owner = PrincipalId::new(email)?;
    if directory.contains(&owner) {
        return Err(DirectoryError::EmailTaken);
    }
    let keys = KeyMaterial::generate(owner, suite, rng);
    let record = directory.register_user(
        email,
        password,
        keys.signing.public.clone(),
        keys.encryption.public.clone(),
        now,
        rng,
    )?;
    Ok((record, keys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto;
    use crate::testkit::{test_keys, test_rng};

    fn directory() -> Directory {
        Directory::new(PasswordCost::TESTING)
    }

    fn add(dir: &mut Directory, email: &str, password: &str) -> Result<UserRecord, DirectoryError> {
        let keys = test_keys(email, AlgorithmSuite::CLASSIC);
        dir.register_user(
            email,
            password,
            keys.signing.public.clone(),
            keys.encryption.public.clone(),
            0,
            &mut test_rng(1),
        )
    }

    #[test]
    fn register_and_lookup() {
        let mut dir = directory();
        add(&mut dir, "alice@x", "correct horse").unwrap();
        let keys = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let signing = dir.lookup_public_key("ALICE@x", KeyRole::Signing).unwrap();
        let digest = crypto::hash(b"m", AlgorithmSuite::CLASSIC);
        assert!(crypto::verify(
            &signing,
            &digest,
            &crypto::sign(&keys.signing.private, &digest).unwrap()
        ));
        assert_ne!(signing, dir.lookup_public_key("alice@x", KeyRole::Encryption).unwrap());
        assert_eq!(
            dir.lookup_public_key("nobody@x", KeyRole::Signing),
            Err(DirectoryError::UnknownPrincipal("nobody@x".into()))
        );
    }

    #[test]
    fn registration_policy() {
        let mut dir = directory();
        assert_eq!(add(&mut dir, "alice@x", "short"), Err(DirectoryError::WeakPassword));
        add(&mut dir, "alice@x", "long enough").unwrap();
        assert_eq!(add(&mut dir, "Alice@X", "long enough"), Err(DirectoryError::EmailTaken));
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let err = dir
            .register_user(
                "carol@x",
                "long enough",
                bob.signing.public.clone(),
                bob.encryption.public.clone(),
                0,
                &mut test_rng(1),
            )
            .unwrap_err();
        assert!(matches!(err, DirectoryError::BadKey(_)));
    }

    #[test]
    fn authentication() {
        let mut dir = directory().with_token_ttl(100);
        add(&mut dir, "alice@x", "correct horse").unwrap();
        let token = dir
            .authenticate("alice@x", "correct horse", 10, &mut test_rng(2))
            .unwrap();
        assert_eq!(token.len(), 32);
        assert_eq!(dir.check_token(&token, 50).unwrap().as_str(), "alice@x");
        assert_eq!(dir.check_token(&token, 110), Err(DirectoryError::AuthRequired));
        assert_eq!(dir.check_token("ffff", 50), Err(DirectoryError::AuthRequired));
        let wrong = dir.authenticate("alice@x", "battery staple", 10, &mut test_rng(2));
        let unknown = dir.authenticate("nobody@x", "correct horse", 10, &mut test_rng(2));
        assert_eq!(wrong, Err(DirectoryError::BadCredentials));
        assert_eq!(wrong, unknown);
    }

    #[test]
    fn salted_hashes_differ() {
        let mut dir = directory();
        let mut rng = test_rng(1);
        let mut add = |email: &str| {
            let keys = test_keys(email, AlgorithmSuite::CLASSIC);
            dir.register_user(
                email,
                "same password",
                keys.signing.public.clone(),
                keys.encryption.public.clone(),
                0,
                &mut rng,
            )
            .unwrap()
        };
        let a = add("alice@x");
        let b = add("bob@x");
        assert_ne!(a.password_hash, b.password_hash);
        assert!(!a.password_hash.contains("same password"));
        assert!(a.password_hash.starts_with("$argon2id$"));
    }

    #[test]
    fn reset_password_revokes_sessions() {
        let mut dir = directory();
        add(&mut dir, "alice@x", "old password").unwrap();
        let token = dir
            .authenticate("alice@x", "old password", 0, &mut test_rng(2))
            .unwrap();
        dir.reset_password("alice@x", "new password", &mut test_rng(3)).unwrap();
        assert_eq!(dir.check_token(&token, 1), Err(DirectoryError::AuthRequired));
        assert!(dir
            .authenticate("alice@x", "old password", 0, &mut test_rng(2))
            .is_err());
        dir.authenticate("alice@x", "new password", 0, &mut test_rng(2))
            .unwrap();
    }

    #[test]
    fn client_register_returns_private_keys() {
        let mut dir = directory();
        let (record, keys) = register(
            &mut dir,
            "bob@x",
            "password1",
            AlgorithmSuite::CLASSIC,
            0,
            &mut test_rng(4),
        )
        .unwrap();
        assert_eq!(record.signing_pub, keys.signing.public);
        assert_eq!(UserRecord::from_bytes(&record.to_bytes()).unwrap(), record);
    }
}
