use std::fmt;
use std::sync::OnceLock;

use dsa::BigUint as DsaUint;
use rand::{CryptoRng, RngCore};
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use rsa::{BigUint as RsaUint, RsaPrivateKey, RsaPublicKey};

use super::{AlgorithmSuite, CryptoError, SigAlg, SymAlg, WrapAlg};
use crate::codec::{tags, FramedConcat};
use crate::model::PrincipalId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyRole {
    Signing,
    Encryption,
}

impl KeyRole {
    fn code(self) -> u8 {
        match self {
            KeyRole::Signing => b'S',
            KeyRole::Encryption => b'E',
        }
    }

    fn from_code(code: u8) -> Result<Self, CryptoError> {
        match code {
            b'S' => Ok(KeyRole::Signing),
            b'E' => Ok(KeyRole::Encryption),
            _ => Err(CryptoError::BadKeyEncoding("unknown key role".into())),
        }
    }
}

impl fmt::Display for KeyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyRole::Signing => "signing",
            KeyRole::Encryption => "encryption",
        })
    }
}

impl std::str::FromStr for KeyRole {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, CryptoError> {
        match s {
            "signing" => Ok(KeyRole::Signing),
            "encryption" => Ok(KeyRole::Encryption),
            other => Err(CryptoError::BadKeyEncoding(format!("unknown key role {other}"))),
        }
    }
}

/// Algorithm a key belongs to; signing and encryption keys never share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyAlg {
    Sig(SigAlg),
    Wrap(WrapAlg),
}

impl KeyAlg {
    fn to_bytes(self) -> [u8; 2] {
        match self {
            KeyAlg::Sig(a) => [b'S', a.code()],
            KeyAlg::Wrap(a) => [b'W', a.code()],
        }
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        match bytes {
            [b'S', code] => Ok(KeyAlg::Sig(SigAlg::from_code(*code)?)),
            [b'W', code] => Ok(KeyAlg::Wrap(WrapAlg::from_code(*code)?)),
            _ => Err(CryptoError::BadKeyEncoding("bad algorithm id".into())),
        }
    }

    fn role(self) -> KeyRole {
        match self {
            KeyAlg::Sig(_) => KeyRole::Signing,
            KeyAlg::Wrap(_) => KeyRole::Encryption,
        }
    }
}

#[derive(Clone)]
pub(crate) enum PublicMaterial {
    Dsa(dsa::VerifyingKey),
    Ed25519(ed25519_dalek::VerifyingKey),
    Rsa(RsaPublicKey),
}

#[derive(Clone)]
pub(crate) enum PrivateMaterial {
    Dsa(dsa::SigningKey),
    Ed25519(ed25519_dalek::SigningKey),
    Rsa(RsaPrivateKey),
}

#[derive(Clone)]
pub struct PublicKey {
    owner: PrincipalId,
    alg: KeyAlg,
    pub(crate) material: PublicMaterial,
}

#[derive(Clone)]
pub struct PrivateKey {
    owner: PrincipalId,
    alg: KeyAlg,
    pub(crate) material: PrivateMaterial,
}

#[derive(Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

/// Everything one principal holds locally: a signing pair and an
/// encryption pair. Only the public halves ever leave the client.
#[derive(Clone)]
pub struct KeyMaterial {
    pub owner: PrincipalId,
    pub suite: AlgorithmSuite,
    pub signing: KeyPair,
    pub encryption: KeyPair,
}

impl PublicKey {
    pub fn owner(&self) -> &PrincipalId {
        &self.owner
    }

    pub fn role(&self) -> KeyRole {
        self.alg.role()
    }

    pub fn alg(&self) -> KeyAlg {
        self.alg
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let base = FramedConcat::new()
            .push(tags::ALG, self.alg.to_bytes().to_vec())
            .push(tags::ROLE, vec![self.role().code()])
            .push_str(tags::OWNER, self.owner.as_str());
        let framed = match &self.material {
            PublicMaterial::Dsa(vk) => push_dsa_public(base, vk),
            PublicMaterial::Ed25519(vk) => base.push(tags::KEY_PUBLIC, vk.to_bytes().to_vec()),
            PublicMaterial::Rsa(pk) => base
                .push(tags::BIGNUM_A, pk.n().to_bytes_be())
                .push(tags::BIGNUM_B, pk.e().to_bytes_be()),
        };
        framed.encode().expect("key parts are small and uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let f = FramedConcat::parse(bytes).map_err(bad_encoding)?;
        let (owner, alg) = parse_header(&f)?;
        let material = match alg {
            KeyAlg::Sig(SigAlg::Dsa) => {
                f.expect_tags(&[
                    tags::ALG,
                    tags::ROLE,
                    tags::OWNER,
                    tags::BIGNUM_A,
                    tags::BIGNUM_B,
                    tags::BIGNUM_C,
                    tags::BIGNUM_D,
                ])
                .map_err(bad_encoding)?;
                PublicMaterial::Dsa(parse_dsa_public(&f)?)
            }
            KeyAlg::Sig(SigAlg::Ed25519) => {
                f.expect_tags(&[tags::ALG, tags::ROLE, tags::OWNER, tags::KEY_PUBLIC])
                    .map_err(bad_encoding)?;
                let raw: [u8; 32] = f
                    .require(tags::KEY_PUBLIC)
                    .map_err(bad_encoding)?
                    .try_into()
                    .map_err(|_| CryptoError::BadKeyEncoding("ed25519 key length".into()))?;
                PublicMaterial::Ed25519(
                    ed25519_dalek::VerifyingKey::from_bytes(&raw)
                        .map_err(|_| CryptoError::BadKeyEncoding("ed25519 point".into()))?,
                )
            }
            KeyAlg::Wrap(WrapAlg::RsaOaep2048) => {
                f.expect_tags(&[tags::ALG, tags::ROLE, tags::OWNER, tags::BIGNUM_A, tags::BIGNUM_B])
                    .map_err(bad_encoding)?;
                let n = RsaUint::from_bytes_be(f.require(tags::BIGNUM_A).map_err(bad_encoding)?);
                let e = RsaUint::from_bytes_be(f.require(tags::BIGNUM_B).map_err(bad_encoding)?);
                let pk = RsaPublicKey::new(n, e).map_err(|_| CryptoError::BadKeyEncoding("rsa key".into()))?;
                check_rsa_size(pk.size())?;
                PublicMaterial::Rsa(pk)
            }
        };
        Ok(Self { owner, alg, material })
    }

    /// Hex SHA-256 of the serialized key, for display.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest as _, Sha256};
        hex::encode(&Sha256::digest(self.to_bytes())[..16])
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("owner", &self.owner)
            .field("alg", &self.alg)
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl PrivateKey {
    pub fn owner(&self) -> &PrincipalId {
        &self.owner
    }

    pub fn role(&self) -> KeyRole {
        self.alg.role()
    }

    pub fn alg(&self) -> KeyAlg {
        self.alg
    }

    pub fn public_key(&self) -> PublicKey {
        let material = match &self.material {
            PrivateMaterial::Dsa(sk) => PublicMaterial::Dsa(sk.verifying_key().clone()),
            PrivateMaterial::Ed25519(sk) => PublicMaterial::Ed25519(sk.verifying_key()),
            PrivateMaterial::Rsa(sk) => PublicMaterial::Rsa(sk.to_public_key()),
        };
        PublicKey {
            owner: self.owner.clone(),
            alg: self.alg,
            material,
        }
    }

    /// Serialized secret key. Callers are responsible for protecting it;
    /// the only intended consumer is the passphrase-sealed keyring.
    pub fn to_secret_bytes(&self) -> Vec<u8> {
        let base = FramedConcat::new()
            .push(tags::ALG, self.alg.to_bytes().to_vec())
            .push(tags::ROLE, vec![self.role().code()])
            .push_str(tags::OWNER, self.owner.as_str());
        let framed = match &self.material {
            PrivateMaterial::Dsa(sk) => {
                push_dsa_public(base, sk.verifying_key()).push(tags::KEY_SECRET, sk.x().to_bytes_be())
            }
            PrivateMaterial::Ed25519(sk) => base.push(tags::KEY_SECRET, sk.to_bytes().to_vec()),
            PrivateMaterial::Rsa(sk) => {
                let primes = sk.primes();
                base.push(tags::BIGNUM_A, sk.n().to_bytes_be())
                    .push(tags::BIGNUM_B, sk.e().to_bytes_be())
                    .push(tags::KEY_SECRET, sk.d().to_bytes_be())
                    .push(tags::BIGNUM_E, primes[0].to_bytes_be())
                    .push(tags::BIGNUM_F, primes[1].to_bytes_be())
            }
        };
        framed.encode().expect("key parts are small and uniquely tagged")
    }

    pub fn from_secret_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let f = FramedConcat::parse(bytes).map_err(bad_encoding)?;
        let (owner, alg) = parse_header(&f)?;
        let secret = f.require(tags::KEY_SECRET).map_err(bad_encoding)?;
        let material = match alg {
            KeyAlg::Sig(SigAlg::Dsa) => {
                let vk = parse_dsa_public(&f)?;
                let sk = dsa::SigningKey::from_components(vk, DsaUint::from_bytes_be(secret))
                    .map_err(|_| CryptoError::BadKeyEncoding("dsa secret".into()))?;
                PrivateMaterial::Dsa(sk)
            }
            KeyAlg::Sig(SigAlg::Ed25519) => {
                let raw: [u8; 32] = secret
                    .try_into()
                    .map_err(|_| CryptoError::BadKeyEncoding("ed25519 secret length".into()))?;
                PrivateMaterial::Ed25519(ed25519_dalek::SigningKey::from_bytes(&raw))
            }
            KeyAlg::Wrap(WrapAlg::RsaOaep2048) => {
                let get = |tag| f.require(tag).map(RsaUint::from_bytes_be).map_err(bad_encoding);
                let sk = RsaPrivateKey::from_components(
                    get(tags::BIGNUM_A)?,
                    get(tags::BIGNUM_B)?,
                    RsaUint::from_bytes_be(secret),
                    vec![get(tags::BIGNUM_E)?, get(tags::BIGNUM_F)?],
                )
                .map_err(|_| CryptoError::BadKeyEncoding("rsa secret".into()))?;
                check_rsa_size(sk.size())?;
                PrivateMaterial::Rsa(sk)
            }
        };
        Ok(Self { owner, alg, material })
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrivateKey")
            .field("owner", &self.owner)
            .field("alg", &self.alg)
            .finish_non_exhaustive()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("owner", &self.owner)
            .field("suite", &self.suite)
            .field("signing", &self.signing.public)
            .field("encryption", &self.encryption.public)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn role(&self) -> KeyRole {
        self.public.role()
    }

    pub fn owner(&self) -> &PrincipalId {
        self.public.owner()
    }
}

impl KeyMaterial {
    pub fn generate(owner: PrincipalId, suite: AlgorithmSuite, rng: &mut (impl RngCore + CryptoRng + ?Sized)) -> Self {
        Self {
            signing: generate_keypair(KeyRole::Signing, suite, owner.clone(), rng),
            encryption: generate_keypair(KeyRole::Encryption, suite, owner.clone(), rng),
            owner,
            suite,
        }
    }

    pub fn to_secret_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::OWNER, self.owner.as_str())
            .push(tags::SUITE, self.suite.to_bytes().to_vec())
            .push(tags::SIGNING_KEY, self.signing.private.to_secret_bytes())
            .push(tags::ENCRYPTION_KEY, self.encryption.private.to_secret_bytes())
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_secret_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let f = FramedConcat::parse(bytes).map_err(bad_encoding)?;
        let owner = PrincipalId::new(f.require_str(tags::OWNER).map_err(bad_encoding)?)
            .map_err(|e| CryptoError::BadKeyEncoding(e.to_string()))?;
        let suite = AlgorithmSuite::from_bytes(f.require(tags::SUITE).map_err(bad_encoding)?)?;
        let pair = |tag, role| -> Result<KeyPair, CryptoError> {
            let private = PrivateKey::from_secret_bytes(f.require(tag).map_err(bad_encoding)?)?;
            if private.role() != role || private.owner() != &owner {
                return Err(CryptoError::BadKeyEncoding(
                    "key does not belong to this keyring".into(),
                ));
            }
            Ok(KeyPair {
                public: private.public_key(),
                private,
            })
        };
        Ok(Self {
            signing: pair(tags::SIGNING_KEY, KeyRole::Signing)?,
            encryption: pair(tags::ENCRYPTION_KEY, KeyRole::Encryption)?,
            owner,
            suite,
        })
    }
}

pub fn generate_keypair(
    role: KeyRole,
    suite: AlgorithmSuite,
    owner: PrincipalId,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> KeyPair {
    let mut rng = rng;
    let (alg, material) = match role {
        KeyRole::Signing => match suite.sig {
            SigAlg::Dsa => {
                let sk = dsa::SigningKey::generate(&mut rng, dsa_components().clone());
                (KeyAlg::Sig(SigAlg::Dsa), PrivateMaterial::Dsa(sk))
            }
            SigAlg::Ed25519 => {
                let mut seed = [0u8; 32];
                rng.fill_bytes(&mut seed);
                (
                    KeyAlg::Sig(SigAlg::Ed25519),
                    PrivateMaterial::Ed25519(ed25519_dalek::SigningKey::from_bytes(&seed)),
                )
            }
        },
        KeyRole::Encryption => match suite.wrap {
            WrapAlg::RsaOaep2048 => {
                let sk = RsaPrivateKey::new(&mut rng, 2048).expect("RSA key generation");
                (KeyAlg::Wrap(WrapAlg::RsaOaep2048), PrivateMaterial::Rsa(sk))
            }
        },
    };
    let private = PrivateKey { owner, alg, material };
    KeyPair {
        public: private.public_key(),
        private,
    }
}

/// Symmetric key for one message body.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey {
    alg: SymAlg,
    bytes: Vec<u8>,
}

impl SessionKey {
    pub fn from_bytes(alg: SymAlg, bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != alg.key_len() {
            return Err(CryptoError::BadKeyLength {
                expected: alg.key_len(),
                found: bytes.len(),
            });
        }
        Ok(Self {
            alg,
            bytes: bytes.to_vec(),
        })
    }

    pub fn alg(&self) -> SymAlg {
        self.alg
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub(crate) fn expose(&self) -> &[u8] {
        &self.bytes
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey({}, <redacted>)", self.alg)
    }
}

impl Drop for SessionKey {
    fn drop(&mut self) {
        self.bytes.iter_mut().for_each(|b| *b = 0);
    }
}

/// Parity bits of TripleDES keys are ignored by the cipher, so any 24
/// random bytes make a valid key.
pub fn generate_session_key(suite: AlgorithmSuite, rng: &mut (impl RngCore + CryptoRng + ?Sized)) -> SessionKey {
    let mut bytes = vec![0u8; suite.sym.key_len()];
    rng.fill_bytes(&mut bytes);
    SessionKey { alg: suite.sym, bytes }
}

// Shared DSA domain parameters (L = 1024, N = 160). All principals draw their
// keys from the same group.
const DSA_P: &str = "85fb60492ac1d0860e874211807da477ecd52b55a93d25ac615c873aa92e5b0eb75040f65ebf054a84c502838f2dbe1ee78f4c633914f5b4efd2ec378438c314de6baf9a976b93d5472ad3a016e0540a0deebd2ea42504cf316d31a70ebf37ca79c3d2bdc05ce714b5c0015014e79eb33e2adfb07a3642d11dea322fe52dda53";
const DSA_Q: &str = "95250eac4ae7f7d7fa0abd433529775f8901ca71";
const DSA_G: &str = "4f44ee673e6a4f5789a7d70e3f2c03c994f15cc615434a083b6651e604501bf93bfb655f1a1208e263e076f9e5666fcd37906b62d998936ea1e4ad2917683ef8e51bf20265a44ff5bc40018c2419b0eb240d3ab1254b37cd0cc547192c652680ac66513575805c4de50f7273c83fe80935762c1931b092cb546d7bf32754e3e0";

pub fn dsa_components() -> &'static dsa::Components {
    static COMPONENTS: OnceLock<dsa::Components> = OnceLock::new();
    COMPONENTS.get_or_init(|| {
        let parse = |hex_str: &str| DsaUint::parse_bytes(hex_str.as_bytes(), 16).expect("valid hex");
        dsa::Components::from_components(parse(DSA_P), parse(DSA_Q), parse(DSA_G)).expect("valid DSA group")
    })
}

/// Byte width of one DSA signature component (r or s).
pub(crate) fn dsa_scalar_len() -> usize {
    dsa_components().q().bits().div_ceil(8)
}

fn push_dsa_public(base: FramedConcat, vk: &dsa::VerifyingKey) -> FramedConcat {
    let c = vk.components();
    base.push(tags::BIGNUM_A, c.p().to_bytes_be())
        .push(tags::BIGNUM_B, c.q().to_bytes_be())
        .push(tags::BIGNUM_C, c.g().to_bytes_be())
        .push(tags::BIGNUM_D, vk.y().to_bytes_be())
}

fn parse_dsa_public(f: &FramedConcat) -> Result<dsa::VerifyingKey, CryptoError> {
    let get = |tag| f.require(tag).map(DsaUint::from_bytes_be).map_err(bad_encoding);
    let components = dsa::Components::from_components(get(tags::BIGNUM_A)?, get(tags::BIGNUM_B)?, get(tags::BIGNUM_C)?)
        .map_err(|_| CryptoError::BadKeyEncoding("dsa parameters".into()))?;
    if &components != dsa_components() {
        return Err(CryptoError::BadKeyEncoding("unsupported DSA group".into()));
    }
    dsa::VerifyingKey::from_components(components, get(tags::BIGNUM_D)?)
        .map_err(|_| CryptoError::BadKeyEncoding("dsa public value".into()))
}

fn parse_header(f: &FramedConcat) -> Result<(PrincipalId, KeyAlg), CryptoError> {
    let alg = KeyAlg::from_bytes(f.require(tags::ALG).map_err(bad_encoding)?)?;
    let role_bytes = f.require(tags::ROLE).map_err(bad_encoding)?;
    let role = match role_bytes {
        [code] => KeyRole::from_code(*code)?,
        _ => return Err(CryptoError::BadKeyEncoding("bad role".into())),
    };
    if role != alg.role() {
        return Err(CryptoError::BadKeyEncoding("role does not match algorithm".into()));
    }
    let owner = PrincipalId::new(f.require_str(tags::OWNER).map_err(bad_encoding)?)
        .map_err(|e| CryptoError::BadKeyEncoding(e.to_string()))?;
    Ok((owner, alg))
}

fn check_rsa_size(size: usize) -> Result<(), CryptoError> {
    if size != WrapAlg::RsaOaep2048.modulus_len() {
        return Err(CryptoError::BadKeyEncoding(format!("RSA modulus is {size} bytes")));
    }
    Ok(())
}

fn bad_encoding(e: crate::codec::FrameError) -> CryptoError {
    CryptoError::BadKeyEncoding(e.to_string())
}
