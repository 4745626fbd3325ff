//! Algorithm suite and the primitive operations the protocol composes.
//!
//! Primitives come from the RustCrypto crates; this module fixes how they
//! are parameterised (DSA group, OAEP hash, CBC padding, IV placement) and
//! how their outputs are serialized.

mod keys;
mod suite;

pub use keys::{
    dsa_components, generate_keypair, generate_session_key, KeyAlg, KeyMaterial, KeyPair, KeyRole, PrivateKey,
    PublicKey, SessionKey,
};
pub use suite::{AlgorithmSuite, HashAlg, SigAlg, SymAlg, WrapAlg};

use std::fmt;

use cbc::cipher::block_padding::Pkcs7;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use rand::{CryptoRng, RngCore};
use rsa::Oaep;
use sha2::Digest as _;
use thiserror::Error;

use crate::codec::{tags, FramedConcat};
use crate::model::PrincipalId;
use keys::{PrivateMaterial, PublicMaterial};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unknown algorithm: {0}")]
    UnknownAlgorithm(String),
    #[error("wrong key role: expected {expected}, got {found}")]
    WrongKeyRole { expected: KeyRole, found: KeyRole },
    #[error("key algorithm does not match suite")]
    AlgorithmMismatch,
    #[error("session key must be {expected} bytes, got {found}")]
    BadKeyLength { expected: usize, found: usize },
    #[error("ciphertext shorter than IV plus one block")]
    CiphertextTooShort,
    #[error("bad padding (wrong key or tampered ciphertext)")]
    BadPadding,
    #[error("key unwrap failed")]
    UnwrapFailure,
    #[error("malformed key: {0}")]
    BadKeyEncoding(String),
    #[error("malformed signature: {0}")]
    BadSignatureEncoding(String),
    #[error("sealed blob could not be opened")]
    UnsealFailure,
    #[error("signing failed")]
    SigningFailed,
}

/// Message digest tagged with the algorithm that produced it.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Digest {
    alg: HashAlg,
    bytes: Vec<u8>,
}

impl Digest {
    pub fn new(alg: HashAlg, bytes: Vec<u8>) -> Result<Self, CryptoError> {
        if bytes.len() != alg.output_len() {
            return Err(CryptoError::UnknownAlgorithm(format!(
                "{alg} digest must be {} bytes",
                alg.output_len()
            )));
        }
        Ok(Self { alg, bytes })
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    /// `alg code || digest bytes`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.bytes.len());
        out.push(self.alg.code());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let (&code, rest) = bytes
            .split_first()
            .ok_or_else(|| CryptoError::UnknownAlgorithm("empty digest".into()))?;
        Self::new(HashAlg::from_code(code)?, rest.to_vec())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}:{})", self.alg, self.to_hex())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Signature {
    alg: SigAlg,
    signer: PrincipalId,
    bytes: Vec<u8>,
}

impl Signature {
    pub fn alg(&self) -> SigAlg {
        self.alg
    }

    pub fn signer(&self) -> &PrincipalId {
        &self.signer
    }

    /// Raw signature value: `r || s` (fixed width) for DSA, 64 bytes for Ed25519.
    pub fn value(&self) -> &[u8] {
        &self.bytes
    }

    pub fn from_parts(alg: SigAlg, signer: PrincipalId, value: Vec<u8>) -> Self {
        Self {
            alg,
            signer,
            bytes: value,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push(tags::ALG, vec![self.alg.code()])
            .push_str(tags::OWNER, self.signer.as_str())
            .push(tags::SIG_VALUE, self.bytes.clone())
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = |e: crate::codec::FrameError| CryptoError::BadSignatureEncoding(e.to_string());
        let f = FramedConcat::parse(bytes).map_err(bad)?;
        f.expect_tags(&[tags::ALG, tags::OWNER, tags::SIG_VALUE]).map_err(bad)?;
        let alg = match f.require(tags::ALG).map_err(bad)? {
            [code] => SigAlg::from_code(*code)?,
            _ => return Err(CryptoError::BadSignatureEncoding("bad algorithm id".into())),
        };
        let signer = PrincipalId::new(f.require_str(tags::OWNER).map_err(bad)?)
            .map_err(|e| CryptoError::BadSignatureEncoding(e.to_string()))?;
        Ok(Self {
            alg,
            signer,
            bytes: f.require(tags::SIG_VALUE).map_err(bad)?.to_vec(),
        })
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Signature({} by {}: {})",
            self.alg,
            self.signer,
            hex::encode(&self.bytes)
        )
    }
}

pub fn hash(data: &[u8], suite: AlgorithmSuite) -> Digest {
    hash_with(suite.hash, data)
}

pub fn hash_with(alg: HashAlg, data: &[u8]) -> Digest {
    let bytes = match alg {
        HashAlg::Sha1 => sha1::Sha1::digest(data).to_vec(),
        HashAlg::Sha256 => sha2::Sha256::digest(data).to_vec(),
    };
    Digest { alg, bytes }
}

pub fn sign(key: &PrivateKey, digest: &Digest) -> Result<Signature, CryptoError> {
    if key.role() != KeyRole::Signing {
        return Err(CryptoError::WrongKeyRole {
            expected: KeyRole::Signing,
            found: key.role(),
        });
    }
    let bytes = match &key.material {
        PrivateMaterial::Dsa(sk) => {
            // RFC 6979 nonces keep signing deterministic and independent of the RNG
            let sig = match digest.alg {
                HashAlg::Sha1 => sk.sign_prehashed_rfc6979::<sha1::Sha1>(&digest.bytes),
                HashAlg::Sha256 => sk.sign_prehashed_rfc6979::<sha2::Sha256>(&digest.bytes),
            }
            .map_err(|_| CryptoError::SigningFailed)?;
            let width = keys::dsa_scalar_len();
            let mut out = fixed_width(&sig.r().to_bytes_be(), width);
            out.extend(fixed_width(&sig.s().to_bytes_be(), width));
            out
        }
        PrivateMaterial::Ed25519(sk) => {
            use ed25519_dalek::Signer;
            sk.sign(&signed_bytes(digest)).to_bytes().to_vec()
        }
        PrivateMaterial::Rsa(_) => unreachable!("role checked above"),
    };
    let alg = match key.alg() {
        KeyAlg::Sig(alg) => alg,
        KeyAlg::Wrap(_) => unreachable!("role checked above"),
    };
    Ok(Signature {
        alg,
        signer: key.owner().clone(),
        bytes,
    })
}

/// True iff `sig` was produced over `digest` by the private half of `key`.
/// Malformed input of any kind yields `false`.
pub fn verify(key: &PublicKey, digest: &Digest, sig: &Signature) -> bool {
    if key.role() != KeyRole::Signing || sig.signer != *key.owner() || key.alg() != KeyAlg::Sig(sig.alg) {
        return false;
    }
    match &key.material {
        PublicMaterial::Dsa(vk) => {
            use signature::hazmat::PrehashVerifier;
            let width = keys::dsa_scalar_len();
            if sig.bytes.len() != 2 * width {
                return false;
            }
            let r = dsa::BigUint::from_bytes_be(&sig.bytes[..width]);
            let s = dsa::BigUint::from_bytes_be(&sig.bytes[width..]);
            let Ok(parsed) = dsa::Signature::from_components(r, s) else {
                return false;
            };
            vk.verify_prehash(&digest.bytes, &parsed).is_ok()
        }
        PublicMaterial::Ed25519(vk) => {
            let Ok(raw) = <[u8; 64]>::try_from(sig.bytes.as_slice()) else {
                return false;
            };
            vk.verify_strict(&signed_bytes(digest), &ed25519_dalek::Signature::from_bytes(&raw))
                .is_ok()
        }
        PublicMaterial::Rsa(_) => false,
    }
}

fn signed_bytes(digest: &Digest) -> Vec<u8> {
    digest.to_bytes()
}

fn fixed_width(bytes: &[u8], width: usize) -> Vec<u8> {
    let mut out = vec![0u8; width.saturating_sub(bytes.len())];
    out.extend_from_slice(bytes);
    out
}

type TdesCbcEnc = cbc::Encryptor<des::TdesEde3>;
type TdesCbcDec = cbc::Decryptor<des::TdesEde3>;
type AesCbcEnc = cbc::Encryptor<aes::Aes256>;
type AesCbcDec = cbc::Decryptor<aes::Aes256>;

/// `IV || CBC(PKCS#7(data))` with a fresh random IV.
pub fn sym_encrypt(key: &SessionKey, data: &[u8], rng: &mut (impl RngCore + CryptoRng + ?Sized)) -> Vec<u8> {
    let mut iv = vec![0u8; key.alg().block_len()];
    rng.fill_bytes(&mut iv);
    sym_encrypt_with_iv(key, &iv, data).expect("IV has block length")
}

/// Deterministic variant of [`sym_encrypt`] with a caller-chosen IV.
pub fn sym_encrypt_with_iv(key: &SessionKey, iv: &[u8], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if iv.len() != key.alg().block_len() {
        return Err(CryptoError::BadKeyLength {
            expected: key.alg().block_len(),
            found: iv.len(),
        });
    }
    let body = match key.alg() {
        SymAlg::TripleDesCbc => TdesCbcEnc::new_from_slices(key.expose(), iv)
            .map_err(|_| CryptoError::AlgorithmMismatch)?
            .encrypt_padded_vec_mut::<Pkcs7>(data),
        SymAlg::Aes256Cbc => AesCbcEnc::new_from_slices(key.expose(), iv)
            .map_err(|_| CryptoError::AlgorithmMismatch)?
            .encrypt_padded_vec_mut::<Pkcs7>(data),
    };
    let mut out = Vec::with_capacity(iv.len() + body.len());
    out.extend_from_slice(iv);
    out.extend(body);
    Ok(out)
}

pub fn sym_decrypt(key: &SessionKey, data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let block = key.alg().block_len();
    if data.len() < 2 * block || !data.len().is_multiple_of(block) {
        return Err(CryptoError::CiphertextTooShort);
    }
    let (iv, body) = data.split_at(block);
    let plain = match key.alg() {
        SymAlg::TripleDesCbc => TdesCbcDec::new_from_slices(key.expose(), iv)
            .map_err(|_| CryptoError::AlgorithmMismatch)?
            .decrypt_padded_vec_mut::<Pkcs7>(body),
        SymAlg::Aes256Cbc => AesCbcDec::new_from_slices(key.expose(), iv)
            .map_err(|_| CryptoError::AlgorithmMismatch)?
            .decrypt_padded_vec_mut::<Pkcs7>(body),
    };
    plain.map_err(|_| CryptoError::BadPadding)
}

fn oaep() -> Oaep {
    Oaep::new::<sha2::Sha256>()
}

fn rsa_public(key: &PublicKey) -> Result<&rsa::RsaPublicKey, CryptoError> {
    match &key.material {
        PublicMaterial::Rsa(pk) => Ok(pk),
        _ => Err(CryptoError::WrongKeyRole {
            expected: KeyRole::Encryption,
            found: key.role(),
        }),
    }
}

fn rsa_private(key: &PrivateKey) -> Result<&rsa::RsaPrivateKey, CryptoError> {
    match &key.material {
        PrivateMaterial::Rsa(sk) => Ok(sk),
        _ => Err(CryptoError::WrongKeyRole {
            expected: KeyRole::Encryption,
            found: key.role(),
        }),
    }
}

/// RSA-OAEP encryption of the session key. The blob is exactly one
/// modulus long.
pub fn wrap_key(
    key: &PublicKey,
    session_key: &SessionKey,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<Vec<u8>, CryptoError> {
    let pk = rsa_public(key)?;
    let mut rng = rng;
    pk.encrypt(&mut rng, oaep(), session_key.expose())
        .map_err(|_| CryptoError::UnwrapFailure)
}

pub fn unwrap_key(key: &PrivateKey, wrapped: &[u8], alg: SymAlg) -> Result<SessionKey, CryptoError> {
    let sk = rsa_private(key)?;
    let bytes = sk.decrypt(oaep(), wrapped).map_err(|_| CryptoError::UnwrapFailure)?;
    SessionKey::from_bytes(alg, &bytes).map_err(|_| CryptoError::UnwrapFailure)
}

const SEAL_DIRECT: u8 = 0;
const SEAL_HYBRID: u8 = 1;

/// Encrypts arbitrary bytes to `key`: a single OAEP block when the data
/// fits, otherwise a fresh session key wrapped to `key` plus a CBC body.
pub fn seal(
    key: &PublicKey,
    data: &[u8],
    suite: AlgorithmSuite,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<Vec<u8>, CryptoError> {
    let pk = rsa_public(key)?;
    let mut rng = rng;
    let framed = if data.len() <= suite.wrap.capacity() {
        let body = pk
            .encrypt(&mut rng, oaep(), data)
            .map_err(|_| CryptoError::UnsealFailure)?;
        FramedConcat::new()
            .push(tags::SEAL_MODE, vec![SEAL_DIRECT])
            .push(tags::SEAL_BODY, body)
    } else {
        let session_key = generate_session_key(suite, rng);
        let wrapped = wrap_key(key, &session_key, rng)?;
        FramedConcat::new()
            .push(tags::SEAL_MODE, vec![SEAL_HYBRID])
            .push(tags::SUITE, suite.to_bytes().to_vec())
            .push(tags::WRAPPED_KEY, wrapped)
            .push(tags::SEAL_BODY, sym_encrypt(&session_key, data, rng))
    };
    Ok(framed.encode().expect("uniquely tagged"))
}

pub fn unseal(key: &PrivateKey, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let sk = rsa_private(key)?;
    let f = FramedConcat::parse(sealed).map_err(|_| CryptoError::UnsealFailure)?;
    let body = f.require(tags::SEAL_BODY).map_err(|_| CryptoError::UnsealFailure)?;
    match f.require(tags::SEAL_MODE).map_err(|_| CryptoError::UnsealFailure)? {
        [SEAL_DIRECT] => {
            f.expect_tags(&[tags::SEAL_MODE, tags::SEAL_BODY])
                .map_err(|_| CryptoError::UnsealFailure)?;
            sk.decrypt(oaep(), body).map_err(|_| CryptoError::UnsealFailure)
        }
        [SEAL_HYBRID] => {
            f.expect_tags(&[tags::SEAL_MODE, tags::SUITE, tags::WRAPPED_KEY, tags::SEAL_BODY])
                .map_err(|_| CryptoError::UnsealFailure)?;
            let suite = AlgorithmSuite::from_bytes(f.require(tags::SUITE).map_err(|_| CryptoError::UnsealFailure)?)?;
            let wrapped = f.require(tags::WRAPPED_KEY).map_err(|_| CryptoError::UnsealFailure)?;
            let session_key = unwrap_key(key, wrapped, suite.sym).map_err(|_| CryptoError::UnsealFailure)?;
            sym_decrypt(&session_key, body).map_err(|_| CryptoError::UnsealFailure)
        }
        _ => Err(CryptoError::UnsealFailure),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{principal, test_keys, test_rng};

    #[test]
    fn sha1_vectors() {
        assert_eq!(
            hash(b"abc", AlgorithmSuite::CLASSIC).to_hex(),
            "a9993e364706816aba3e25717850c26c9cd0d89d"
        );
        assert_eq!(
            hash(b"", AlgorithmSuite::CLASSIC).to_hex(),
            "da39a3ee5e6b4b0d3255bfef95601890afd80709"
        );
        assert_eq!(hash(b"x", AlgorithmSuite::CLASSIC), hash(b"x", AlgorithmSuite::CLASSIC));
    }

    #[test]
    fn sign_verify_classic_and_modern() {
        for suite in [AlgorithmSuite::CLASSIC, AlgorithmSuite::MODERN] {
            let alice = test_keys("alice@x", suite);
            let bob = test_keys("bob@x", suite);
            let digest = hash(b"message", suite);
            let sig = sign(&alice.signing.private, &digest).unwrap();
            assert!(verify(&alice.signing.public, &digest, &sig));
            assert!(!verify(&bob.signing.public, &digest, &sig));

            let mut flipped = digest.as_bytes().to_vec();
            flipped[0] ^= 1;
            let flipped = Digest::new(digest.alg(), flipped).unwrap();
            assert!(!verify(&alice.signing.public, &flipped, &sig));

            let truncated = Signature::from_parts(sig.alg(), sig.signer().clone(), sig.value()[1..].to_vec());
            assert!(!verify(&alice.signing.public, &digest, &truncated));
            assert_eq!(Signature::from_bytes(&sig.to_bytes()).unwrap(), sig);
        }
    }

    #[test]
    fn dsa_signature_is_two_160_bit_integers() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let sig = sign(&alice.signing.private, &hash(b"m", AlgorithmSuite::CLASSIC)).unwrap();
        assert_eq!(sig.value().len(), 40);
    }

    #[test]
    fn encryption_key_cannot_sign() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let err = sign(&alice.encryption.private, &hash(b"m", AlgorithmSuite::CLASSIC)).unwrap_err();
        assert!(matches!(err, CryptoError::WrongKeyRole { .. }));
        assert!(wrap_key(
            &alice.signing.public,
            &generate_session_key(AlgorithmSuite::CLASSIC, &mut test_rng(1)),
            &mut test_rng(2)
        )
        .is_err());
    }

    #[test]
    fn symmetric_round_trip_and_lengths() {
        let mut rng = test_rng(7);
        for suite in [AlgorithmSuite::CLASSIC, AlgorithmSuite::MODERN] {
            let key = generate_session_key(suite, &mut rng);
            for len in [0usize, 1, 7, 8, 9, 1000] {
                let data = vec![0x5Au8; len];
                let ct = sym_encrypt(&key, &data, &mut rng);
                assert_eq!(ct.len(), suite.sym.ciphertext_len(len));
                assert_eq!(sym_decrypt(&key, &ct).unwrap(), data);
            }
            let a = sym_encrypt(&key, b"same", &mut rng);
            let b = sym_encrypt(&key, b"same", &mut rng);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn symmetric_wrong_key_and_short_input() {
        let mut rng = test_rng(8);
        let key = generate_session_key(AlgorithmSuite::CLASSIC, &mut rng);
        let other = generate_session_key(AlgorithmSuite::CLASSIC, &mut rng);
        assert_ne!(key, other);
        assert_eq!(key.len(), 24);
        let ct = sym_encrypt(&key, b"attack at dawn, bring snacks", &mut rng);
        assert!(sym_decrypt(&other, &ct).is_err());
        assert_eq!(sym_decrypt(&key, &ct[..15]), Err(CryptoError::CiphertextTooShort));
        assert_eq!(sym_decrypt(&key, &ct[..8]), Err(CryptoError::CiphertextTooShort));
    }

    #[test]
    fn wrap_unwrap() {
        let mut rng = test_rng(9);
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let ks = generate_session_key(AlgorithmSuite::CLASSIC, &mut rng);
        let wrapped = wrap_key(&bob.encryption.public, &ks, &mut rng).unwrap();
        assert_eq!(wrapped.len(), 256);
        assert_eq!(
            unwrap_key(&bob.encryption.private, &wrapped, SymAlg::TripleDesCbc).unwrap(),
            ks
        );
        assert_eq!(
            unwrap_key(&alice.encryption.private, &wrapped, SymAlg::TripleDesCbc),
            Err(CryptoError::UnwrapFailure)
        );
        let mut corrupted = wrapped.clone();
        corrupted[100] ^= 0x40;
        assert!(unwrap_key(&bob.encryption.private, &corrupted, SymAlg::TripleDesCbc).is_err());
    }

    #[test]
    fn seal_direct_and_hybrid() {
        let mut rng = test_rng(10);
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        for len in [0usize, 40, 190, 191, 5000] {
            let data: Vec<u8> = (0..len).map(|i| i as u8).collect();
            let sealed = seal(&alice.encryption.public, &data, AlgorithmSuite::CLASSIC, &mut rng).unwrap();
            assert_eq!(unseal(&alice.encryption.private, &sealed).unwrap(), data);
        }
    }

    #[test]
    fn key_serialization_round_trip() {
        for suite in [AlgorithmSuite::CLASSIC, AlgorithmSuite::MODERN] {
            let keys = test_keys("carol@x", suite);
            let back = KeyMaterial::from_secret_bytes(&keys.to_secret_bytes()).unwrap();
            assert_eq!(back.signing.public, keys.signing.public);
            assert_eq!(back.encryption.public, keys.encryption.public);
            assert_eq!(
                PublicKey::from_bytes(&keys.signing.public.to_bytes()).unwrap(),
                keys.signing.public
            );
            assert_eq!(
                PublicKey::from_bytes(&keys.encryption.public.to_bytes()).unwrap(),
                keys.encryption.public
            );
            assert_ne!(keys.signing.public.to_bytes(), keys.encryption.public.to_bytes());
            assert_eq!(keys.signing.public.owner(), &principal("carol@x"));
        }
    }

    #[test]
    fn debug_output_hides_secrets() {
        let keys = test_keys("dave@x", AlgorithmSuite::CLASSIC);
        let secret = keys.signing.private.to_secret_bytes();
        let rendered = format!("{keys:?} {:?}", keys.signing.private);
        assert!(!rendered.contains(&hex::encode(&secret[secret.len() - 20..])));
        let ks = generate_session_key(AlgorithmSuite::CLASSIC, &mut test_rng(3));
        assert!(format!("{ks:?}").contains("redacted"));
    }
}
