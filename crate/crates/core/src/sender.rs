//! Sender side: sealing a message for upload (hash, sign, compress,
//! encrypt, armor) and turning a forwarded receipt into NRR evidence.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{self, tags, FramedConcat};
use crate::crypto::{self, AlgorithmSuite, CryptoError, Digest, KeyAlg, KeyMaterial, KeyRole, PublicKey, SessionKey};
use crate::model::{
    encode_m5, EvidenceKind, EvidenceRecord, MessageId, ModelError, PlaintextMessage, PrincipalId, ReceiptSeal,
    TransmissionEnvelope,
};
use crate::storage::RecordFile;

pub const DEFAULT_MAX_MESSAGE_LEN: usize = 16 * 1024 * 1024;

/// Which check in [`verify_receipt`] rejected the forwarded receipt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiptCheck {
    /// M6 could not be decrypted with the sender's key.
    Decrypt,
    /// Decrypted contents are not a receipt seal.
    Malformed,
    /// The receipt refers to another message.
    WrongMessage,
    /// The receipt covers a different M5 than the one we sent.
    DigestMismatch,
    /// The receipt signature does not verify under the receiver's key.
    Signature,
}

impl std::fmt::Display for ReceiptCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReceiptCheck::Decrypt => "decrypt",
            ReceiptCheck::Malformed => "malformed",
            ReceiptCheck::WrongMessage => "wrong message",
            ReceiptCheck::DigestMismatch => "digest mismatch",
            ReceiptCheck::Signature => "signature",
        })
    }
}

#[derive(Debug, Error)]
pub enum SenderError {
    #[error("wrong key role: expected {expected}, got {found}")]
    WrongKeyRole { expected: KeyRole, found: KeyRole },
    #[error("message is {len} bytes, limit is {max}")]
    MessageTooLarge { len: usize, max: usize },
    #[error("message sender {0} does not own the signing key")]
    SenderMismatch(PrincipalId),
    #[error("recipient key belongs to {found}, message is addressed to {expected}")]
    RecipientMismatch { expected: PrincipalId, found: PrincipalId },
    #[error("key algorithm does not match suite {0}")]
    SuiteMismatch(AlgorithmSuite),
    #[error("receipt evidence invalid ({0})")]
    EvidenceInvalid(ReceiptCheck),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sender store: {0}")]
    Store(#[from] io::Error),
}

/// Intermediate outputs of the sealing pipeline.
#[derive(Debug, Clone)]
pub struct StageTrace {
    /// M1 = H(M)
    pub m1: Digest,
    /// M2 = frame(SIG: DS(M1), MSG-HDR: canonical M)
    pub m2: Vec<u8>,
    /// M3 = DEFLATE(M2)
    pub m3: Vec<u8>,
    /// M4 = IV || CBC(M3)
    pub m4: Vec<u8>,
    /// M5 = armor(frame(SYM-CT: M4))
    pub m5: Vec<u8>,
}

/// Sealing configuration.
#[derive(Debug, Clone, Copy)]
pub struct SealOptions {
    pub max_message_len: usize,
}

impl Default for SealOptions {
    fn default() -> Self {
        Self {
            max_message_len: DEFAULT_MAX_MESSAGE_LEN,
        }
    }
}

/// Runs the full transmission pipeline with a fresh session key and IV.
/// The session key is dropped before returning; only its wrapped form
/// leaves this function.
pub fn compose_and_seal(
    msg: &PlaintextMessage,
    sender_keys: &KeyMaterial,
    recipient_pub: &PublicKey,
    suite: AlgorithmSuite,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<TransmissionEnvelope, SenderError> {
    compose_and_seal_with(msg, sender_keys, recipient_pub, suite, SealOptions::default(), rng)
}

pub fn compose_and_seal_with(
    msg: &PlaintextMessage,
    sender_keys: &KeyMaterial,
    recipient_pub: &PublicKey,
    suite: AlgorithmSuite,
    options: SealOptions,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<TransmissionEnvelope, SenderError> {
    let session_key = crypto::generate_session_key(suite, rng);
    let mut iv = vec![0u8; suite.sym.block_len()];
    rng.fill_bytes(&mut iv);
    let (envelope, _) = seal_traced(msg, sender_keys, recipient_pub, suite, options, &session_key, &iv, rng)?;
    Ok(envelope)
}

/// The pipeline with caller-supplied session key and IV, returning every
/// stage output. Used by tests that recompute the stages independently.
#[allow(clippy::too_many_arguments)]
pub fn seal_traced(
    msg: &PlaintextMessage,
    sender_keys: &KeyMaterial,
    recipient_pub: &PublicKey,
    suite: AlgorithmSuite,
    options: SealOptions,
    session_key: &SessionKey,
    iv: &[u8],
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<(TransmissionEnvelope, StageTrace), SenderError> {
    check_inputs(msg, sender_keys, recipient_pub, suite, options)?;

    let canonical = msg.canonical_bytes();
    let m1 = crypto::hash(&canonical, suite);
    let signature = crypto::sign(&sender_keys.signing.private, &m1)?;
    let m2 = FramedConcat::new()
        .push(tags::SIG, signature.to_bytes())
        .push(tags::MSG_HDR, canonical)
        .encode()
        .map_err(ModelError::from)?;
    let m3 = codec::compress(&m2);
    if session_key.alg() != suite.sym {
        return Err(SenderError::SuiteMismatch(suite));
    }
    let m4 = crypto::sym_encrypt_with_iv(session_key, iv, &m3)?;
    let m5 = encode_m5(&m4);
    let wrapped_key = crypto::wrap_key(recipient_pub, session_key, rng)?;

    let envelope = TransmissionEnvelope {
        message_id: None,
        sender: msg.from.clone(),
        recipient: msg.to.clone(),
        subject: msg.subject.clone(),
        armored_body: m5.clone(),
        wrapped_key,
        suite,
        upload_time: None,
    };
    Ok((envelope, StageTrace { m1, m2, m3, m4, m5 }))
}

fn check_inputs(
    msg: &PlaintextMessage,
    sender_keys: &KeyMaterial,
    recipient_pub: &PublicKey,
    suite: AlgorithmSuite,
    options: SealOptions,
) -> Result<(), SenderError> {
    let signing = &sender_keys.signing.private;
    if signing.role() != KeyRole::Signing {
        return Err(SenderError::WrongKeyRole {
            expected: KeyRole::Signing,
            found: signing.role(),
        });
    }
    if recipient_pub.role() != KeyRole::Encryption {
        return Err(SenderError::WrongKeyRole {
            expected: KeyRole::Encryption,
            found: recipient_pub.role(),
        });
    }
    if signing.alg() != KeyAlg::Sig(suite.sig) || recipient_pub.alg() != KeyAlg::Wrap(suite.wrap) {
        return Err(SenderError::SuiteMismatch(suite));
    }
    if signing.owner() != &msg.from {
        return Err(SenderError::SenderMismatch(msg.from.clone()));
    }
    if recipient_pub.owner() != &msg.to {
        return Err(SenderError::RecipientMismatch {
            expected: msg.to.clone(),
            found: recipient_pub.owner().clone(),
        });
    }
    let len = msg.body.len() + msg.subject.len();
    if len > options.max_message_len {
        return Err(SenderError::MessageTooLarge {
            len,
            max: options.max_message_len,
        });
    }
    Ok(())
}

/// Opens a forwarded M6 and checks it against the M5 we sent. On success
/// the result is an NRR record that stands on its own.
pub fn verify_receipt(
    m6: &[u8],
    sender_keys: &KeyMaterial,
    receiver_pub: &PublicKey,
    message_id: &MessageId,
    stored_m5: &[u8],
    now: u64,
) -> Result<EvidenceRecord, SenderError> {
    let opened = crypto::unseal(&sender_keys.encryption.private, m6)
        .map_err(|_| SenderError::EvidenceInvalid(ReceiptCheck::Decrypt))?;
    let seal = ReceiptSeal::from_bytes(&opened).map_err(|_| SenderError::EvidenceInvalid(ReceiptCheck::Malformed))?;
    if &seal.message_id != message_id {
        return Err(SenderError::EvidenceInvalid(ReceiptCheck::WrongMessage));
    }
    let expected = crypto::hash_with(seal.digest.alg(), stored_m5);
    if seal.digest != expected {
        return Err(SenderError::EvidenceInvalid(ReceiptCheck::DigestMismatch));
    }
    if !crypto::verify(receiver_pub, &expected, &seal.receipt_sig) {
        return Err(SenderError::EvidenceInvalid(ReceiptCheck::Signature));
    }
    Ok(EvidenceRecord {
        kind: EvidenceKind::Nrr,
        message_id: message_id.clone(),
        sender: sender_keys.owner.clone(),
        receiver: receiver_pub.owner().clone(),
        digest: expected,
        signature: seal.receipt_sig,
        signer_key: receiver_pub.clone(),
        verdict_input: stored_m5.to_vec(),
        recorded_at: now,
    })
}

/// What the sender keeps about a message after upload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentMessage {
    pub message_id: MessageId,
    pub recipient: PrincipalId,
    pub subject: String,
    pub suite: AlgorithmSuite,
    pub m5: Vec<u8>,
    pub sent_at: u64,
}

impl SentMessage {
    fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push_str(tags::RECIPIENT, self.recipient.as_str())
            .push_str(tags::SUBJECT, &self.subject)
            .push(tags::SUITE, self.suite.to_bytes().to_vec())
            .push(tags::ARMORED_BODY, self.m5.clone())
            .push_u64(tags::TIMESTAMP, self.sent_at)
            .encode()
            .expect("uniquely tagged")
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[
            tags::MESSAGE_ID,
            tags::RECIPIENT,
            tags::SUBJECT,
            tags::SUITE,
            tags::ARMORED_BODY,
            tags::TIMESTAMP,
        ])?;
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            recipient: PrincipalId::new(f.require_str(tags::RECIPIENT)?)?,
            subject: f.require_str(tags::SUBJECT)?.to_owned(),
            suite: AlgorithmSuite::from_bytes(f.require(tags::SUITE)?)?,
            m5: f.require(tags::ARMORED_BODY)?.to_vec(),
            sent_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

/// File-backed map of message id to the M5 bytes we uploaded.
#[derive(Debug)]
pub struct SenderStore {
    file: RecordFile,
    sent: BTreeMap<MessageId, SentMessage>,
}

impl SenderStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SenderError> {
        let (file, records) = RecordFile::open(path, true)?;
        let mut sent = BTreeMap::new();
        for raw in records {
            let record = SentMessage::from_bytes(&raw)?;
            sent.insert(record.message_id.clone(), record);
        }
        Ok(Self { file, sent })
    }

    pub fn record(&mut self, sent: SentMessage) -> Result<(), SenderError> {
        self.file.append(&sent.to_bytes())?;
        self.sent.insert(sent.message_id.clone(), sent);
        Ok(())
    }

    pub fn get(&self, id: &MessageId) -> Option<&SentMessage> {
        self.sent.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SentMessage> {
        self.sent.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decode_m5, Receipt};
    use crate::receiver;
    use crate::testkit::{principal, test_keys, test_rng};

    fn message(body: &[u8]) -> PlaintextMessage {
        PlaintextMessage {
            from: principal("alice@x"),
            to: principal("bob@x"),
            subject: "quarterly numbers".into(),
            date: 1_700_000_000,
            body: body.to_vec(),
        }
    }

    fn receipt_for(id: &MessageId, over: &[u8]) -> Receipt {
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        receiver::issue_receipt(
            over,
            &bob,
            &alice.encryption.public,
            id,
            AlgorithmSuite::CLASSIC,
            5,
            &mut test_rng(3),
        )
        .unwrap()
    }

    #[test]
    fn envelope_is_well_formed() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let env = compose_and_seal(
            &message(b"hi"),
            &alice,
            &bob.encryption.public,
            AlgorithmSuite::CLASSIC,
            &mut test_rng(1),
        )
        .unwrap();
        env.validate().unwrap();
        assert_eq!(env.wrapped_key.len(), 256);
        assert!(decode_m5(&env.armored_body).is_ok());
    }

    #[test]
    fn session_key_appears_only_wrapped() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let ks = SessionKey::from_bytes(crypto::SymAlg::TripleDesCbc, b"0123456789abcdefghijklmn").unwrap();
        let (env, trace) = seal_traced(
            &message(b"secret body"),
            &alice,
            &bob.encryption.public,
            AlgorithmSuite::CLASSIC,
            SealOptions::default(),
            &ks,
            &[0u8; 8],
            &mut test_rng(2),
        )
        .unwrap();
        let needle = b"0123456789abcdefghijklmn";
        let contains = |hay: &[u8]| hay.windows(needle.len()).any(|w| w == needle);
        assert!(!contains(&env.to_bytes()));
        assert!(!contains(&trace.m4));
        assert!(!contains(&trace.m5));
    }

    #[test]
    fn role_and_size_errors() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let err = compose_and_seal(
            &message(b""),
            &alice,
            &bob.signing.public,
            AlgorithmSuite::CLASSIC,
            &mut test_rng(1),
        )
        .unwrap_err();
        assert!(matches!(err, SenderError::WrongKeyRole { .. }));

        let tiny = SealOptions { max_message_len: 10 };
        let err = compose_and_seal_with(
            &message(&[0u8; 64]),
            &alice,
            &bob.encryption.public,
            AlgorithmSuite::CLASSIC,
            tiny,
            &mut test_rng(1),
        )
        .unwrap_err();
        assert!(matches!(err, SenderError::MessageTooLarge { .. }));

        let err = compose_and_seal(
            &message(b""),
            &bob,
            &bob.encryption.public,
            AlgorithmSuite::CLASSIC,
            &mut test_rng(1),
        )
        .unwrap_err();
        assert!(matches!(err, SenderError::SenderMismatch(_)));
    }

    #[test]
    fn honest_receipt_yields_nrr() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let env = compose_and_seal(
            &message(b"x"),
            &alice,
            &bob.encryption.public,
            AlgorithmSuite::CLASSIC,
            &mut test_rng(1),
        )
        .unwrap();
        let id = MessageId::from_parts(1, 1);
        let receipt = receipt_for(&id, &env.armored_body);
        let record = verify_receipt(
            &receipt.sealed_for_sender,
            &alice,
            &bob.signing.public,
            &id,
            &env.armored_body,
            9,
        )
        .unwrap();
        assert_eq!(record.kind, EvidenceKind::Nrr);
        assert_eq!(record.receiver, principal("bob@x"));
        record.reverify().unwrap();
    }

    #[test]
    fn receipt_over_other_m5_is_digest_mismatch() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let env = compose_and_seal(
            &message(b"x"),
            &alice,
            &bob.encryption.public,
            AlgorithmSuite::CLASSIC,
            &mut test_rng(1),
        )
        .unwrap();
        let id = MessageId::from_parts(1, 1);
        let receipt = receipt_for(&id, b"some other message");
        let err = verify_receipt(
            &receipt.sealed_for_sender,
            &alice,
            &bob.signing.public,
            &id,
            &env.armored_body,
            9,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SenderError::EvidenceInvalid(ReceiptCheck::DigestMismatch)
        ));
    }

    #[test]
    fn receipt_sealed_to_wrong_key_fails_decrypt() {
        let alice = test_keys("alice@x", AlgorithmSuite::CLASSIC);
        let bob = test_keys("bob@x", AlgorithmSuite::CLASSIC);
        let carol = test_keys("carol@x", AlgorithmSuite::CLASSIC);
        let id = MessageId::from_parts(1, 1);
        let m5 = b"m5 bytes".to_vec();
        let receipt = receiver::issue_receipt(
            &m5,
            &bob,
            &carol.encryption.public,
            &id,
            AlgorithmSuite::CLASSIC,
            5,
            &mut test_rng(4),
        )
        .unwrap();
        let err = verify_receipt(&receipt.sealed_for_sender, &alice, &bob.signing.public, &id, &m5, 9).unwrap_err();
        assert!(matches!(err, SenderError::EvidenceInvalid(ReceiptCheck::Decrypt)));
    }

    #[test]
    fn store_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sent.rec");
        let sent = SentMessage {
            message_id: MessageId::from_parts(3, 4),
            recipient: principal("bob@x"),
            subject: "s".into(),
            suite: AlgorithmSuite::MODERN,
            m5: b"armored".to_vec(),
            sent_at: 11,
        };
        SenderStore::open(&path).unwrap().record(sent.clone()).unwrap();
        let store = SenderStore::open(&path).unwrap();
        assert_eq!(store.get(&sent.message_id), Some(&sent));
    }
}
