//! Protocol artifacts: the plaintext mail, the uploaded envelope, the
//! receiver's receipt and the evidence records built from them.

use std::fmt;

use thiserror::Error;

use crate::codec::{self, decode_list, encode_list, tags, ArmoredText, CodecError, FrameError, FramedConcat};
use crate::crypto::{self, AlgorithmSuite, CryptoError, Digest, HashAlg, KeyRole, PublicKey, Signature};

/// Armor label of the transmitted message (M5).
pub const MESSAGE_LABEL: &str = "EPGP MESSAGE";
/// Armor label of exported evidence bundles.
pub const EVIDENCE_LABEL: &str = "EPGP EVIDENCE";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid principal id {0:?}")]
    InvalidPrincipal(String),
    #[error("invalid message id {0:?}")]
    InvalidMessageId(String),
    #[error("malformed record: {0}")]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("{0}")]
    Invalid(String),
}

/// E-mail address used as login id and key owner. Stored lower-cased so
/// lookups are case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrincipalId(String);

impl PrincipalId {
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        let valid = !raw.is_empty() && raw.len() <= 254 && raw.chars().all(|c| c.is_ascii_graphic());
        if !valid {
            return Err(ModelError::InvalidPrincipal(raw.to_owned()));
        }
        Ok(Self(raw.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for PrincipalId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Self::new(s)
    }
}

/// Server-assigned message identifier (`<counter>-<random suffix>`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId(String);

impl MessageId {
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        let valid = !raw.is_empty() && raw.len() <= 64 && raw.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'-');
        if !valid {
            return Err(ModelError::InvalidMessageId(raw.to_owned()));
        }
        Ok(Self(raw.to_owned()))
    }

    pub fn from_parts(counter: u64, suffix: u32) -> Self {
        Self(format!("{counter:08}-{suffix:08x}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for MessageId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Self::new(s)
    }
}

/// The original mail M.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaintextMessage {
    pub from: PrincipalId,
    pub to: PrincipalId,
    pub subject: String,
    /// UTC seconds.
    pub date: u64,
    pub body: Vec<u8>,
}

impl PlaintextMessage {
    /// Framed concatenation of the five fields, in fixed order. This is
    /// the byte form that gets hashed and signed.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::FROM, self.from.as_str())
            .push_str(tags::TO, self.to.as_str())
            .push_str(tags::SUBJECT, &self.subject)
            .push_u64(tags::DATE, self.date)
            .push(tags::BODY, self.body.clone())
            .encode()
            .expect("message fields fit in a frame")
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[tags::FROM, tags::TO, tags::SUBJECT, tags::DATE, tags::BODY])?;
        Ok(Self {
            from: PrincipalId::new(f.require_str(tags::FROM)?)?,
            to: PrincipalId::new(f.require_str(tags::TO)?)?,
            subject: f.require_str(tags::SUBJECT)?.to_owned(),
            date: f.require_u64(tags::DATE)?,
            body: f.require(tags::BODY)?.to_vec(),
        })
    }
}

pub fn canonical_bytes(msg: &PlaintextMessage) -> Vec<u8> {
    msg.canonical_bytes()
}

/// What the sender uploads and server D stores: the armored message M5
/// and, in a separate field, the session key wrapped to the recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionEnvelope {
    /// Assigned by the server on upload.
    pub message_id: Option<MessageId>,
    pub sender: PrincipalId,
    pub recipient: PrincipalId,
    /// Cleartext subject line for inbox previews, like the Subject header
    /// of an encrypted mail. The authoritative copy is inside M5.
    pub subject: String,
    /// M5, the armored text exactly as transmitted.
    pub armored_body: Vec<u8>,
    /// E_{recipient}(K_S).
    pub wrapped_key: Vec<u8>,
    pub suite: AlgorithmSuite,
    pub upload_time: Option<u64>,
}

impl TransmissionEnvelope {
    /// Checks the structural invariants: M5 is armor around a frame with a
    /// single SYM-CT part, and the wrapped key is present.
    pub fn validate(&self) -> Result<(), ModelError> {
        decode_m5(&self.armored_body)?;
        if self.wrapped_key.is_empty() {
            return Err(ModelError::Invalid("empty wrapped key".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut f = FramedConcat::new();
        if let Some(id) = &self.message_id {
            f = f.push_str(tags::MESSAGE_ID, id.as_str());
        }
        f = f
            .push_str(tags::SENDER, self.sender.as_str())
            .push_str(tags::RECIPIENT, self.recipient.as_str())
            .push_str(tags::SUBJECT, &self.subject)
            .push(tags::ARMORED_BODY, self.armored_body.clone())
            .push(tags::WRAPPED_KEY, self.wrapped_key.clone())
            .push(tags::SUITE, self.suite.to_bytes().to_vec());
        if let Some(t) = self.upload_time {
            f = f.push_u64(tags::TIMESTAMP, t);
        }
        f.encode().expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        for (tag, _) in f.parts() {
            if ![
                tags::MESSAGE_ID,
                tags::SENDER,
                tags::RECIPIENT,
                tags::SUBJECT,
                tags::ARMORED_BODY,
                tags::WRAPPED_KEY,
                tags::SUITE,
                tags::TIMESTAMP,
            ]
            .contains(tag)
            {
                return Err(FrameError::Unexpected(*tag).into());
            }
        }
        let message_id = match f.get(tags::MESSAGE_ID) {
            Some(_) => Some(MessageId::new(f.require_str(tags::MESSAGE_ID)?)?),
            None => None,
        };
        let upload_time = match f.get(tags::TIMESTAMP) {
            Some(_) => Some(f.require_u64(tags::TIMESTAMP)?),
            None => None,
        };
        Ok(Self {
            message_id,
            sender: PrincipalId::new(f.require_str(tags::SENDER)?)?,
            recipient: PrincipalId::new(f.require_str(tags::RECIPIENT)?)?,
            subject: f.require_str(tags::SUBJECT)?.to_owned(),
            armored_body: f.require(tags::ARMORED_BODY)?.to_vec(),
            wrapped_key: f.require(tags::WRAPPED_KEY)?.to_vec(),
            suite: AlgorithmSuite::from_bytes(f.require(tags::SUITE)?)?,
            upload_time,
        })
    }
}

/// Strips the armor from M5 and returns the symmetric ciphertext M4.
pub fn decode_m5(m5: &[u8]) -> Result<Vec<u8>, ModelError> {
    let armored = ArmoredText::parse_labeled(m5, MESSAGE_LABEL)?;
    let framed = codec::radix64_decode(&armored)?;
    let f = FramedConcat::parse(&framed)?;
    f.expect_tags(&[tags::SYM_CT])?;
    Ok(f.require(tags::SYM_CT)?.to_vec())
}

/// Wraps M4 into the armored M5 text.
pub fn encode_m5(m4: &[u8]) -> Vec<u8> {
    let framed = FramedConcat::new()
        .push(tags::SYM_CT, m4.to_vec())
        .encode()
        .expect("ciphertext fits in a frame");
    ArmoredText::encode(MESSAGE_LABEL, &framed).to_bytes()
}

/// Plaintext sealed inside M6: the receipt signature together with the
/// digest it covers and the message it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiptSeal {
    pub message_id: MessageId,
    pub digest: Digest,
    pub receipt_sig: Signature,
}

impl ReceiptSeal {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push(tags::DIGEST, self.digest.to_bytes())
            .push(tags::RECEIPT_SIG, self.receipt_sig.to_bytes())
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[tags::MESSAGE_ID, tags::DIGEST, tags::RECEIPT_SIG])?;
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            digest: Digest::from_bytes(f.require(tags::DIGEST)?)?,
            receipt_sig: Signature::from_bytes(f.require(tags::RECEIPT_SIG)?)?,
        })
    }
}

/// The receiver's signature over the still-sealed M5, in a form the
/// server can check (`receipt_sig`) and a form only the sender can open
/// (`sealed_for_sender`, i.e. M6).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub message_id: MessageId,
    pub receiver: PrincipalId,
    pub receipt_sig: Signature,
    pub sealed_for_sender: Vec<u8>,
    pub issued_at: u64,
}

impl Receipt {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push_str(tags::RECIPIENT, self.receiver.as_str())
            .push(tags::RECEIPT_SIG, self.receipt_sig.to_bytes())
            .push(tags::SEALED_RCPT, self.sealed_for_sender.clone())
            .push_u64(tags::TIMESTAMP, self.issued_at)
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[
            tags::MESSAGE_ID,
            tags::RECIPIENT,
            tags::RECEIPT_SIG,
            tags::SEALED_RCPT,
            tags::TIMESTAMP,
        ])?;
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            receiver: PrincipalId::new(f.require_str(tags::RECIPIENT)?)?,
            receipt_sig: Signature::from_bytes(f.require(tags::RECEIPT_SIG)?)?,
            sealed_for_sender: f.require(tags::SEALED_RCPT)?.to_vec(),
            issued_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvidenceKind {
    /// Non-repudiation of origin: the sender's signature over the message.
    Nro,
    /// Non-repudiation of receipt: the receiver's signature over M5.
    Nrr,
}

impl EvidenceKind {
    fn code(self) -> u8 {
        match self {
            EvidenceKind::Nro => 1,
            EvidenceKind::Nrr => 2,
        }
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceKind::Nro => "NRO",
            EvidenceKind::Nrr => "NRR",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("digest does not match the recorded input")]
    DigestMismatch,
    #[error("signer does not match the accountable principal")]
    WrongSigner,
    #[error("signature does not verify")]
    BadSignature,
}

/// A self-contained proof bundle. Everything needed to re-check it is in
/// the record: the exact bytes that were signed, their digest, the
/// signature and the signer's public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceRecord {
    pub kind: EvidenceKind,
    pub message_id: MessageId,
    pub sender: PrincipalId,
    pub receiver: PrincipalId,
    pub digest: Digest,
    pub signature: Signature,
    pub signer_key: PublicKey,
    /// M5 bytes for NRR, canonical message bytes for NRO.
    pub verdict_input: Vec<u8>,
    pub recorded_at: u64,
}

impl EvidenceRecord {
    /// The principal whose signature this record holds.
    pub fn accountable(&self) -> &PrincipalId {
        match self.kind {
            EvidenceKind::Nro => &self.sender,
            EvidenceKind::Nrr => &self.receiver,
        }
    }

    /// Re-verifies the record from its own contents.
    pub fn reverify(&self) -> Result<(), EvidenceError> {
        if crypto::hash_with(self.digest.alg(), &self.verdict_input) != self.digest {
            return Err(EvidenceError::DigestMismatch);
        }
        if self.signer_key.owner() != self.accountable()
            || self.signature.signer() != self.accountable()
            || self.signer_key.role() != KeyRole::Signing
        {
            return Err(EvidenceError::WrongSigner);
        }
        if !crypto::verify(&self.signer_key, &self.digest, &self.signature) {
            return Err(EvidenceError::BadSignature);
        }
        Ok(())
    }

    pub fn digest_alg(&self) -> HashAlg {
        self.digest.alg()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let principals = encode_list(&[
            self.sender.as_str().as_bytes().to_vec(),
            self.receiver.as_str().as_bytes().to_vec(),
        ]);
        FramedConcat::new()
            .push(tags::KIND, vec![self.kind.code()])
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push(tags::PRINCIPALS, principals)
            .push(tags::DIGEST, self.digest.to_bytes())
            .push(tags::SIG, self.signature.to_bytes())
            .push(tags::SIGNER_KEY, self.signer_key.to_bytes())
            .push(tags::VERDICT_INPUT, self.verdict_input.clone())
            .push_u64(tags::TIMESTAMP, self.recorded_at)
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[
            tags::KIND,
            tags::MESSAGE_ID,
            tags::PRINCIPALS,
            tags::DIGEST,
            tags::SIG,
            tags::SIGNER_KEY,
            tags::VERDICT_INPUT,
            tags::TIMESTAMP,
        ])?;
        let kind = match f.require(tags::KIND)? {
            [1] => EvidenceKind::Nro,
            [2] => EvidenceKind::Nrr,
            _ => return Err(ModelError::Invalid("unknown evidence kind".into())),
        };
        let principals = decode_list(f.require(tags::PRINCIPALS)?)?;
        let [sender, receiver] = principals.as_slice() else {
            return Err(ModelError::Invalid("evidence needs exactly two principals".into()));
        };
        let as_principal = |raw: &[u8]| {
            std::str::from_utf8(raw)
                .map_err(|_| ModelError::Invalid("principal is not UTF-8".into()))
                .and_then(PrincipalId::new)
        };
        Ok(Self {
            kind,
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            sender: as_principal(sender)?,
            receiver: as_principal(receiver)?,
            digest: Digest::from_bytes(f.require(tags::DIGEST)?)?,
            signature: Signature::from_bytes(f.require(tags::SIG)?)?,
            signer_key: PublicKey::from_bytes(f.require(tags::SIGNER_KEY)?)?,
            verdict_input: f.require(tags::VERDICT_INPUT)?.to_vec(),
            recorded_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

/// Armored bundle of evidence records for handing to a third party.
pub fn export_evidence(records: &[EvidenceRecord]) -> String {
    let items: Vec<Vec<u8>> = records.iter().map(EvidenceRecord::to_bytes).collect();
    ArmoredText::encode(EVIDENCE_LABEL, &encode_list(&items)).to_string()
}

pub fn import_evidence(text: &[u8]) -> Result<Vec<EvidenceRecord>, ModelError> {
    let armored = ArmoredText::parse_labeled(text, EVIDENCE_LABEL)?;
    decode_list(&armored.decode()?)?
        .iter()
        .map(|item| EvidenceRecord::from_bytes(item))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg() -> PlaintextMessage {
        PlaintextMessage {
            from: PrincipalId::new("a@x").unwrap(),
            to: PrincipalId::new("b@x").unwrap(),
            subject: "hello".into(),
            date: 1_700_000_000,
            body: b"body".to_vec(),
        }
    }

    #[test]
    fn canonical_bytes_stable_and_injective() {
        let m = msg();
        assert_eq!(m.canonical_bytes(), m.canonical_bytes());
        let mut other = m.clone();
        other.subject = "hello!".into();
        assert_ne!(m.canonical_bytes(), other.canonical_bytes());
        assert_eq!(PlaintextMessage::from_canonical_bytes(&m.canonical_bytes()).unwrap(), m);
    }

    #[test]
    fn empty_body_allowed() {
        let mut m = msg();
        m.body.clear();
        assert_eq!(PlaintextMessage::from_canonical_bytes(&m.canonical_bytes()).unwrap(), m);
    }

    #[test]
    fn principal_rules() {
        assert!(PrincipalId::new("").is_err());
        assert!(PrincipalId::new("a b@x").is_err());
        assert_eq!(
            PrincipalId::new("Alice@X").unwrap(),
            PrincipalId::new("alice@x").unwrap()
        );
    }

    #[test]
    fn message_id_format() {
        let id = MessageId::from_parts(7, 0xdead_beef);
        assert_eq!(id.as_str(), "00000007-deadbeef");
        assert_eq!(MessageId::new(id.as_str()).unwrap(), id);
        assert!(MessageId::new("../etc").is_err());
    }

    #[test]
    fn m5_wraps_exactly_one_ciphertext() {
        let m5 = encode_m5(&[1, 2, 3, 4]);
        assert!(m5.starts_with(b"-----BEGIN EPGP MESSAGE-----\n"));
        assert_eq!(decode_m5(&m5).unwrap(), vec![1, 2, 3, 4]);
        let two_parts = FramedConcat::new()
            .push(tags::SYM_CT, vec![1])
            .push(tags::WRAPPED_KEY, vec![2])
            .encode()
            .unwrap();
        let armored = ArmoredText::encode(MESSAGE_LABEL, &two_parts).to_bytes();
        assert!(decode_m5(&armored).is_err());
    }
}
