//! Receiver side: signing a receipt over the unopened M5, and opening the
//! message once the server has released the wrapped session key.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{self, tags, FramedConcat};
use crate::crypto::{self, AlgorithmSuite, CryptoError, KeyMaterial, KeyRole, PublicKey, Signature};
use crate::model::{
    decode_m5, EvidenceError, EvidenceKind, EvidenceRecord, MessageId, ModelError, PlaintextMessage, Receipt,
    ReceiptSeal,
};
use crate::storage::RecordFile;

/// Pipeline stage at which [`open_message`] gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpenStage {
    Dearmor,
    KeyUnwrap,
    Decrypt,
    Decompress,
    Parse,
    OriginCheck,
}

impl OpenStage {
    pub fn error_name(self) -> &'static str {
        match self {
            OpenStage::Dearmor => "MalformedArmor",
            OpenStage::KeyUnwrap => "KeyUnwrapFailed",
            OpenStage::Decrypt => "DecryptFailed",
            OpenStage::Decompress => "DecompressFailed",
            OpenStage::Parse => "MessageParseFailed",
            OpenStage::OriginCheck => "OriginCheckFailed",
        }
    }
}

impl fmt::Display for OpenStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.error_name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{stage}: {detail}")]
pub struct OpenError {
    pub stage: OpenStage,
    pub detail: String,
}

impl OpenError {
    fn at(stage: OpenStage, detail: impl fmt::Display) -> Self {
        Self {
            stage,
            detail: detail.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReceiverError {
    #[error("wrong key role: expected {expected}, got {found}")]
    WrongKeyRole { expected: KeyRole, found: KeyRole },
    #[error("cannot issue a receipt over an empty message")]
    EmptyMessage,
    #[error("origin evidence invalid: {0}")]
    EvidenceInvalid(EvidenceError),
    #[error(transparent)]
    Open(#[from] OpenError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("receiver store: {0}")]
    Store(#[from] io::Error),
}

/// Signs the still-sealed M5. Takes no session-key material: the receipt
/// is issued before the receiver can read anything.
pub fn issue_receipt(
    m5_bytes: &[u8],
    receiver_keys: &KeyMaterial,
    sender_pub: &PublicKey,
    message_id: &MessageId,
    suite: AlgorithmSuite,
    now: u64,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<Receipt, ReceiverError> {
    let signing = &receiver_keys.signing.private;
    if signing.role() != KeyRole::Signing {
        return Err(ReceiverError::WrongKeyRole {
            expected: KeyRole::Signing,
            found: signing.role(),
        });
    }
    if m5_bytes.is_empty() {
        return Err(ReceiverError::EmptyMessage);
    }
    let digest = crypto::hash(m5_bytes, suite);
    let receipt_sig = crypto::sign(signing, &digest)?;
    let seal = ReceiptSeal {
        message_id: message_id.clone(),
        digest,
        receipt_sig: receipt_sig.clone(),
    };
    let sealed_for_sender = crypto::seal(sender_pub, &seal.to_bytes(), suite, rng)?;
    Ok(Receipt {
        message_id: message_id.clone(),
        receiver: receiver_keys.owner.clone(),
        receipt_sig,
        sealed_for_sender,
        issued_at: now,
    })
}

/// An opened message together with the sender's signature, which is what
/// NRO evidence is built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedMessage {
    pub message: PlaintextMessage,
    pub signature: Signature,
}

pub fn open_message(
    m5_bytes: &[u8],
    wrapped_key: &[u8],
    receiver_keys: &KeyMaterial,
    sender_pub: &PublicKey,
    suite: AlgorithmSuite,
) -> Result<PlaintextMessage, OpenError> {
    open_message_detailed(m5_bytes, wrapped_key, receiver_keys, sender_pub, suite).map(|o| o.message)
}

/// Inverse pipeline: dearmor, unwrap K_S, decrypt, inflate, unframe, then
/// check the sender's signature over H(M*). The signed digest is the only
/// trustworthy copy of H(M) the receiver has, so that check covers both
/// integrity and origin.
pub fn open_message_detailed(
    m5_bytes: &[u8],
    wrapped_key: &[u8],
    receiver_keys: &KeyMaterial,
    sender_pub: &PublicKey,
    suite: AlgorithmSuite,
) -> Result<OpenedMessage, OpenError> {
    use OpenStage::*;

    let m4 = decode_m5(m5_bytes).map_err(|e| OpenError::at(Dearmor, e))?;
    let session_key = crypto::unwrap_key(&receiver_keys.encryption.private, wrapped_key, suite.sym)
        .map_err(|e| OpenError::at(KeyUnwrap, e))?;
    let m3 = crypto::sym_decrypt(&session_key, &m4).map_err(|e| OpenError::at(Decrypt, e))?;
    drop(session_key);
    let m2 = codec::decompress(&m3).map_err(|e| OpenError::at(Decompress, e))?;

    let f = FramedConcat::parse(&m2).map_err(|e| OpenError::at(Parse, e))?;
    f.expect_tags(&[tags::SIG, tags::MSG_HDR])
        .map_err(|e| OpenError::at(Parse, e))?;
    let signature = Signature::from_bytes(f.get(tags::SIG).unwrap_or_default()).map_err(|e| OpenError::at(Parse, e))?;
    let canonical = f.get(tags::MSG_HDR).unwrap_or_default();
    let message = PlaintextMessage::from_canonical_bytes(canonical).map_err(|e| OpenError::at(Parse, e))?;

    let digest = crypto::hash(canonical, suite);
    if !crypto::verify(sender_pub, &digest, &signature) {
        return Err(OpenError::at(OriginCheck, "sender signature does not verify"));
    }
    if &message.from != sender_pub.owner() {
        return Err(OpenError::at(
            OriginCheck,
            format!("message claims to be from {}", message.from),
        ));
    }
    if message.to != receiver_keys.owner {
        return Err(OpenError::at(
            OriginCheck,
            format!("message is addressed to {}", message.to),
        ));
    }
    Ok(OpenedMessage { message, signature })
}

/// NRO evidence: the sender's signature over the canonical message.
pub fn verify_origin(
    msg: &PlaintextMessage,
    sig: &Signature,
    sender_pub: &PublicKey,
    message_id: &MessageId,
    suite: AlgorithmSuite,
    now: u64,
) -> Result<EvidenceRecord, ReceiverError> {
    let canonical = msg.canonical_bytes();
    let record = EvidenceRecord {
        kind: EvidenceKind::Nro,
        message_id: message_id.clone(),
        sender: msg.from.clone(),
        receiver: msg.to.clone(),
        digest: crypto::hash(&canonical, suite),
        signature: sig.clone(),
        signer_key: sender_pub.clone(),
        verdict_input: canonical,
        recorded_at: now,
    };
    record.reverify().map_err(ReceiverError::EvidenceInvalid)?;
    Ok(record)
}

/// What the receiver keeps per message so that reading twice neither
/// re-issues a receipt nor needs the server again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedMessage {
    pub message_id: MessageId,
    pub suite: AlgorithmSuite,
    pub receipt: Receipt,
    /// Present once the message has been opened.
    pub opened: Option<OpenedMessage>,
}

impl ReceivedMessage {
    fn to_bytes(&self) -> Vec<u8> {
        let mut f = FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push(tags::SUITE, self.suite.to_bytes().to_vec())
            .push(tags::RECEIPT_SIG, self.receipt.to_bytes());
        if let Some(opened) = &self.opened {
            f = f
                .push(tags::MSG_HDR, opened.message.canonical_bytes())
                .push(tags::SIG, opened.signature.to_bytes());
        }
        f.encode().expect("uniquely tagged")
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        let opened = match (f.get(tags::MSG_HDR), f.get(tags::SIG)) {
            (Some(msg), Some(sig)) => Some(OpenedMessage {
                message: PlaintextMessage::from_canonical_bytes(msg)?,
                signature: Signature::from_bytes(sig)?,
            }),
            (None, None) => None,
            _ => return Err(ModelError::Invalid("half-written received message".into())),
        };
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            suite: AlgorithmSuite::from_bytes(f.require(tags::SUITE)?)?,
            receipt: Receipt::from_bytes(f.require(tags::RECEIPT_SIG)?)?,
            opened,
        })
    }
}

/// File-backed receiver cache; later records for the same id win.
#[derive(Debug)]
pub struct ReceiverStore {
    file: RecordFile,
    received: BTreeMap<MessageId, ReceivedMessage>,
}

impl ReceiverStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ReceiverError> {
        let (file, records) = RecordFile::open(path, true)?;
        let mut received = BTreeMap::new();
        for raw in records {
            let record = ReceivedMessage::from_bytes(&raw)?;
            received.insert(record.message_id.clone(), record);
        }
        Ok(Self { file, received })
    }

    pub fn record(&mut self, entry: ReceivedMessage) -> Result<(), ReceiverError> {
        self.file.append(&entry.to_bytes())?;
        self.received.insert(entry.message_id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, id: &MessageId) -> Option<&ReceivedMessage> {
        self.received.get(id)
    }
}
