//! Delivery server D: mailboxes, session-key escrow, receipt validation,
//! key release and evidence forwarding.
//!
//! The server holds only the wrapped session key E_{K_UB}(K_S). It hands
//! that blob to the addressee in exchange for a receipt signature that
//! verifies over the stored M5, and in the same step commits an NRR record
//! to its evidence log and queues M6 for the sender.

mod store;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{decode_list, encode_list, tags, FramedConcat};
use crate::crypto::{self, AlgorithmSuite, KeyRole, PublicKey};
use crate::directory::{Directory, DirectoryError, PasswordCost, UserRecord, DEFAULT_TOKEN_TTL};
use crate::model::{EvidenceKind, EvidenceRecord, MessageId, ModelError, PrincipalId, Receipt, TransmissionEnvelope};

use store::Store;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServerError {
    #[error("authentication required")]
    AuthRequired,
    #[error("bad credentials")]
    BadCredentials,
    #[error("email already registered")]
    EmailTaken,
    #[error("weak password")]
    WeakPassword,
    #[error("unknown principal {0}")]
    UnknownPrincipal(String),
    #[error("no such message {0}")]
    NotFound(String),
    #[error("message is not addressed to you")]
    NotAddressee,
    #[error("not a party to this message")]
    NotAParty,
    #[error("envelope sender is not the logged-in user")]
    NotSender,
    #[error("receipt invalid: {0}")]
    ReceiptInvalid(String),
    #[error("key already released against a different receipt")]
    AlreadyReleased,
    #[error("idempotency token already used for a different upload")]
    DuplicateUpload,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("server unreachable or protocol error: {0}")]
    Unavailable(String),
}

impl ServerError {
    /// Stable error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::AuthRequired => "AuthRequired",
            ServerError::BadCredentials => "BadCredentials",
            ServerError::EmailTaken => "EmailTaken",
            ServerError::WeakPassword => "WeakPassword",
            ServerError::UnknownPrincipal(_) => "UnknownPrincipal",
            ServerError::NotFound(_) => "NotFound",
            ServerError::NotAddressee => "NotAddressee",
            ServerError::NotAParty => "NotAParty",
            ServerError::NotSender => "NotSender",
            ServerError::ReceiptInvalid(_) => "ReceiptInvalid",
            ServerError::AlreadyReleased => "AlreadyReleased",
            ServerError::DuplicateUpload => "DuplicateUpload",
            ServerError::BadRequest(_) => "BadRequest",
            ServerError::Storage(_) => "Storage",
            ServerError::Unavailable(_) => "Unavailable",
        }
    }

    /// Free-form detail, when the variant has one.
    pub fn detail(&self) -> &str {
        match self {
            ServerError::UnknownPrincipal(d)
            | ServerError::NotFound(d)
            | ServerError::ReceiptInvalid(d)
            | ServerError::BadRequest(d)
            | ServerError::Storage(d)
            | ServerError::Unavailable(d) => d,
            _ => "",
        }
    }

    /// Inverse of [`code`](Self::code) plus [`detail`](Self::detail).
    pub fn from_code(code: &str, detail: &str) -> Option<Self> {
        let d = detail.to_owned();
        Some(match code {
            "AuthRequired" => ServerError::AuthRequired,
            "BadCredentials" => ServerError::BadCredentials,
            "EmailTaken" => ServerError::EmailTaken,
            "WeakPassword" => ServerError::WeakPassword,
            "UnknownPrincipal" => ServerError::UnknownPrincipal(d),
            "NotFound" => ServerError::NotFound(d),
            "NotAddressee" => ServerError::NotAddressee,
            "NotAParty" => ServerError::NotAParty,
            "NotSender" => ServerError::NotSender,
            "ReceiptInvalid" => ServerError::ReceiptInvalid(d),
            "AlreadyReleased" => ServerError::AlreadyReleased,
            "DuplicateUpload" => ServerError::DuplicateUpload,
            "BadRequest" => ServerError::BadRequest(d),
            "Storage" => ServerError::Storage(d),
            "Unavailable" => ServerError::Unavailable(d),
            _ => return None,
        })
    }
}

impl From<DirectoryError> for ServerError {
    fn from(e: DirectoryError) -> Self {
        match e {
            DirectoryError::EmailTaken => ServerError::EmailTaken,
            DirectoryError::WeakPassword => ServerError::WeakPassword,
            DirectoryError::BadCredentials => ServerError::BadCredentials,
            DirectoryError::AuthRequired => ServerError::AuthRequired,
            DirectoryError::UnknownPrincipal(p) => ServerError::UnknownPrincipal(p),
            DirectoryError::Hashing(d) => ServerError::Storage(d),
            other => ServerError::BadRequest(other.to_string()),
        }
    }
}

impl From<ModelError> for ServerError {
    fn from(e: ModelError) -> Self {
        ServerError::BadRequest(e.to_string())
    }
}

impl From<std::io::Error> for ServerError {
    fn from(e: std::io::Error) -> Self {
        ServerError::Storage(e.to_string())
    }
}

/// Time source in UTC seconds. Simulations use [`ManualClock`].
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

/// Random source the server can own behind a trait object.
pub trait SecureRng: RngCore + CryptoRng + Send {}
impl<T: RngCore + CryptoRng + Send> SecureRng for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscrowState {
    Held,
    Released,
}

impl std::fmt::Display for EscrowState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EscrowState::Held => "HELD",
            EscrowState::Released => "RELEASED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscrowEntry {
    pub message_id: MessageId,
    pub wrapped_key: Vec<u8>,
    pub state: EscrowState,
    pub released_at: Option<u64>,
}

/// One committed key release: the NRR record and the M6 forwarded to the
/// sender. The evidence log is a sequence of these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub record: EvidenceRecord,
    pub m6: Vec<u8>,
    pub forwarded_at: u64,
}

impl LogEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push(tags::PAYLOAD, self.record.to_bytes())
            .push(tags::SEALED_RCPT, self.m6.clone())
            .push_u64(tags::TIMESTAMP, self.forwarded_at)
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        f.expect_tags(&[tags::PAYLOAD, tags::SEALED_RCPT, tags::TIMESTAMP])?;
        Ok(Self {
            record: EvidenceRecord::from_bytes(f.require(tags::PAYLOAD)?)?,
            m6: f.require(tags::SEALED_RCPT)?.to_vec(),
            forwarded_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboxEntry {
    pub message_id: MessageId,
    pub from: PrincipalId,
    pub subject: String,
    pub date: u64,
    pub opened: bool,
}

impl InboxEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push_str(tags::FROM, self.from.as_str())
            .push_str(tags::SUBJECT, &self.subject)
            .push_u64(tags::DATE, self.date)
            .push(tags::NOTE, vec![self.opened as u8])
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            from: PrincipalId::new(f.require_str(tags::FROM)?)?,
            subject: f.require_str(tags::SUBJECT)?.to_owned(),
            date: f.require_u64(tags::DATE)?,
            opened: f.require(tags::NOTE)? == [1],
        })
    }
}

/// What the addressee gets from a fetch: M5 and routing data, never the
/// wrapped key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedMessage {
    pub message_id: MessageId,
    pub sender: PrincipalId,
    pub recipient: PrincipalId,
    pub subject: String,
    pub suite: AlgorithmSuite,
    pub m5: Vec<u8>,
    pub uploaded_at: u64,
}

impl FetchedMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push_str(tags::SENDER, self.sender.as_str())
            .push_str(tags::RECIPIENT, self.recipient.as_str())
            .push_str(tags::SUBJECT, &self.subject)
            .push(tags::SUITE, self.suite.to_bytes().to_vec())
            .push(tags::ARMORED_BODY, self.m5.clone())
            .push_u64(tags::TIMESTAMP, self.uploaded_at)
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            sender: PrincipalId::new(f.require_str(tags::SENDER)?)?,
            recipient: PrincipalId::new(f.require_str(tags::RECIPIENT)?)?,
            subject: f.require_str(tags::SUBJECT)?.to_owned(),
            suite: AlgorithmSuite::from_bytes(f.require(tags::SUITE)?)?,
            m5: f.require(tags::ARMORED_BODY)?.to_vec(),
            uploaded_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

/// An M6 waiting in the sender's evidence inbox.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardedEvidence {
    pub message_id: MessageId,
    pub receiver: PrincipalId,
    pub m6: Vec<u8>,
    pub forwarded_at: u64,
}

impl ForwardedEvidence {
    pub fn to_bytes(&self) -> Vec<u8> {
        FramedConcat::new()
            .push_str(tags::MESSAGE_ID, self.message_id.as_str())
            .push_str(tags::RECIPIENT, self.receiver.as_str())
            .push(tags::SEALED_RCPT, self.m6.clone())
            .push_u64(tags::TIMESTAMP, self.forwarded_at)
            .encode()
            .expect("uniquely tagged")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let f = FramedConcat::parse(bytes)?;
        Ok(Self {
            message_id: MessageId::new(f.require_str(tags::MESSAGE_ID)?)?,
            receiver: PrincipalId::new(f.require_str(tags::RECIPIENT)?)?,
            m6: f.require(tags::SEALED_RCPT)?.to_vec(),
            forwarded_at: f.require_u64(tags::TIMESTAMP)?,
        })
    }
}

/// Encodes a list of items with their own `to_bytes`.
pub fn encode_items<T>(items: &[T], to_bytes: impl Fn(&T) -> Vec<u8>) -> Vec<u8> {
    encode_list(&items.iter().map(to_bytes).collect::<Vec<_>>())
}

pub fn decode_items<T>(
    bytes: &[u8],
    from_bytes: impl Fn(&[u8]) -> Result<T, ModelError>,
) -> Result<Vec<T>, ModelError> {
    decode_list(bytes)?.iter().map(|b| from_bytes(b)).collect()
}

/// The operations a client performs against server D, whether in-process
/// or over the wire.
pub trait Delivery {
    fn register(
        &self,
        email: &str,
        password: &str,
        signing: &PublicKey,
        encryption: &PublicKey,
    ) -> Result<(), ServerError>;
    fn login(&self, email: &str, password: &str) -> Result<String, ServerError>;
    fn upload(
        &self,
        token: &str,
        envelope: &TransmissionEnvelope,
        idempotency: Option<&str>,
    ) -> Result<MessageId, ServerError>;
    fn inbox(&self, token: &str) -> Result<Vec<InboxEntry>, ServerError>;
    fn fetch(&self, token: &str, id: &MessageId) -> Result<FetchedMessage, ServerError>;
    fn submit_receipt(&self, token: &str, id: &MessageId, receipt: &Receipt) -> Result<Vec<u8>, ServerError>;
    fn fetch_evidence(&self, token: &str) -> Result<Vec<ForwardedEvidence>, ServerError>;
    fn ack(&self, token: &str, id: &MessageId) -> Result<(), ServerError>;
    fn pubkey(&self, email: &str, role: KeyRole) -> Result<PublicKey, ServerError>;
    fn dispute(&self, token: &str, id: &MessageId) -> Result<Vec<EvidenceRecord>, ServerError>;
    fn delete(&self, token: &str, id: &MessageId) -> Result<(), ServerError>;
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// File store directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub password_cost: PasswordCost,
    pub token_ttl: u64,
    /// fsync after every append. Only tests turn this off.
    pub sync: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            password_cost: PasswordCost::default(),
            token_ttl: DEFAULT_TOKEN_TTL,
            sync: true,
        }
    }
}

impl ServerConfig {
    pub fn in_memory(password_cost: PasswordCost) -> Self {
        Self {
            password_cost,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct StoredMessage {
    envelope: TransmissionEnvelope,
    id: MessageId,
    uploaded_at: u64,
    seq: u64,
    deleted: bool,
}

struct State {
    directory: Directory,
    messages: BTreeMap<MessageId, StoredMessage>,
    escrow: BTreeMap<MessageId, EscrowEntry>,
    /// (uploader, token) -> id
    idempotency: HashMap<(PrincipalId, String), MessageId>,
    log: Vec<LogEntry>,
    released: HashMap<MessageId, usize>,
    acked: BTreeSet<MessageId>,
    next_seq: u64,
    store: Option<Store>,
    rng: Box<dyn SecureRng>,
}

pub struct Server {
    state: Mutex<State>,
    clock: Box<dyn Clock>,
}

impl std::fmt::Debug for Server {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server").finish_non_exhaustive()
    }
}

impl Server {
    /// Opens (or creates) the server. With a data directory, all state is
    /// replayed from the file store.
    pub fn open(
        config: ServerConfig,
        clock: impl Clock + 'static,
        rng: impl SecureRng + 'static,
    ) -> Result<Self, ServerError> {
        let mut state = State {
            directory: Directory::new(config.password_cost).with_token_ttl(config.token_ttl),
            messages: BTreeMap::new(),
            escrow: BTreeMap::new(),
            idempotency: HashMap::new(),
            log: Vec::new(),
            released: HashMap::new(),
            acked: BTreeSet::new(),
            next_seq: 1,
            store: None,
            rng: Box::new(rng),
        };
        if let Some(dir) = &config.data_dir {
            let (store, loaded) = Store::open(dir, config.sync)?;
            for user in loaded.users {
                state.directory.restore(user);
            }
            for event in loaded.messages {
                match event {
                    store::MessageEvent::Upload { envelope, idempotency } => {
                        state.insert_upload(envelope, idempotency)?
                    }
                    store::MessageEvent::Delete(id) => {
                        if let Some(m) = state.messages.get_mut(&id) {
                            m.deleted = true;
                        }
                    }
                }
            }
            for entry in loaded.log {
                state.apply_release(entry)?;
            }
            state.acked.extend(loaded.acks);
            state.store = Some(store);
        }
        Ok(Self {
            state: Mutex::new(state),
            clock: Box::new(clock),
        })
    }

    pub fn in_memory(password_cost: PasswordCost, clock: impl Clock + 'static, rng: impl SecureRng + 'static) -> Self {
        Self::open(ServerConfig::in_memory(password_cost), clock, rng).expect("no file store to fail")
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        // A panic while holding the lock cannot leave a half-applied release:
        // memory is only updated after the log append succeeds.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn register(
        &self,
        email: &str,
        password: &str,
        signing_pub: PublicKey,
        encryption_pub: PublicKey,
    ) -> Result<UserRecord, ServerError> {
        let now = self.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        if let Ok(id) = PrincipalId::new(email) {
            if state.directory.contains(&id) {
                return Err(ServerError::EmailTaken);
            }
        }
        let record =
            state
                .directory
                .register_user(email, password, signing_pub, encryption_pub, now, &mut *state.rng)?;
        if let Some(store) = &mut state.store {
            // Roll back so a failed append leaves no phantom user.
            if let Err(e) = store.append_user(&record) {
                state.directory.forget(&record.email);
                return Err(e.into());
            }
        }
        log::info!("registered {}", record.email);
        Ok(record)
    }

    pub fn login(&self, email: &str, password: &str) -> Result<String, ServerError> {
        let now = self.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        Ok(state.directory.authenticate(email, password, now, &mut *state.rng)?)
    }

    /// Administrative password reset.
    pub fn reset_password(&self, email: &str, new_password: &str) -> Result<(), ServerError> {
        let mut guard = self.lock();
        let state = &mut *guard;
        let record = state.directory.reset_password(email, new_password, &mut *state.rng)?;
        if let Some(store) = &mut state.store {
            store.append_user(&record)?;
        }
        Ok(())
    }

    pub fn lookup_public_key(&self, email: &str, role: KeyRole) -> Result<PublicKey, ServerError> {
        Ok(self.lock().directory.lookup_public_key(email, role)?)
    }

    pub fn accept_upload(
        &self,
        token: &str,
        envelope: TransmissionEnvelope,
        idempotency: Option<&str>,
    ) -> Result<MessageId, ServerError> {
        let now = self.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        let user = state.directory.check_token(token, now)?;
        if envelope.sender != user {
            return Err(ServerError::NotSender);
        }
        if !state.directory.contains(&envelope.recipient) {
            return Err(ServerError::UnknownPrincipal(envelope.recipient.to_string()));
        }
        envelope.validate()?;

        if let Some(tok) = idempotency {
            if let Some(id) = state.idempotency.get(&(user.clone(), tok.to_owned())) {
                let original = &state.messages[id].envelope;
                let same = original.armored_body == envelope.armored_body
                    && original.wrapped_key == envelope.wrapped_key
                    && original.recipient == envelope.recipient;
                return if same {
                    Ok(id.clone())
                } else {
                    Err(ServerError::DuplicateUpload)
                };
            }
        }

        let id = loop {
            let candidate = MessageId::from_parts(state.next_seq, state.rng.next_u32());
            if !state.messages.contains_key(&candidate) {
                break candidate;
            }
        };
        let mut envelope = envelope;
        envelope.message_id = Some(id.clone());
        envelope.upload_time = Some(now);
        // The escrow entry is durable before the upload is acknowledged.
        if let Some(store) = &mut state.store {
            store.append_upload(&envelope, idempotency)?;
        }
        state.insert_upload(envelope, idempotency.map(str::to_owned))?;
        log::info!("accepted {id}");
        Ok(id)
    }

    pub fn list_inbox(&self, token: &str) -> Result<Vec<InboxEntry>, ServerError> {
        let now = self.now();
        let state = self.lock();
        let user = state.directory.check_token(token, now)?;
        let mut mine: Vec<&StoredMessage> = state
            .messages
            .values()
            .filter(|m| m.envelope.recipient == user && !m.deleted)
            .collect();
        mine.sort_by_key(|m| std::cmp::Reverse((m.uploaded_at, m.seq)));
        Ok(mine
            .into_iter()
            .map(|m| InboxEntry {
                message_id: m.id.clone(),
                from: m.envelope.sender.clone(),
                subject: m.envelope.subject.clone(),
                date: m.uploaded_at,
                opened: state.released.contains_key(&m.id),
            })
            .collect())
    }

    pub fn fetch_message(&self, token: &str, id: &MessageId) -> Result<FetchedMessage, ServerError> {
        let now = self.now();
        let state = self.lock();
        let user = state.directory.check_token(token, now)?;
        let m = state.message(id)?;
        if m.envelope.recipient != user {
            return Err(ServerError::NotAddressee);
        }
        Ok(FetchedMessage {
            message_id: m.id.clone(),
            sender: m.envelope.sender.clone(),
            recipient: m.envelope.recipient.clone(),
            subject: m.envelope.subject.clone(),
            suite: m.envelope.suite,
            m5: m.envelope.armored_body.clone(),
            uploaded_at: m.uploaded_at,
        })
    }

    /// Trades a valid receipt for the wrapped session key.
    ///
    /// Release, the NRR log entry and the M6 forward are one appended
    /// record; in-memory state changes only after it is durable.
    pub fn submit_receipt(&self, token: &str, id: &MessageId, receipt: &Receipt) -> Result<Vec<u8>, ServerError> {
        let now = self.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        let user = state.directory.check_token(token, now)?;
        let m = state.message(id)?;
        if m.envelope.recipient != user {
            return Err(ServerError::NotAddressee);
        }
        if &receipt.message_id != id || receipt.receiver != user {
            return Err(ServerError::ReceiptInvalid(
                "receipt names another message or receiver".into(),
            ));
        }

        if let Some(&at) = state.released.get(id) {
            // Replaying the receipt that released the key is harmless.
            return if state.log[at].record.signature == receipt.receipt_sig {
                Ok(state.escrow[id].wrapped_key.clone())
            } else {
                Err(ServerError::AlreadyReleased)
            };
        }

        let signer_key = state.directory.lookup_public_key(user.as_str(), KeyRole::Signing)?;
        let digest = crypto::hash(&m.envelope.armored_body, m.envelope.suite);
        if !crypto::verify(&signer_key, &digest, &receipt.receipt_sig) {
            log::warn!("rejected receipt for {id}");
            return Err(ServerError::ReceiptInvalid(
                "signature does not verify over the stored message".into(),
            ));
        }
        let entry = LogEntry {
            record: EvidenceRecord {
                kind: EvidenceKind::Nrr,
                message_id: id.clone(),
                sender: m.envelope.sender.clone(),
                receiver: user,
                digest,
                signature: receipt.receipt_sig.clone(),
                signer_key,
                verdict_input: m.envelope.armored_body.clone(),
                recorded_at: now,
            },
            m6: receipt.sealed_for_sender.clone(),
            forwarded_at: now,
        };
        if let Some(store) = &mut state.store {
            store.append_release(&entry)?;
        }
        state.apply_release(entry)?;
        log::info!("released key for {id}");
        Ok(state.escrow[id].wrapped_key.clone())
    }

    /// Unacknowledged M6s for messages the caller sent, oldest first.
    pub fn fetch_evidence(&self, token: &str) -> Result<Vec<ForwardedEvidence>, ServerError> {
        let now = self.now();
        let state = self.lock();
        let user = state.directory.check_token(token, now)?;
        Ok(state
            .log
            .iter()
            .filter(|e| e.record.sender == user && !state.acked.contains(&e.record.message_id))
            .map(|e| ForwardedEvidence {
                message_id: e.record.message_id.clone(),
                receiver: e.record.receiver.clone(),
                m6: e.m6.clone(),
                forwarded_at: e.forwarded_at,
            })
            .collect())
    }

    pub fn ack_evidence(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        let now = self.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        let user = state.directory.check_token(token, now)?;
        if state.message(id)?.envelope.sender != user {
            return Err(ServerError::NotAParty);
        }
        if !state.released.contains_key(id) {
            return Err(ServerError::NotFound(format!("no evidence for {id}")));
        }
        if state.acked.contains(id) {
            return Ok(());
        }
        if let Some(store) = &mut state.store {
            store.append_ack(id)?;
        }
        state.acked.insert(id.clone());
        Ok(())
    }

    /// The server's logged evidence for a message, for either party.
    pub fn dispute(&self, token: &str, id: &MessageId) -> Result<Vec<EvidenceRecord>, ServerError> {
        let now = self.now();
        let state = self.lock();
        let user = state.directory.check_token(token, now)?;
        let m = state.message(id)?;
        if m.envelope.sender != user && m.envelope.recipient != user {
            return Err(ServerError::NotAParty);
        }
        Ok(state
            .log
            .iter()
            .filter(|e| &e.record.message_id == id)
            .map(|e| e.record.clone())
            .collect())
    }

    /// Hides a message from the addressee's inbox. Escrow and evidence
    /// are untouched.
    pub fn delete_message(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        let now = self.now();
        let mut guard = self.lock();
        let state = &mut *guard;
        let user = state.directory.check_token(token, now)?;
        let m = state.message(id)?;
        if m.envelope.recipient != user {
            return Err(ServerError::NotAddressee);
        }
        if m.deleted {
            return Ok(());
        }
        if let Some(store) = &mut state.store {
            store.append_delete(id)?;
        }
        state.messages.get_mut(id).expect("checked").deleted = true;
        Ok(())
    }

    pub fn escrow_state(&self, id: &MessageId) -> Option<EscrowState> {
        self.lock().escrow.get(id).map(|e| e.state)
    }

    pub fn escrow_entries(&self) -> Vec<EscrowEntry> {
        self.lock().escrow.values().cloned().collect()
    }

    pub fn evidence_log(&self) -> Vec<LogEntry> {
        self.lock().log.clone()
    }

    /// Log entries from position `start` on.
    pub fn evidence_log_from(&self, start: usize) -> Vec<LogEntry> {
        self.lock()
            .log
            .get(start..)
            .map(<[LogEntry]>::to_vec)
            .unwrap_or_default()
    }

    /// Re-checks every logged NRR record from its own contents.
    pub fn audit_log(&self) -> Vec<(MessageId, Result<(), crate::model::EvidenceError>)> {
        self.lock()
            .log
            .iter()
            .map(|e| (e.record.message_id.clone(), e.record.reverify()))
            .collect()
    }

    pub fn users(&self) -> Vec<UserRecord> {
        self.lock().directory.users().cloned().collect()
    }
}

impl State {
    fn message(&self, id: &MessageId) -> Result<&StoredMessage, ServerError> {
        self.messages
            .get(id)
            .ok_or_else(|| ServerError::NotFound(id.to_string()))
    }

    fn insert_upload(
        &mut self,
        envelope: TransmissionEnvelope,
        idempotency: Option<String>,
    ) -> Result<(), ServerError> {
        let id = envelope
            .message_id
            .clone()
            .ok_or_else(|| ServerError::Storage("stored upload without id".into()))?;
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(tok) = idempotency {
            self.idempotency.insert((envelope.sender.clone(), tok), id.clone());
        }
        self.escrow.insert(
            id.clone(),
            EscrowEntry {
                message_id: id.clone(),
                wrapped_key: envelope.wrapped_key.clone(),
                state: EscrowState::Held,
                released_at: None,
            },
        );
        self.messages.insert(
            id.clone(),
            StoredMessage {
                uploaded_at: envelope.upload_time.unwrap_or(0),
                envelope,
                id,
                seq,
                deleted: false,
            },
        );
        Ok(())
    }

    fn apply_release(&mut self, entry: LogEntry) -> Result<(), ServerError> {
        let id = entry.record.message_id.clone();
        let escrow = self
            .escrow
            .get_mut(&id)
            .ok_or_else(|| ServerError::Storage(format!("release for unknown message {id}")))?;
        if escrow.state == EscrowState::Released {
            return Err(ServerError::Storage(format!("second release for {id}")));
        }
        escrow.state = EscrowState::Released;
        escrow.released_at = Some(entry.forwarded_at);
        self.released.insert(id, self.log.len());
        self.log.push(entry);
        Ok(())
    }
}

impl Delivery for Server {
    fn register(
        &self,
        email: &str,
        password: &str,
        signing: &PublicKey,
        encryption: &PublicKey,
    ) -> Result<(), ServerError> {
        Server::register(self, email, password, signing.clone(), encryption.clone()).map(|_| ())
    }

    fn login(&self, email: &str, password: &str) -> Result<String, ServerError> {
        Server::login(self, email, password)
    }

    fn upload(
        &self,
        token: &str,
        envelope: &TransmissionEnvelope,
        idempotency: Option<&str>,
    ) -> Result<MessageId, ServerError> {
        self.accept_upload(token, envelope.clone(), idempotency)
    }

    fn inbox(&self, token: &str) -> Result<Vec<InboxEntry>, ServerError> {
        self.list_inbox(token)
    }

    fn fetch(&self, token: &str, id: &MessageId) -> Result<FetchedMessage, ServerError> {
        self.fetch_message(token, id)
    }

    fn submit_receipt(&self, token: &str, id: &MessageId, receipt: &Receipt) -> Result<Vec<u8>, ServerError> {
        Server::submit_receipt(self, token, id, receipt)
    }

    fn fetch_evidence(&self, token: &str) -> Result<Vec<ForwardedEvidence>, ServerError> {
        Server::fetch_evidence(self, token)
    }

    fn ack(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        self.ack_evidence(token, id)
    }

    fn pubkey(&self, email: &str, role: KeyRole) -> Result<PublicKey, ServerError> {
        self.lookup_public_key(email, role)
    }

    fn dispute(&self, token: &str, id: &MessageId) -> Result<Vec<EvidenceRecord>, ServerError> {
        Server::dispute(self, token, id)
    }

    fn delete(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        self.delete_message(token, id)
    }
}

impl<D: Delivery + ?Sized> Delivery for std::sync::Arc<D> {
    fn register(
        &self,
        email: &str,
        password: &str,
        signing: &PublicKey,
        encryption: &PublicKey,
    ) -> Result<(), ServerError> {
        (**self).register(email, password, signing, encryption)
    }
    fn login(&self, email: &str, password: &str) -> Result<String, ServerError> {
        (**self).login(email, password)
    }
    fn upload(
        &self,
        token: &str,
        envelope: &TransmissionEnvelope,
        idempotency: Option<&str>,
    ) -> Result<MessageId, ServerError> {
        (**self).upload(token, envelope, idempotency)
    }
    fn inbox(&self, token: &str) -> Result<Vec<InboxEntry>, ServerError> {
        (**self).inbox(token)
    }
    fn fetch(&self, token: &str, id: &MessageId) -> Result<FetchedMessage, ServerError> {
        (**self).fetch(token, id)
    }
    fn submit_receipt(&self, token: &str, id: &MessageId, receipt: &Receipt) -> Result<Vec<u8>, ServerError> {
        (**self).submit_receipt(token, id, receipt)
    }
    fn fetch_evidence(&self, token: &str) -> Result<Vec<ForwardedEvidence>, ServerError> {
        (**self).fetch_evidence(token)
    }
    fn ack(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        (**self).ack(token, id)
    }
    fn pubkey(&self, email: &str, role: KeyRole) -> Result<PublicKey, ServerError> {
        (**self).pubkey(email, role)
    }
    fn dispute(&self, token: &str, id: &MessageId) -> Result<Vec<EvidenceRecord>, ServerError> {
        (**self).dispute(token, id)
    }
    fn delete(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        (**self).delete(token, id)
    }
}
