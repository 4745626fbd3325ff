//! Client-side flows on top of [`Delivery`]: what the command-line tools
//! run, and what tests drive in-process.

use std::path::Path;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{self, AlgorithmSuite, KeyMaterial, KeyRole};
use crate::evidence::{adjudicate, Claim, DisputeCase, EvidenceStore, EvidenceStoreError, Verdict};
use crate::model::{EvidenceRecord, MessageId, PlaintextMessage, PrincipalId};
use crate::receiver::{self, OpenError, ReceivedMessage, ReceiverError, ReceiverStore};
use crate::sender::{self, SenderError, SenderStore, SentMessage};
use crate::server::{Delivery, FetchedMessage, InboxEntry, ServerError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{0}")]
    Server(#[from] ServerError),
    #[error(transparent)]
    Sender(#[from] SenderError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error(transparent)]
    Open(#[from] OpenError),
    #[error(transparent)]
    Evidence(#[from] EvidenceStoreError),
    #[error("not logged in")]
    NotLoggedIn,
    #[error("message {0} is not in the local store")]
    UnknownMessage(MessageId),
    #[error("message {0} has not been read yet")]
    NotOpened(MessageId),
}

impl ClientError {
    /// Short machine-readable name: the server's error code or the local
    /// pipeline stage that failed.
    pub fn code(&self) -> &'static str {
        match self {
            ClientError::Server(e) => e.code(),
            ClientError::Open(e) | ClientError::Receiver(ReceiverError::Open(e)) => e.stage.error_name(),
            ClientError::Sender(SenderError::EvidenceInvalid(_))
            | ClientError::Receiver(ReceiverError::EvidenceInvalid(_)) => "EvidenceInvalid",
            ClientError::Sender(SenderError::MessageTooLarge { .. }) => "MessageTooLarge",
            ClientError::Sender(SenderError::WrongKeyRole { .. })
            | ClientError::Receiver(ReceiverError::WrongKeyRole { .. }) => "WrongKeyRole",
            ClientError::Sender(_) | ClientError::Receiver(_) | ClientError::Evidence(_) => "LocalError",
            ClientError::NotLoggedIn => "AuthRequired",
            ClientError::UnknownMessage(_) => "NotFound",
            ClientError::NotOpened(_) => "NotOpened",
        }
    }
}

/// The three local stores a principal keeps.
#[derive(Debug)]
pub struct LocalStores {
    pub sent: SenderStore,
    pub received: ReceiverStore,
    pub evidence: EvidenceStore,
}

impl LocalStores {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ClientError> {
        let dir = dir.as_ref();
        Ok(Self {
            sent: SenderStore::open(dir.join("sent.rec"))?,
            received: ReceiverStore::open(dir.join("received.rec"))?,
            evidence: EvidenceStore::open(dir.join("evidence.rec"))?,
        })
    }
}

/// Generates key pairs locally and registers their public halves.
pub fn register_account(
    delivery: &impl Delivery,
    email: &str,
    password: &str,
    suite: AlgorithmSuite,
    rng: &mut (impl RngCore + CryptoRng + ?Sized),
) -> Result<KeyMaterial, ClientError> {
    let owner = PrincipalId::new(email).map_err(|e| ServerError::BadRequest(e.to_string()))?;
    let keys = KeyMaterial::generate(owner, suite, rng);
    delivery.register(email, password, &keys.signing.public, &keys.encryption.public)?;
    Ok(keys)
}

#[derive(Debug, Clone)]
pub struct ReadOutcome {
    pub message_id: MessageId,
    pub message: PlaintextMessage,
    pub origin: EvidenceRecord,
    /// False when served from the local cache.
    pub fresh: bool,
}

#[derive(Debug)]
pub enum EvidenceOutcome {
    Verified(Box<EvidenceRecord>),
    Rejected { message_id: MessageId, error: ClientError },
}

pub struct Client<D> {
    delivery: D,
    keys: KeyMaterial,
    suite: AlgorithmSuite,
    stores: LocalStores,
    token: Option<String>,
}

impl<D: Delivery> Client<D> {
    pub fn new(delivery: D, keys: KeyMaterial, suite: AlgorithmSuite, stores: LocalStores) -> Self {
        Self {
            delivery,
            keys,
            suite,
            stores,
            token: None,
        }
    }

    pub fn me(&self) -> &PrincipalId {
        &self.keys.owner
    }

    pub fn stores(&self) -> &LocalStores {
        &self.stores
    }

    pub fn delivery(&self) -> &D {
        &self.delivery
    }

    pub fn login(&mut self, password: &str) -> Result<(), ClientError> {
        self.token = Some(self.delivery.login(self.keys.owner.as_str(), password)?);
        Ok(())
    }

    pub fn set_token(&mut self, token: String) {
        self.token = Some(token);
    }

    fn token(&self) -> Result<&str, ClientError> {
        self.token.as_deref().ok_or(ClientError::NotLoggedIn)
    }

    /// Seals and uploads a message, then remembers its M5 for the receipt.
    pub fn send(
        &mut self,
        to: &str,
        subject: &str,
        body: &[u8],
        date: u64,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<MessageId, ClientError> {
        let token = self.token()?.to_owned();
        let recipient_pub = self.delivery.pubkey(to, KeyRole::Encryption)?;
        let msg = PlaintextMessage {
            from: self.keys.owner.clone(),
            to: recipient_pub.owner().clone(),
            subject: subject.to_owned(),
            date,
            body: body.to_vec(),
        };
        let envelope = sender::compose_and_seal(&msg, &self.keys, &recipient_pub, self.suite, rng)?;
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let id = self.delivery.upload(&token, &envelope, Some(&hex::encode(nonce)))?;
        self.stores.sent.record(SentMessage {
            message_id: id.clone(),
            recipient: msg.to,
            subject: msg.subject,
            suite: self.suite,
            m5: envelope.armored_body,
            sent_at: date,
        })?;
        Ok(id)
    }

    pub fn inbox(&self) -> Result<Vec<InboxEntry>, ClientError> {
        Ok(self.delivery.inbox(self.token()?)?)
    }

    pub fn fetch(&self, id: &MessageId) -> Result<FetchedMessage, ClientError> {
        Ok(self.delivery.fetch(self.token()?, id)?)
    }

    /// Tries to open a fetched message with no released key. This always
    /// fails at key unwrap; it is what a receiver who skips the receipt
    /// is left with.
    pub fn open_without_receipt(&self, fetched: &FetchedMessage) -> Result<PlaintextMessage, ClientError> {
        let sender_pub = self.delivery.pubkey(fetched.sender.as_str(), KeyRole::Signing)?;
        Ok(receiver::open_message(
            &fetched.m5,
            &[],
            &self.keys,
            &sender_pub,
            fetched.suite,
        )?)
    }

    /// Fetch, sign a receipt over the unopened M5, trade it for the key,
    /// open, and keep NRO evidence. Reading again is served locally.
    pub fn read(
        &mut self,
        id: &MessageId,
        now: u64,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<ReadOutcome, ClientError> {
        if let Some(ReceivedMessage {
            opened: Some(opened), ..
        }) = self.stores.received.get(id)
        {
            let origin = self
                .stores
                .evidence
                .for_message(id)
                .find(|r| r.kind == crate::model::EvidenceKind::Nro)
                .cloned()
                .ok_or_else(|| ClientError::NotOpened(id.clone()))?;
            return Ok(ReadOutcome {
                message_id: id.clone(),
                message: opened.message.clone(),
                origin,
                fresh: false,
            });
        }

        let token = self.token()?.to_owned();
        let fetched = self.delivery.fetch(&token, id)?;
        let sender_sig = self.delivery.pubkey(fetched.sender.as_str(), KeyRole::Signing)?;
        let sender_enc = self.delivery.pubkey(fetched.sender.as_str(), KeyRole::Encryption)?;

        // Reuse an earlier receipt so a retried read replays it exactly.
        let receipt = match self.stores.received.get(id) {
            Some(r) => r.receipt.clone(),
            None => {
                let receipt =
                    receiver::issue_receipt(&fetched.m5, &self.keys, &sender_enc, id, fetched.suite, now, rng)?;
                self.stores.received.record(ReceivedMessage {
                    message_id: id.clone(),
                    suite: fetched.suite,
                    receipt: receipt.clone(),
                    opened: None,
                })?;
                receipt
            }
        };
        let wrapped_key = self.delivery.submit_receipt(&token, id, &receipt)?;
        let opened =
            receiver::open_message_detailed(&fetched.m5, &wrapped_key, &self.keys, &sender_sig, fetched.suite)?;
        let origin = receiver::verify_origin(&opened.message, &opened.signature, &sender_sig, id, fetched.suite, now)?;
        self.stores.evidence.add(origin.clone())?;
        self.stores.received.record(ReceivedMessage {
            message_id: id.clone(),
            suite: fetched.suite,
            receipt,
            opened: Some(opened.clone()),
        })?;
        Ok(ReadOutcome {
            message_id: id.clone(),
            message: opened.message,
            origin,
            fresh: true,
        })
    }

    /// Pulls forwarded M6s, turns valid ones into NRR records and
    /// acknowledges them. Invalid ones stay unacknowledged.
    pub fn collect_evidence(&mut self, now: u64) -> Result<Vec<EvidenceOutcome>, ClientError> {
        let token = self.token()?.to_owned();
        let mut outcomes = Vec::new();
        for item in self.delivery.fetch_evidence(&token)? {
            let id = item.message_id.clone();
            let result = (|| {
                let sent = self
                    .stores
                    .sent
                    .get(&id)
                    .ok_or_else(|| ClientError::UnknownMessage(id.clone()))?;
                if sent.recipient != item.receiver {
                    return Err(ClientError::Sender(SenderError::RecipientMismatch {
                        expected: sent.recipient.clone(),
                        found: item.receiver.clone(),
                    }));
                }
                let receiver_pub = self.delivery.pubkey(sent.recipient.as_str(), KeyRole::Signing)?;
                Ok(sender::verify_receipt(
                    &item.m6,
                    &self.keys,
                    &receiver_pub,
                    &id,
                    &sent.m5,
                    now,
                )?)
            })();
            match result {
                Ok(record) => {
                    self.stores.evidence.add(record.clone())?;
                    self.delivery.ack(&token, &id)?;
                    outcomes.push(EvidenceOutcome::Verified(Box::new(record)));
                }
                Err(error) => {
                    log::warn!("evidence for {id} rejected: {error}");
                    outcomes.push(EvidenceOutcome::Rejected { message_id: id, error });
                }
            }
        }
        Ok(outcomes)
    }

    /// Builds a dispute case from local records only and adjudicates it.
    /// Public keys come from the directory.
    pub fn dispute(&self, claim: Claim, id: &MessageId) -> Result<(DisputeCase, Verdict), ClientError> {
        let (respondent, digest) = match claim {
            Claim::SenderClaimsDelivery => {
                let sent = self
                    .stores
                    .sent
                    .get(id)
                    .ok_or_else(|| ClientError::UnknownMessage(id.clone()))?;
                (sent.recipient.clone(), crypto::hash(&sent.m5, sent.suite))
            }
            Claim::ReceiverClaimsOrigin => {
                let received = self
                    .stores
                    .received
                    .get(id)
                    .ok_or_else(|| ClientError::UnknownMessage(id.clone()))?;
                let opened = received
                    .opened
                    .as_ref()
                    .ok_or_else(|| ClientError::NotOpened(id.clone()))?;
                (
                    opened.message.from.clone(),
                    crypto::hash(&opened.message.canonical_bytes(), received.suite),
                )
            }
        };
        let respondent_key = self.delivery.pubkey(respondent.as_str(), KeyRole::Signing)?;
        let case = DisputeCase {
            claim,
            respondent: respondent.clone(),
            records: self.stores.evidence.for_message(id).cloned().collect(),
            public_keys: [(respondent, respondent_key)].into_iter().collect(),
            contested_message_digest: digest,
        };
        let verdict = adjudicate(&case);
        Ok((case, verdict))
    }

    pub fn delete(&self, id: &MessageId) -> Result<(), ClientError> {
        Ok(self.delivery.delete(self.token()?, id)?)
    }

    /// Sends a fresh message to the sender of a message already read.
    pub fn reply(
        &mut self,
        id: &MessageId,
        body: &[u8],
        date: u64,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<MessageId, ClientError> {
        let original = self.opened(id)?;
        let subject = prefixed("Re: ", &original.subject);
        self.send(original.from.as_str(), &subject, body, date, rng)
    }

    /// Re-sends the body of a message already read to someone else.
    pub fn forward(
        &mut self,
        id: &MessageId,
        to: &str,
        date: u64,
        rng: &mut (impl RngCore + CryptoRng + ?Sized),
    ) -> Result<MessageId, ClientError> {
        let original = self.opened(id)?;
        let subject = prefixed("Fwd: ", &original.subject);
        let mut body = format!("---------- Forwarded message from {} ----------\n", original.from).into_bytes();
        body.extend_from_slice(&original.body);
        self.send(to, &subject, &body, date, rng)
    }

    fn opened(&self, id: &MessageId) -> Result<PlaintextMessage, ClientError> {
        let received = self
            .stores
            .received
            .get(id)
            .ok_or_else(|| ClientError::UnknownMessage(id.clone()))?;
        received
            .opened
            .as_ref()
            .map(|o| o.message.clone())
            .ok_or_else(|| ClientError::NotOpened(id.clone()))
    }
}

fn prefixed(prefix: &str, subject: &str) -> String {
    if subject.starts_with(prefix) {
        subject.to_owned()
    } else {
        format!("{prefix}{subject}")
    }
}
