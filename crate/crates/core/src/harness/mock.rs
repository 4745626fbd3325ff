//! A deliberately broken server for checking that the monitor notices
//! broken invariants. It wraps a real [`Server`] and misbehaves in one
//! chosen way.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{KeyRole, PublicKey};
use crate::model::{EvidenceRecord, MessageId, Receipt, TransmissionEnvelope};
use crate::server::{
    Delivery, EscrowState, FetchedMessage, ForwardedEvidence, InboxEntry, LogEntry, Server, ServerError,
};

use super::Inspect;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Hands out the wrapped key for a receipt that does not verify, and
    /// reports the message as released without logging anything.
    ReleaseWithoutReceipt,
    /// Reports every evidence log entry twice, as a server that logs
    /// replayed receipts would.
    DuplicateLogEntries,
}

pub struct FaultyServer {
    inner: Server,
    fault: Fault,
    wrapped_keys: RefCell<BTreeMap<MessageId, Vec<u8>>>,
    leaked: RefCell<BTreeSet<MessageId>>,
}

impl FaultyServer {
    pub fn new(inner: Server, fault: Fault) -> Self {
        Self {
            inner,
            fault,
            wrapped_keys: RefCell::default(),
            leaked: RefCell::default(),
        }
    }
}

impl Inspect for FaultyServer {
    fn escrow_states(&self) -> Vec<(MessageId, EscrowState)> {
        let leaked = self.leaked.borrow();
        self.inner
            .escrow_states()
            .into_iter()
            .map(|(id, state)| {
                let state = if leaked.contains(&id) {
                    EscrowState::Released
                } else {
                    state
                };
                (id, state)
            })
            .collect()
    }

    fn log_entries_from(&self, start: usize) -> Vec<LogEntry> {
        let log = self.inner.log_entries_from(0);
        let view: Vec<LogEntry> = match self.fault {
            Fault::DuplicateLogEntries => log.into_iter().flat_map(|e| [e.clone(), e]).collect(),
            Fault::ReleaseWithoutReceipt => log,
        };
        view.get(start..).map(<[LogEntry]>::to_vec).unwrap_or_default()
    }
}

impl Delivery for FaultyServer {
    fn register(
        &self,
        email: &str,
        password: &str,
        signing: &PublicKey,
        encryption: &PublicKey,
    ) -> Result<(), ServerError> {
        self.inner
            .register(email, password, signing.clone(), encryption.clone())
            .map(|_| ())
    }

    fn login(&self, email: &str, password: &str) -> Result<String, ServerError> {
        self.inner.login(email, password)
    }

    fn upload(
        &self,
        token: &str,
        envelope: &TransmissionEnvelope,
        idempotency: Option<&str>,
    ) -> Result<MessageId, ServerError> {
        let id = self.inner.accept_upload(token, envelope.clone(), idempotency)?;
        self.wrapped_keys
            .borrow_mut()
            .insert(id.clone(), envelope.wrapped_key.clone());
        Ok(id)
    }

    fn inbox(&self, token: &str) -> Result<Vec<InboxEntry>, ServerError> {
        self.inner.list_inbox(token)
    }

    fn fetch(&self, token: &str, id: &MessageId) -> Result<FetchedMessage, ServerError> {
        self.inner.fetch_message(token, id)
    }

    fn submit_receipt(&self, token: &str, id: &MessageId, receipt: &Receipt) -> Result<Vec<u8>, ServerError> {
        match self.inner.submit_receipt(token, id, receipt) {
            Err(ServerError::ReceiptInvalid(_)) if self.fault == Fault::ReleaseWithoutReceipt => {
                let key = self
                    .wrapped_keys
                    .borrow()
                    .get(id)
                    .cloned()
                    .ok_or_else(|| ServerError::NotFound(id.to_string()))?;
                self.leaked.borrow_mut().insert(id.clone());
                Ok(key)
            }
            other => other,
        }
    }

    fn fetch_evidence(&self, token: &str) -> Result<Vec<ForwardedEvidence>, ServerError> {
        self.inner.fetch_evidence(token)
    }

    fn ack(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        self.inner.ack_evidence(token, id)
    }

    fn pubkey(&self, email: &str, role: KeyRole) -> Result<PublicKey, ServerError> {
        self.inner.lookup_public_key(email, role)
    }

    fn dispute(&self, token: &str, id: &MessageId) -> Result<Vec<EvidenceRecord>, ServerError> {
        self.inner.dispute(token, id)
    }

    fn delete(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        self.inner.delete_message(token, id)
    }
}
