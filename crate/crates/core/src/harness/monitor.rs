//! Independent checker for the safety invariants.
//!
//! The monitor learns ground truth from the wire (the envelope a sender
//! uploaded) and from the principals' real signing keys, never from D's
//! directory or D's own verdicts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::crypto::{self, PublicKey};
use crate::model::{EvidenceKind, MessageId, PrincipalId, Receipt, TransmissionEnvelope};
use crate::server::wire;
use crate::server::{decode_items, EscrowState, ForwardedEvidence, LogEntry};

use super::net::Exchange;
use super::Inspect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Invariant {
    /// Escrow RELEASED implies a re-verifiable NRR record in the log.
    ReleaseLogged,
    /// Wrapped-key bytes only ever follow a valid receipt.
    KeyOnlyForReceipt,
    /// At most one log entry and one distinct M6 per message.
    SingleRelease,
    /// A delivery claim is only proved if the addressee really signed.
    AdjudicationSound,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invariant::ReleaseLogged => "release-logged",
            Invariant::KeyOnlyForReceipt => "key-only-for-receipt",
            Invariant::SingleRelease => "single-release",
            Invariant::AdjudicationSound => "adjudication-sound",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub step: usize,
    pub invariant: Invariant,
    pub message_id: Option<MessageId>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} {}", self.step, self.invariant)?;
        if let Some(id) = &self.message_id {
            write!(f, " {id}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

const PREFIX: usize = 8;

#[derive(Debug, Default)]
pub(crate) struct Monitor {
    signing_keys: BTreeMap<PrincipalId, PublicKey>,
    uploads: BTreeMap<MessageId, TransmissionEnvelope>,
    /// First bytes of each wrapped key, for scanning replies.
    key_index: HashMap<[u8; PREFIX], Vec<MessageId>>,
    entitled: BTreeSet<MessageId>,
    m6_seen: BTreeMap<MessageId, BTreeSet<Vec<u8>>>,
    log_len: usize,
    log_counts: BTreeMap<MessageId, usize>,
    log_valid: BTreeSet<MessageId>,
    unlogged_reported: BTreeSet<MessageId>,
    violations: Vec<Violation>,
}

impl Monitor {
    pub fn add_principal(&mut self, id: PrincipalId, signing: PublicKey) {
        self.signing_keys.insert(id, signing);
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn violate(&mut self, step: usize, invariant: Invariant, id: Option<&MessageId>, detail: impl Into<String>) {
        self.violations.push(Violation {
            step,
            invariant,
            message_id: id.cloned(),
            detail: detail.into(),
        });
    }

    pub fn observe(&mut self, exchange: &Exchange, step: usize) {
        let mut parts = exchange.request.split(' ');
        let verb = parts.next().unwrap_or_default();
        let args: Vec<Vec<u8>> = parts.map(|a| wire::decode_field(a).unwrap_or_default()).collect();
        let payload = exchange.reply.as_deref().and_then(|r| wire::parse_reply(r).ok());

        match (verb, args.as_slice()) {
            ("UPLOAD", [_, envelope, _]) => {
                let id = payload
                    .as_deref()
                    .and_then(|p| std::str::from_utf8(p).ok())
                    .and_then(|s| MessageId::new(s).ok());
                if let (Some(id), Ok(envelope)) = (id, TransmissionEnvelope::from_bytes(envelope)) {
                    self.note_upload(id, envelope);
                }
            }
            ("RECEIPT", [_, id, receipt]) => {
                let id = std::str::from_utf8(id).ok().and_then(|s| MessageId::new(s).ok());
                if let (Some(id), Ok(receipt)) = (id, Receipt::from_bytes(receipt)) {
                    if self.receipt_valid(&id, &receipt) {
                        self.entitled.insert(id);
                    }
                }
            }
            _ => {}
        }

        let Some(payload) = payload else { return };
        self.scan_for_keys(&payload, verb, step);
        if verb == "EVIDENCE" {
            if let Ok(items) = decode_items(&payload, ForwardedEvidence::from_bytes) {
                for item in items {
                    let seen = self.m6_seen.entry(item.message_id.clone()).or_default();
                    if seen.insert(item.m6) && seen.len() > 1 {
                        self.violate(
                            step,
                            Invariant::SingleRelease,
                            Some(&item.message_id),
                            "a second, different M6 was forwarded",
                        );
                    }
                }
            }
        }
    }

    fn note_upload(&mut self, id: MessageId, envelope: TransmissionEnvelope) {
        if self.uploads.contains_key(&id) {
            return;
        }
        if let Some(prefix) = envelope.wrapped_key.get(..PREFIX) {
            let prefix: [u8; PREFIX] = prefix.try_into().expect("prefix length");
            self.key_index.entry(prefix).or_default().push(id.clone());
        }
        self.uploads.insert(id, envelope);
    }

    fn receipt_valid(&self, id: &MessageId, receipt: &Receipt) -> bool {
        let Some(envelope) = self.uploads.get(id) else {
            return false;
        };
        let Some(key) = self.signing_keys.get(&envelope.recipient) else {
            return false;
        };
        let digest = crypto::hash(&envelope.armored_body, envelope.suite);
        receipt.message_id == *id && crypto::verify(key, &digest, &receipt.receipt_sig)
    }

    fn scan_for_keys(&mut self, payload: &[u8], verb: &str, step: usize) {
        if payload.len() < PREFIX {
            return;
        }
        let mut leaked = BTreeSet::new();
        for start in 0..=payload.len() - PREFIX {
            let prefix: [u8; PREFIX] = payload[start..start + PREFIX].try_into().expect("prefix length");
            let Some(ids) = self.key_index.get(&prefix) else {
                continue;
            };
            for id in ids {
                let key = &self.uploads[id].wrapped_key;
                if !self.entitled.contains(id) && payload[start..].starts_with(key) {
                    leaked.insert(id.clone());
                }
            }
        }
        for id in leaked {
            self.violate(
                step,
                Invariant::KeyOnlyForReceipt,
                Some(&id),
                format!("{verb} reply carries the wrapped key with no valid receipt submitted"),
            );
        }
    }

    /// Checks D's state after a step. Only new log entries are verified.
    pub fn check_server(&mut self, server: &impl Inspect, step: usize) {
        for entry in server.log_entries_from(self.log_len) {
            self.log_len += 1;
            let id = entry.record.message_id.clone();
            let count = {
                let count = self.log_counts.entry(id.clone()).or_default();
                *count += 1;
                *count
            };
            if count > 1 {
                self.violate(
                    step,
                    Invariant::SingleRelease,
                    Some(&id),
                    format!("{count} evidence log entries"),
                );
            }
            if self.entry_valid(&entry) {
                self.log_valid.insert(id);
            }
        }
        for (id, state) in server.escrow_states() {
            if state == EscrowState::Released
                && !self.log_valid.contains(&id)
                && self.unlogged_reported.insert(id.clone())
            {
                self.violate(
                    step,
                    Invariant::ReleaseLogged,
                    Some(&id),
                    "key released without a verifiable NRR record",
                );
            }
        }
    }

    fn entry_valid(&self, entry: &LogEntry) -> bool {
        let record = &entry.record;
        let Some(envelope) = self.uploads.get(&record.message_id) else {
            return false;
        };
        let Some(key) = self.signing_keys.get(&envelope.recipient) else {
            return false;
        };
        record.kind == EvidenceKind::Nrr
            && record.sender == envelope.sender
            && record.receiver == envelope.recipient
            && record.verdict_input == envelope.armored_body
            && &record.signer_key == key
            && record.reverify().is_ok()
    }

    pub fn check_proved_delivery(&mut self, id: &MessageId, step: usize) {
        if !self.entitled.contains(id) {
            self.violate(
                step,
                Invariant::AdjudicationSound,
                Some(id),
                "delivery proved but the addressee never signed a receipt",
            );
        }
    }
}
