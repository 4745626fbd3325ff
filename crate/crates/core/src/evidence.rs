//! Offline dispute resolution from evidence records alone.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::crypto::{Digest, PublicKey};
use crate::model::{EvidenceKind, EvidenceRecord, MessageId, ModelError, PrincipalId};
use crate::storage::RecordFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Claim {
    /// The sender says the receiver got the message; needs NRR.
    SenderClaimsDelivery,
    /// The receiver says the sender sent the message; needs NRO.
    ReceiverClaimsOrigin,
}

impl Claim {
    pub fn required_kind(self) -> EvidenceKind {
        match self {
            Claim::SenderClaimsDelivery => EvidenceKind::Nrr,
            Claim::ReceiverClaimsOrigin => EvidenceKind::Nro,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Proved,
    NotProved,
    EvidenceForged,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Proved => "Proved",
            Verdict::NotProved => "NotProved",
            Verdict::EvidenceForged => "EvidenceForged",
        })
    }
}

#[derive(Debug, Clone)]
pub struct DisputeCase {
    pub claim: Claim,
    /// The party who denies: the receiver for a delivery claim, the sender
    /// for an origin claim.
    pub respondent: PrincipalId,
    pub records: Vec<EvidenceRecord>,
    /// The adjudicator's own view of each principal's signing key.
    pub public_keys: BTreeMap<PrincipalId, PublicKey>,
    /// H(M5) for a delivery claim, H(canonical M) for an origin claim.
    pub contested_message_digest: Digest,
}

/// Decides a case from its contents only.
///
/// A record is relevant if it has the kind the claim needs, names the
/// respondent as the accountable party and carries the contested digest.
/// One relevant record that re-verifies under the respondent's key from
/// `public_keys` proves the claim. Relevant records that all fail mean the
/// evidence was forged; no relevant records means nothing is proved.
pub fn adjudicate(case: &DisputeCase) -> Verdict {
    let relevant: Vec<&EvidenceRecord> = case
        .records
        .iter()
        .filter(|r| {
            r.kind == case.claim.required_kind()
                && r.accountable() == &case.respondent
                && r.digest == case.contested_message_digest
        })
        .collect();
    if relevant.is_empty() {
        return Verdict::NotProved;
    }
    let Some(trusted_key) = case.public_keys.get(&case.respondent) else {
        // Without the respondent's key nothing can be checked either way.
        return Verdict::NotProved;
    };
    let genuine = |r: &&EvidenceRecord| &r.signer_key == trusted_key && r.reverify().is_ok();
    if relevant.iter().any(genuine) {
        Verdict::Proved
    } else {
        Verdict::EvidenceForged
    }
}

/// A party's local, append-only collection of evidence records.
#[derive(Debug)]
pub struct EvidenceStore {
    file: RecordFile,
    records: Vec<EvidenceRecord>,
}

impl EvidenceStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EvidenceStoreError> {
        let (file, raw) = RecordFile::open(path, true)?;
        let records = raw
            .iter()
            .map(|r| EvidenceRecord::from_bytes(r))
            .collect::<Result<_, _>>()?;
        Ok(Self { file, records })
    }

    /// Appends unless an identical record is already stored. Returns
    /// whether it was new.
    pub fn add(&mut self, record: EvidenceRecord) -> Result<bool, EvidenceStoreError> {
        if self.records.contains(&record) {
            return Ok(false);
        }
        self.file.append(&record.to_bytes())?;
        self.records.push(record);
        Ok(true)
    }

    pub fn records(&self) -> &[EvidenceRecord] {
        &self.records
    }

    pub fn for_message<'a>(&'a self, id: &'a MessageId) -> impl Iterator<Item = &'a EvidenceRecord> + 'a {
        self.records.iter().filter(move |r| &r.message_id == id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvidenceStoreError {
    #[error("evidence store: {0}")]
    Io(#[from] std::io::Error),
    #[error("evidence store: {0}")]
    Model(#[from] ModelError),
}
