//! Single-directory file store for the server.
//!
//! - `directory.rec`: user records, later ones supersede earlier ones
//! - `messages.rec`: uploads (envelope incl. wrapped key, i.e. the HELD
//!   escrow entry) and inbox deletions
//! - `evidence.log`: one record per key release; RELEASED is derived from it
//! - `acks.rec`: message ids whose M6 the sender acknowledged

use std::path::Path;

use crate::codec::{tags, FramedConcat};
use crate::directory::UserRecord;
use crate::model::{MessageId, ModelError, TransmissionEnvelope};
use crate::storage::RecordFile;

use super::{LogEntry, ServerError};

const UPLOAD: u8 = 1;
const DELETE: u8 = 2;

pub(super) enum MessageEvent {
    Upload {
        envelope: TransmissionEnvelope,
        idempotency: Option<String>,
    },
    Delete(MessageId),
}

pub(super) struct Loaded {
    pub users: Vec<UserRecord>,
    pub messages: Vec<MessageEvent>,
    pub log: Vec<LogEntry>,
    pub acks: Vec<MessageId>,
}

pub(super) struct Store {
    directory: RecordFile,
    messages: RecordFile,
    evidence: RecordFile,
    acks: RecordFile,
}

impl Store {
    pub fn open(dir: &Path, sync: bool) -> Result<(Self, Loaded), ServerError> {
        std::fs::create_dir_all(dir)?;
        let (directory, users) = RecordFile::open(dir.join("directory.rec"), sync)?;
        let (messages, uploads) = RecordFile::open(dir.join("messages.rec"), sync)?;
        let (evidence, log) = RecordFile::open(dir.join("evidence.log"), sync)?;
        let (acks_file, acks) = RecordFile::open(dir.join("acks.rec"), sync)?;
        let corrupt = |what: &str, e: ModelError| ServerError::Storage(format!("{what}: {e}"));
        let loaded = Loaded {
            users: users
                .iter()
                .map(|r| UserRecord::from_bytes(r).map_err(|e| corrupt("directory.rec", e)))
                .collect::<Result<_, _>>()?,
            messages: uploads
                .iter()
                .map(|r| parse_message_event(r).map_err(|e| corrupt("messages.rec", e)))
                .collect::<Result<_, _>>()?,
            log: log
                .iter()
                .map(|r| LogEntry::from_bytes(r).map_err(|e| corrupt("evidence.log", e)))
                .collect::<Result<_, _>>()?,
            acks: acks
                .iter()
                .map(|r| {
                    std::str::from_utf8(r)
                        .map_err(|_| ModelError::Invalid("ack is not UTF-8".into()))
                        .and_then(MessageId::new)
                        .map_err(|e| corrupt("acks.rec", e))
                })
                .collect::<Result<_, _>>()?,
        };
        Ok((
            Self {
                directory,
                messages,
                evidence,
                acks: acks_file,
            },
            loaded,
        ))
    }

    pub fn append_user(&mut self, record: &UserRecord) -> std::io::Result<()> {
        self.directory.append(&record.to_bytes())
    }

    pub fn append_upload(&mut self, envelope: &TransmissionEnvelope, idempotency: Option<&str>) -> std::io::Result<()> {
        let mut f = FramedConcat::new()
            .push(tags::RECORD_KIND, vec![UPLOAD])
            .push(tags::PAYLOAD, envelope.to_bytes());
        if let Some(tok) = idempotency {
            f = f.push_str(tags::IDEMPOTENCY, tok);
        }
        self.messages.append(&f.encode().expect("uniquely tagged"))
    }

    pub fn append_delete(&mut self, id: &MessageId) -> std::io::Result<()> {
        let f = FramedConcat::new()
            .push(tags::RECORD_KIND, vec![DELETE])
            .push_str(tags::MESSAGE_ID, id.as_str());
        self.messages.append(&f.encode().expect("uniquely tagged"))
    }

    /// The release commit: a single fsynced append.
    pub fn append_release(&mut self, entry: &LogEntry) -> std::io::Result<()> {
        self.evidence.append(&entry.to_bytes())
    }

    pub fn append_ack(&mut self, id: &MessageId) -> std::io::Result<()> {
        self.acks.append(id.as_str().as_bytes())
    }
}

fn parse_message_event(bytes: &[u8]) -> Result<MessageEvent, ModelError> {
    let f = FramedConcat::parse(bytes)?;
    match f.require(tags::RECORD_KIND)? {
        [UPLOAD] => Ok(MessageEvent::Upload {
            envelope: TransmissionEnvelope::from_bytes(f.require(tags::PAYLOAD)?)?,
            idempotency: match f.get(tags::IDEMPOTENCY) {
                Some(_) => Some(f.require_str(tags::IDEMPOTENCY)?.to_owned()),
                None => None,
            },
        }),
        [DELETE] => Ok(MessageEvent::Delete(MessageId::new(f.require_str(tags::MESSAGE_ID)?)?)),
        _ => Err(ModelError::Invalid("unknown message record kind".into())),
    }
}
