//! Append-only record files.
//!
//! Each record is `len: u32 BE || payload || sha256(payload)[..4]`. On read,
//! a torn or corrupt tail record (from a crash mid-append) is dropped and
//! truncated away; corruption anywhere before the tail is an error.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest as _, Sha256};

const CHECK_LEN: usize = 4;

#[derive(Debug)]
pub struct RecordFile {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl RecordFile {
    /// Opens (creating if needed) and returns the file with every intact
    /// record already read.
    pub fn open(path: impl AsRef<Path>, sync: bool) -> io::Result<(Self, Vec<Vec<u8>>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;
        let (records, valid_len) = parse(&raw).map_err(|at| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: corrupt record at offset {at}", path.display()),
            )
        })?;
        if valid_len < raw.len() {
            log::warn!(
                "{}: dropping {} bytes of torn tail record",
                path.display(),
                raw.len() - valid_len
            );
            file.set_len(valid_len as u64)?;
        }
        Ok((Self { path, file, sync }, records))
    }

    pub fn append(&mut self, payload: &[u8]) -> io::Result<()> {
        self.append_all(std::slice::from_ref(&payload))
    }

    /// Writes several records with one write call and one sync.
    pub fn append_all<P: AsRef<[u8]>>(&mut self, payloads: &[P]) -> io::Result<()> {
        let mut buf = Vec::new();
        for payload in payloads {
            let payload = payload.as_ref();
            let len = u32::try_from(payload.len())
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "record too large"))?;
            buf.extend_from_slice(&len.to_be_bytes());
            buf.extend_from_slice(payload);
            buf.extend_from_slice(&Sha256::digest(payload)[..CHECK_LEN]);
        }
        self.file.write_all(&buf)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Returns the intact records and the byte length they span. A damaged
/// record that is the last thing in the file counts as a torn tail; one
/// followed by more data is reported as `Err(offset)`.
fn parse(raw: &[u8]) -> Result<(Vec<Vec<u8>>, usize), usize> {
    let mut records = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let start = pos;
        let Some(len_bytes) = raw.get(pos..pos + 4) else {
            return Ok((records, start));
        };
        let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let end = pos + 4 + len + CHECK_LEN;
        if end > raw.len() {
            return Ok((records, start));
        }
        let payload = &raw[pos + 4..pos + 4 + len];
        if Sha256::digest(payload)[..CHECK_LEN] != raw[end - CHECK_LEN..end] {
            if end == raw.len() {
                return Ok((records, start));
            }
            return Err(start);
        }
        records.push(payload.to_vec());
        pos = end;
    }
    Ok((records, pos))
}
