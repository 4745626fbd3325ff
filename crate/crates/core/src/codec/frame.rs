//! Tag+length framing.
//!
//! Layout: `"EF"` magic, version byte, big-endian `u16` part count, then per
//! part a one-byte tag, a big-endian `u32` length and the part bytes. A frame
//! must be consumed exactly; trailing bytes are an error.

use std::fmt;

use thiserror::Error;

use super::tags;

const MAGIC: [u8; 2] = *b"EF";
const VERSION: u8 = 1;

pub const FRAME_HEADER_LEN: usize = 5;
pub const PART_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag(pub u8);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match tags::name(*self) {
            Some(name) => f.write_str(name),
            None => write!(f, "tag-{:#04x}", self.0),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("duplicate tag {0}")]
    DuplicateTag(Tag),
    #[error("part {0} exceeds the 32-bit length limit")]
    PartTooLarge(Tag),
    #[error("frame truncated")]
    Truncated,
    #[error("declared length of {0} runs past end of buffer")]
    LengthOverrun(Tag),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("bad frame header")]
    BadHeader,
    #[error("too many parts")]
    TooManyParts,
    #[error("missing part {0}")]
    Missing(Tag),
    #[error("unexpected part {0}")]
    Unexpected(Tag),
    #[error("part {0} has invalid contents: {1}")]
    InvalidPart(Tag, String),
}

pub fn frame(parts: &[(Tag, &[u8])]) -> Result<Vec<u8>, FrameError> {
    if parts.len() > u16::MAX as usize {
        return Err(FrameError::TooManyParts);
    }
    let mut seen = [false; 256];
    let mut total = FRAME_HEADER_LEN;
    for (tag, bytes) in parts {
        if std::mem::replace(&mut seen[tag.0 as usize], true) {
            return Err(FrameError::DuplicateTag(*tag));
        }
        if bytes.len() > u32::MAX as usize {
            return Err(FrameError::PartTooLarge(*tag));
        }
        total += PART_HEADER_LEN + bytes.len();
    }
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(parts.len() as u16).to_be_bytes());
    for (tag, bytes) in parts {
        out.push(tag.0);
        out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

pub fn unframe(bytes: &[u8]) -> Result<Vec<(Tag, Vec<u8>)>, FrameError> {
    Ok(FramedConcat::parse(bytes)?.parts)
}

/// Parsed frame with lookup helpers used by the record decoders.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FramedConcat {
    parts: Vec<(Tag, Vec<u8>)>,
}

impl FramedConcat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, tag: Tag, bytes: impl Into<Vec<u8>>) -> Self {
        self.parts.push((tag, bytes.into()));
        self
    }

    pub fn push_u64(self, tag: Tag, value: u64) -> Self {
        self.push(tag, value.to_be_bytes().to_vec())
    }

    pub fn push_str(self, tag: Tag, value: &str) -> Self {
        self.push(tag, value.as_bytes().to_vec())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let borrowed: Vec<(Tag, &[u8])> = self.parts.iter().map(|(t, b)| (*t, b.as_slice())).collect();
        frame(&borrowed)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        if bytes[..2] != MAGIC || bytes[2] != VERSION {
            return Err(FrameError::BadHeader);
        }
        let count = u16::from_be_bytes([bytes[3], bytes[4]]) as usize;
        let mut pos = FRAME_HEADER_LEN;
        let mut seen = [false; 256];
        let mut parts = Vec::with_capacity(count.min(256));
        for _ in 0..count {
            if bytes.len() - pos < PART_HEADER_LEN {
                return Err(FrameError::Truncated);
            }
            let tag = Tag(bytes[pos]);
            let len = u32::from_be_bytes([bytes[pos + 1], bytes[pos + 2], bytes[pos + 3], bytes[pos + 4]]) as usize;
            pos += PART_HEADER_LEN;
            if bytes.len() - pos < len {
                return Err(FrameError::LengthOverrun(tag));
            }
            if std::mem::replace(&mut seen[tag.0 as usize], true) {
                return Err(FrameError::DuplicateTag(tag));
            }
            parts.push((tag, bytes[pos..pos + len].to_vec()));
            pos += len;
        }
        if pos != bytes.len() {
            return Err(FrameError::TrailingBytes(bytes.len() - pos));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[(Tag, Vec<u8>)] {
        &self.parts
    }

    pub fn into_parts(self) -> Vec<(Tag, Vec<u8>)> {
        self.parts
    }

    pub fn get(&self, tag: Tag) -> Option<&[u8]> {
        self.parts.iter().find(|(t, _)| *t == tag).map(|(_, b)| b.as_slice())
    }

    pub fn require(&self, tag: Tag) -> Result<&[u8], FrameError> {
        self.get(tag).ok_or(FrameError::Missing(tag))
    }

    pub fn require_u64(&self, tag: Tag) -> Result<u64, FrameError> {
        let bytes = self.require(tag)?;
        let arr: [u8; 8] = bytes
            .try_into()
            .map_err(|_| FrameError::InvalidPart(tag, "expected 8-byte integer".into()))?;
        Ok(u64::from_be_bytes(arr))
    }

    pub fn require_str(&self, tag: Tag) -> Result<&str, FrameError> {
        std::str::from_utf8(self.require(tag)?).map_err(|_| FrameError::InvalidPart(tag, "not UTF-8".into()))
    }

    /// Fails unless the frame holds exactly `expected`, in that order.
    pub fn expect_tags(&self, expected: &[Tag]) -> Result<(), FrameError> {
        for (i, want) in expected.iter().enumerate() {
            match self.parts.get(i) {
                Some((t, _)) if t == want => {}
                Some((t, _)) => return Err(FrameError::Unexpected(*t)),
                None => return Err(FrameError::Missing(*want)),
            }
        }
        if let Some((t, _)) = self.parts.get(expected.len()) {
            return Err(FrameError::Unexpected(*t));
        }
        Ok(())
    }
}

/// Frames a list of already-encoded items under one repeated-item tag by
/// nesting: the outer frame holds a count-indexed sequence of frames.
pub fn encode_list(items: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u32).to_be_bytes());
    for item in items {
        out.extend_from_slice(&(item.len() as u32).to_be_bytes());
        out.extend_from_slice(item);
    }
    out
}

pub fn decode_list(bytes: &[u8]) -> Result<Vec<Vec<u8>>, FrameError> {
    let mut pos = 0usize;
    let read_u32 = |pos: &mut usize| -> Result<usize, FrameError> {
        let b = bytes.get(*pos..*pos + 4).ok_or(FrameError::Truncated)?;
        *pos += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    let count = read_u32(&mut pos)?;
    let mut items = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = read_u32(&mut pos)?;
        let item = bytes.get(pos..pos + len).ok_or(FrameError::Truncated)?;
        items.push(item.to_vec());
        pos += len;
    }
    if pos != bytes.len() {
        return Err(FrameError::TrailingBytes(bytes.len() - pos));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::tags::{BODY, SIG};

    #[test]
    fn empty_frame_is_header_only() {
        let bytes = frame(&[]).unwrap();
        assert_eq!(bytes.len(), FRAME_HEADER_LEN);
        assert!(unframe(&bytes).unwrap().is_empty());
    }

    #[test]
    fn two_parts_round_trip() {
        let sig = [7u8; 40];
        let parts: [(Tag, &[u8]); 2] = [(SIG, &sig), (BODY, b"hello")];
        let bytes = frame(&parts).unwrap();
        assert_eq!(bytes.len(), FRAME_HEADER_LEN + 2 * PART_HEADER_LEN + 45);
        let back = unframe(&bytes).unwrap();
        assert_eq!(back, vec![(SIG, sig.to_vec()), (BODY, b"hello".to_vec())]);
    }

    #[test]
    fn duplicate_tag_rejected() {
        assert_eq!(frame(&[(SIG, b"a"), (SIG, b"b")]), Err(FrameError::DuplicateTag(SIG)));
    }

    #[test]
    fn length_overrun_rejected() {
        let mut bytes = frame(&[(BODY, b"hello")]).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert_eq!(unframe(&bytes), Err(FrameError::LengthOverrun(BODY)));
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = frame(&[(BODY, b"hello")]).unwrap();
        bytes.push(0);
        assert_eq!(unframe(&bytes), Err(FrameError::TrailingBytes(1)));
    }

    #[test]
    fn list_round_trip() {
        let items = vec![vec![], vec![1, 2, 3], vec![9; 300]];
        assert_eq!(decode_list(&encode_list(&items)).unwrap(), items);
        assert!(decode_list(&[0, 0, 0, 1]).is_err());
    }
}
