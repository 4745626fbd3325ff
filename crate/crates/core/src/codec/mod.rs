//! Byte-exact encodings shared by every protocol artifact.
//!
//! Three layers live here: radix-64 text armor for anything that must cross
//! a text transport, DEFLATE compression of the signed message, and the
//! tag+length framing that gives every concatenation an unambiguous parse.

mod armor;
mod deflate;
mod frame;
pub mod radix64;
pub mod tags;

pub use armor::{ArmoredText, ARMOR_LINE_WIDTH};
pub use deflate::{compress, decompress, decompress_with_limit, DEFAULT_INFLATE_LIMIT};
pub use frame::{
    decode_list, encode_list, frame, unframe, FrameError, FramedConcat, Tag, FRAME_HEADER_LEN, PART_HEADER_LEN,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed armor: {0}")]
    MalformedArmor(String),
    #[error("corrupt deflate stream: {0}")]
    CorruptStream(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Convenience wrapper: radix-64 payload of `data` without line wrapping.
pub fn radix64_encode(data: &[u8]) -> String {
    radix64::encode(data)
}

/// Decodes the payload of an armored block.
pub fn radix64_decode(text: &ArmoredText) -> Result<Vec<u8>, CodecError> {
    text.decode()
}
