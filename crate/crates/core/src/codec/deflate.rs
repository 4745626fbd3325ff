//! DEFLATE (raw, no zlib/gzip wrapper).
//!
//! Compression goes through `flate2`. Decompression is a strict inflater:
//! on top of the usual validity checks it rejects non-zero alignment bits
//! before stored blocks, non-zero bits after the final block, trailing bytes
//! and incomplete Huffman codes (other than the single-code case). Every
//! conforming encoder writes those bits as zero, and the strictness means
//! no bit of an accepted stream is ignored.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::CodecError;

/// Decompressed-size ceiling for [`decompress`].
pub const DEFAULT_INFLATE_LIMIT: usize = 256 * 1024 * 1024;

pub fn compress(data: &[u8]) -> Vec<u8> {
    let mut encoder = DeflateEncoder::new(Vec::with_capacity(data.len() / 2 + 64), Compression::default());
    encoder.write_all(data).expect("writing to a Vec cannot fail");
    encoder.finish().expect("writing to a Vec cannot fail")
}

pub fn decompress(data: &[u8]) -> Result<Vec<u8>, CodecError> {
    decompress_with_limit(data, DEFAULT_INFLATE_LIMIT)
}

pub fn decompress_with_limit(data: &[u8], limit: usize) -> Result<Vec<u8>, CodecError> {
    Inflater {
        input: BitReader::new(data),
        out: Vec::with_capacity(data.len().saturating_mul(2).min(limit)),
        limit,
    }
    .run()
}

fn corrupt(detail: &str) -> CodecError {
    CodecError::CorruptStream(detail.to_owned())
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    buf: u32,
    count: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self {
            data,
            pos: 0,
            buf: 0,
            count: 0,
        }
    }

    fn bits(&mut self, need: u32) -> Result<u32, CodecError> {
        debug_assert!(need <= 16);
        while self.count < need {
            let byte = *self
                .data
                .get(self.pos)
                .ok_or_else(|| corrupt("unexpected end of stream"))?;
            self.pos += 1;
            self.buf |= (byte as u32) << self.count;
            self.count += 8;
        }
        let value = self.buf & ((1u32 << need) - 1);
        self.buf >>= need;
        self.count -= need;
        Ok(value)
    }

    /// Drops the bits left in the current byte; they must all be zero.
    fn align(&mut self) -> Result<(), CodecError> {
        if self.buf != 0 {
            return Err(corrupt("non-zero padding bits"));
        }
        self.buf = 0;
        self.count = 0;
        Ok(())
    }

    fn take_bytes(&mut self, len: usize) -> Result<&'a [u8], CodecError> {
        debug_assert_eq!(self.count, 0);
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| corrupt("stored block runs past end of stream"))?;
        let slice = &self.data[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
}

const MAX_BITS: usize = 15;

/// Canonical Huffman decoding table: symbol counts per code length and
/// symbols ordered by code.
struct Huffman {
    count: [u16; MAX_BITS + 1],
    symbol: Vec<u16>,
}

impl Huffman {
    /// Returns the table and the number of unused codes (0 when complete).
    fn build(lengths: &[u8]) -> Result<(Self, i32), CodecError> {
        let mut count = [0u16; MAX_BITS + 1];
        for &len in lengths {
            count[len as usize] += 1;
        }
        let mut table = Self {
            count,
            symbol: vec![0; lengths.len()],
        };
        if count[0] as usize == lengths.len() {
            return Ok((table, 0));
        }
        let mut left: i32 = 1;
        for &n in &count[1..=MAX_BITS] {
            left <<= 1;
            left -= n as i32;
            if left < 0 {
                return Err(corrupt("over-subscribed Huffman code"));
            }
        }
        let mut offs = [0u16; MAX_BITS + 1];
        for len in 1..MAX_BITS {
            offs[len + 1] = offs[len] + count[len];
        }
        for (sym, &len) in lengths.iter().enumerate() {
            if len != 0 {
                table.symbol[offs[len as usize] as usize] = sym as u16;
                offs[len as usize] += 1;
            }
        }
        Ok((table, left))
    }

    fn decode(&self, input: &mut BitReader<'_>) -> Result<u16, CodecError> {
        let mut code: i32 = 0;
        let mut first: i32 = 0;
        let mut index: i32 = 0;
        for len in 1..=MAX_BITS {
            code |= input.bits(1)? as i32;
            let count = self.count[len] as i32;
            if code - count < first {
                return Ok(self.symbol[(index + (code - first)) as usize]);
            }
            index += count;
            first += count;
            first <<= 1;
            code <<= 1;
        }
        Err(corrupt("invalid Huffman code"))
    }
}

const LENGTH_BASE: [u16; 29] = [
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258,
];
const LENGTH_EXTRA: [u8; 29] = [
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
];
const DIST_BASE: [u16; 30] = [
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513, 769, 1025, 1537, 2049, 3073, 4097, 6145,
    8193, 12289, 16385, 24577,
];
const DIST_EXTRA: [u8; 30] = [
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13,
];
const CODE_LENGTH_ORDER: [usize; 19] = [16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15];

struct Inflater<'a> {
    input: BitReader<'a>,
    out: Vec<u8>,
    limit: usize,
}

impl Inflater<'_> {
    fn run(mut self) -> Result<Vec<u8>, CodecError> {
        loop {
            let last = self.input.bits(1)? == 1;
            match self.input.bits(2)? {
                0 => self.stored()?,
                1 => {
                    let (lit, dist) = fixed_tables();
                    self.codes(&lit, &dist)?;
                }
                2 => {
                    let (lit, dist) = self.dynamic_tables()?;
                    self.codes(&lit, &dist)?;
                }
                _ => return Err(corrupt("reserved block type")),
            }
            if last {
                break;
            }
        }
        self.input.align()?;
        if self.input.pos != self.input.data.len() {
            return Err(corrupt("trailing bytes after final block"));
        }
        Ok(self.out)
    }

    fn stored(&mut self) -> Result<(), CodecError> {
        self.input.align()?;
        let header = self.input.take_bytes(4)?;
        let len = u16::from_le_bytes([header[0], header[1]]);
        let nlen = u16::from_le_bytes([header[2], header[3]]);
        if len != !nlen {
            return Err(corrupt("stored block length check failed"));
        }
        let bytes = self.input.take_bytes(len as usize)?;
        self.reserve(bytes.len())?;
        self.out.extend_from_slice(bytes);
        Ok(())
    }

    fn reserve(&self, extra: usize) -> Result<(), CodecError> {
        if self.out.len() + extra > self.limit {
            return Err(corrupt("output exceeds size limit"));
        }
        Ok(())
    }

    fn codes(&mut self, lit: &Huffman, dist: &Huffman) -> Result<(), CodecError> {
        loop {
            let symbol = lit.decode(&mut self.input)?;
            match symbol {
                0..=255 => {
                    self.reserve(1)?;
                    self.out.push(symbol as u8);
                }
                256 => return Ok(()),
                257..=285 => {
                    let idx = (symbol - 257) as usize;
                    let len = LENGTH_BASE[idx] as usize + self.input.bits(LENGTH_EXTRA[idx] as u32)? as usize;
                    let dsym = dist.decode(&mut self.input)? as usize;
                    if dsym >= 30 {
                        return Err(corrupt("invalid distance symbol"));
                    }
                    let distance = DIST_BASE[dsym] as usize + self.input.bits(DIST_EXTRA[dsym] as u32)? as usize;
                    if distance > self.out.len() {
                        return Err(corrupt("distance too far back"));
                    }
                    self.reserve(len)?;
                    let start = self.out.len() - distance;
                    for i in 0..len {
                        let b = self.out[start + i];
                        self.out.push(b);
                    }
                }
                _ => return Err(corrupt("invalid literal/length symbol")),
            }
        }
    }

    fn dynamic_tables(&mut self) -> Result<(Huffman, Huffman), CodecError> {
        let nlen = self.input.bits(5)? as usize + 257;
        let ndist = self.input.bits(5)? as usize + 1;
        let ncode = self.input.bits(4)? as usize + 4;
        if nlen > 286 || ndist > 30 {
            return Err(corrupt("bad code counts"));
        }
        let mut lengths = [0u8; 19];
        for &slot in CODE_LENGTH_ORDER.iter().take(ncode) {
            lengths[slot] = self.input.bits(3)? as u8;
        }
        let (lencode, left) = Huffman::build(&lengths)?;
        if left != 0 {
            return Err(corrupt("incomplete code-length code"));
        }

        let mut lengths = vec![0u8; nlen + ndist];
        let mut index = 0;
        while index < nlen + ndist {
            let symbol = lencode.decode(&mut self.input)?;
            if symbol < 16 {
                lengths[index] = symbol as u8;
                index += 1;
                continue;
            }
            let (value, repeat) = match symbol {
                16 => {
                    if index == 0 {
                        return Err(corrupt("repeat with no previous length"));
                    }
                    (lengths[index - 1], 3 + self.input.bits(2)? as usize)
                }
                17 => (0, 3 + self.input.bits(3)? as usize),
                _ => (0, 11 + self.input.bits(7)? as usize),
            };
            if index + repeat > nlen + ndist {
                return Err(corrupt("code lengths overflow"));
            }
            lengths[index..index + repeat].fill(value);
            index += repeat;
        }
        if lengths[256] == 0 {
            return Err(corrupt("missing end-of-block code"));
        }

        let (lit, left) = Huffman::build(&lengths[..nlen])?;
        if left != 0 && nlen - lit.count[0] as usize != 1 {
            return Err(corrupt("incomplete literal/length code"));
        }
        let (dist, left) = Huffman::build(&lengths[nlen..])?;
        if left != 0 && ndist - dist.count[0] as usize != 1 {
            return Err(corrupt("incomplete distance code"));
        }
        Ok((lit, dist))
    }
}

fn fixed_tables() -> (Huffman, Huffman) {
    let mut lengths = [0u8; 288];
    lengths[..144].fill(8);
    lengths[144..256].fill(9);
    lengths[256..280].fill(7);
    lengths[280..].fill(8);
    let (lit, _) = Huffman::build(&lengths).expect("fixed table is valid");
    let (dist, _) = Huffman::build(&[5u8; 30]).expect("fixed table is valid");
    (lit, dist)
}
