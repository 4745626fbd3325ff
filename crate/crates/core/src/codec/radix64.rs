//! Standard radix-64 (4 characters per 3 bytes, `=` padding).
//!
//! The decoder is canonical: it rejects whitespace, misplaced padding and
//! non-zero bits in the final partial group, so every accepted string has
//! exactly one preimage.

use super::CodecError;

const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

const INVALID: u8 = 0xFF;

const fn reverse_table() -> [u8; 256] {
    let mut table = [INVALID; 256];
    let mut i = 0;
    while i < 64 {
        table[ALPHABET[i] as usize] = i as u8;
        i += 1;
    }
    table
}

static REVERSE: [u8; 256] = reverse_table();

pub fn is_alphabet(c: u8) -> bool {
    REVERSE[c as usize] != INVALID
}

pub fn encode(data: &[u8]) -> String {
    let mut out = String::with_capacity(data.len().div_ceil(3) * 4);
    for chunk in data.chunks(3) {
        let b0 = chunk[0] as u32;
        let b1 = chunk.get(1).copied().unwrap_or(0) as u32;
        let b2 = chunk.get(2).copied().unwrap_or(0) as u32;
        let group = (b0 << 16) | (b1 << 8) | b2;
        out.push(ALPHABET[(group >> 18) as usize & 0x3F] as char);
        out.push(ALPHABET[(group >> 12) as usize & 0x3F] as char);
        if chunk.len() > 1 {
            out.push(ALPHABET[(group >> 6) as usize & 0x3F] as char);
        } else {
            out.push('=');
        }
        if chunk.len() > 2 {
            out.push(ALPHABET[group as usize & 0x3F] as char);
        } else {
            out.push('=');
        }
    }
    out
}

pub fn decode(text: &str) -> Result<Vec<u8>, CodecError> {
    decode_bytes(text.as_bytes())
}

pub fn decode_bytes(text: &[u8]) -> Result<Vec<u8>, CodecError> {
    if !text.len().is_multiple_of(4) {
        return Err(malformed(format!(
            "payload length {} is not a multiple of 4",
            text.len()
        )));
    }
    let mut out = Vec::with_capacity(text.len() / 4 * 3);
    let groups = text.len() / 4;
    for (index, group) in text.chunks(4).enumerate() {
        let last = index + 1 == groups;
        let pad = group.iter().rev().take_while(|&&c| c == b'=').count();
        if pad > 0 && !last {
            return Err(malformed("padding before end of payload".into()));
        }
        if pad > 2 {
            return Err(malformed("more than two padding characters".into()));
        }
        let mut acc = 0u32;
        for &c in &group[..4 - pad] {
            let v = REVERSE[c as usize];
            if v == INVALID {
                return Err(malformed(format!("illegal character {:?}", c as char)));
            }
            acc = (acc << 6) | v as u32;
        }
        match pad {
            0 => {
                out.extend_from_slice(&[(acc >> 16) as u8, (acc >> 8) as u8, acc as u8]);
            }
            1 => {
                if acc & 0x3 != 0 {
                    return Err(malformed("non-zero trailing bits".into()));
                }
                let acc = acc >> 2;
                out.extend_from_slice(&[(acc >> 8) as u8, acc as u8]);
            }
            _ => {
                if acc & 0xF != 0 {
                    return Err(malformed("non-zero trailing bits".into()));
                }
                out.push((acc >> 4) as u8);
            }
        }
    }
    Ok(out)
}

fn malformed(detail: String) -> CodecError {
    CodecError::MalformedArmor(detail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_byte() {
        // 0x4D = 010011 01(0000) -> T, Q
        assert_eq!(encode(&[0x4D]), "TQ==");
        assert_eq!(decode("TQ==").unwrap(), vec![0x4D]);
    }

    #[test]
    fn empty() {
        assert_eq!(encode(&[]), "");
        assert_eq!(decode("").unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn rejects_illegal_character() {
        assert!(matches!(decode("T!=="), Err(CodecError::MalformedArmor(_))));
    }

    #[test]
    fn rejects_bad_padding() {
        assert!(decode("T===").is_err());
        assert!(decode("TQ==TQ==").is_err());
        assert!(decode("TQ=A").is_err());
        assert!(decode("TQ").is_err());
    }

    #[test]
    fn rejects_non_canonical_trailing_bits() {
        // "TR==" carries the same first byte as "TQ==" with a stray low bit.
        assert!(decode("TR==").is_err());
        assert!(decode("TWF=").is_err());
        assert_eq!(decode("TWE=").unwrap(), b"Ma");
    }
}
