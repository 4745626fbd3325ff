use std::fmt;

use super::{radix64, CodecError};

/// Payload line width used when producing armor. Parsing accepts any width.
pub const ARMOR_LINE_WIDTH: usize = 76;

/// A radix-64 armored block:
///
/// ```text
/// -----BEGIN EPGP MESSAGE-----
/// <payload lines>
/// -----END EPGP MESSAGE-----
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmoredText {
    label: String,
    lines: Vec<String>,
}

impl ArmoredText {
    pub fn encode(label: &str, data: &[u8]) -> Self {
        let payload = radix64::encode(data);
        let lines = payload
            .as_bytes()
            .chunks(ARMOR_LINE_WIDTH)
            // radix-64 output is ASCII, so chunk boundaries are char boundaries
            .map(|c| String::from_utf8(c.to_vec()).expect("radix-64 output is ASCII"))
            .collect();
        Self {
            label: label.to_owned(),
            lines,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn decode(&self) -> Result<Vec<u8>, CodecError> {
        let joined: String = self.lines.concat();
        radix64::decode(&joined)
    }

    /// Parses an armored block. Lines may end in `\n` or `\r\n`; a single
    /// trailing newline after the END line is allowed, nothing else is.
    pub fn parse(text: &[u8]) -> Result<Self, CodecError> {
        let text = std::str::from_utf8(text).map_err(|_| CodecError::MalformedArmor("armor is not ASCII".into()))?;
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut lines: Vec<&str> = body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
        if lines.len() < 2 {
            return Err(CodecError::MalformedArmor("missing armor boundaries".into()));
        }
        let end = lines.pop().unwrap_or_default();
        let begin = lines.remove(0);
        let label = begin
            .strip_prefix("-----BEGIN ")
            .and_then(|r| r.strip_suffix("-----"))
            .ok_or_else(|| CodecError::MalformedArmor("bad BEGIN line".into()))?;
        let end_label = end
            .strip_prefix("-----END ")
            .and_then(|r| r.strip_suffix("-----"))
            .ok_or_else(|| CodecError::MalformedArmor("bad END line".into()))?;
        if label != end_label {
            return Err(CodecError::MalformedArmor("BEGIN and END labels differ".into()));
        }
        if label.is_empty() || !label.bytes().all(|c| c.is_ascii_uppercase() || c == b' ') {
            return Err(CodecError::MalformedArmor("bad armor label".into()));
        }
        for line in &lines {
            if line.is_empty() {
                return Err(CodecError::MalformedArmor("empty payload line".into()));
            }
            if let Some(c) = line.bytes().find(|&c| !(radix64::is_alphabet(c) || c == b'=')) {
                return Err(CodecError::MalformedArmor(format!("illegal character {:?}", c as char)));
            }
        }
        let armored = Self {
            label: label.to_owned(),
            lines: lines.into_iter().map(str::to_owned).collect(),
        };
        // structural check of padding and length happens here as well
        armored.decode()?;
        Ok(armored)
    }

    /// Parses and checks that the label is the expected one.
    pub fn parse_labeled(text: &[u8], label: &str) -> Result<Self, CodecError> {
        let armored = Self::parse(text)?;
        if armored.label != label {
            return Err(CodecError::MalformedArmor(format!(
                "expected label {label:?}, found {:?}",
                armored.label
            )));
        }
        Ok(armored)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_string().into_bytes()
    }
}

impl fmt::Display for ArmoredText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "-----BEGIN {}-----", self.label)?;
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        writeln!(f, "-----END {}-----", self.label)
    }
}
