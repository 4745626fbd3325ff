use std::fmt;
use std::str::FromStr;

use super::CryptoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashAlg {
    Sha1,
    Sha256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigAlg {
    /// DSA over shared 1024-bit/160-bit domain parameters.
    Dsa,
    Ed25519,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymAlg {
    TripleDesCbc,
    Aes256Cbc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WrapAlg {
    /// RSA-2048 with OAEP (SHA-256).
    RsaOaep2048,
}

macro_rules! registry {
    ($ty:ident { $($variant:ident = ($byte:expr, $name:expr)),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn id(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }

            pub fn code(self) -> u8 {
                match self { $($ty::$variant => $byte),+ }
            }

            pub fn from_code(code: u8) -> Result<Self, CryptoError> {
                match code {
                    $($byte => Ok($ty::$variant),)+
                    other => Err(CryptoError::UnknownAlgorithm(format!(
                        "{} code {other}", stringify!($ty)
                    ))),
                }
            }
        }

        impl FromStr for $ty {
            type Err = CryptoError;

            fn from_str(s: &str) -> Result<Self, CryptoError> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(CryptoError::UnknownAlgorithm(other.to_owned())),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.id())
            }
        }
    };
}

registry!(HashAlg { Sha1 = (1, "sha1"), Sha256 = (2, "sha256") });
registry!(SigAlg { Dsa = (1, "dsa"), Ed25519 = (2, "ed25519") });
registry!(SymAlg { TripleDesCbc = (1, "3des-cbc"), Aes256Cbc = (2, "aes256-cbc") });
registry!(WrapAlg { RsaOaep2048 = (1, "rsa2048-oaep") });

impl HashAlg {
    pub fn output_len(self) -> usize {
        match self {
            HashAlg::Sha1 => 20,
            HashAlg::Sha256 => 32,
        }
    }
}

impl SymAlg {
    pub fn key_len(self) -> usize {
        match self {
            SymAlg::TripleDesCbc => 24,
            SymAlg::Aes256Cbc => 32,
        }
    }

    pub fn block_len(self) -> usize {
        match self {
            SymAlg::TripleDesCbc => 8,
            SymAlg::Aes256Cbc => 16,
        }
    }

    /// Length of `sym_encrypt` output for a plaintext of `len` bytes:
    /// IV plus PKCS#7-padded ciphertext.
    pub fn ciphertext_len(self, len: usize) -> usize {
        let block = self.block_len();
        block + block * (len / block + 1)
    }
}

impl WrapAlg {
    pub fn modulus_bits(self) -> usize {
        match self {
            WrapAlg::RsaOaep2048 => 2048,
        }
    }

    pub fn modulus_len(self) -> usize {
        self.modulus_bits() / 8
    }

    /// Largest plaintext a single OAEP block can carry.
    pub fn capacity(self) -> usize {
        // k - 2*hLen - 2 with SHA-256
        self.modulus_len() - 2 * 32 - 2
    }
}

/// The hash/signature/cipher/wrap combination used for one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlgorithmSuite {
    pub hash: HashAlg,
    pub sig: SigAlg,
    pub sym: SymAlg,
    pub wrap: WrapAlg,
}

impl AlgorithmSuite {
    /// SHA-1, DSA, TripleDES-CBC, RSA.
    pub const CLASSIC: Self = Self {
        hash: HashAlg::Sha1,
        sig: SigAlg::Dsa,
        sym: SymAlg::TripleDesCbc,
        wrap: WrapAlg::RsaOaep2048,
    };

    /// SHA-256, Ed25519, AES-256-CBC, RSA.
    pub const MODERN: Self = Self {
        hash: HashAlg::Sha256,
        sig: SigAlg::Ed25519,
        sym: SymAlg::Aes256Cbc,
        wrap: WrapAlg::RsaOaep2048,
    };

    pub fn new(hash_id: &str, sig_id: &str, sym_id: &str, wrap_id: &str) -> Result<Self, CryptoError> {
        Ok(Self {
            hash: hash_id.parse()?,
            sig: sig_id.parse()?,
            sym: sym_id.parse()?,
            wrap: wrap_id.parse()?,
        })
    }

    /// Looks up a named profile (`classic` or `modern`).
    pub fn profile(name: &str) -> Result<Self, CryptoError> {
        match name {
            "classic" => Ok(Self::CLASSIC),
            "modern" => Ok(Self::MODERN),
            other => Err(CryptoError::UnknownAlgorithm(format!("profile {other}"))),
        }
    }

    pub fn to_bytes(self) -> [u8; 4] {
        [self.hash.code(), self.sig.code(), self.sym.code(), self.wrap.code()]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let [h, s, c, w]: [u8; 4] = bytes
            .try_into()
            .map_err(|_| CryptoError::UnknownAlgorithm("suite id must be 4 bytes".into()))?;
        Ok(Self {
            hash: HashAlg::from_code(h)?,
            sig: SigAlg::from_code(s)?,
            sym: SymAlg::from_code(c)?,
            wrap: WrapAlg::from_code(w)?,
        })
    }
}

impl Default for AlgorithmSuite {
    fn default() -> Self {
        Self::CLASSIC
    }
}

impl fmt::Display for AlgorithmSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.hash, self.sig, self.sym, self.wrap)
    }
}

impl FromStr for AlgorithmSuite {
    type Err = CryptoError;

    /// Accepts a profile name or a `hash/sig/sym/wrap` id string.
    fn from_str(s: &str) -> Result<Self, CryptoError> {
        let ids: Vec<&str> = s.split('/').collect();
        match ids.as_slice() {
            [h, g, c, w] => Self::new(h, g, c, w),
            _ => Self::profile(s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_classic() {
        assert_eq!(AlgorithmSuite::default().to_string(), "sha1/dsa/3des-cbc/rsa2048-oaep");
    }

    #[test]
    fn unknown_ids_rejected() {
        assert!(AlgorithmSuite::new("md5", "dsa", "3des-cbc", "rsa2048-oaep").is_err());
        assert!(AlgorithmSuite::new("sha1", "dsa", "des-cbc", "rsa2048-oaep").is_err());
        assert!(AlgorithmSuite::from_bytes(&[1, 1, 9, 1]).is_err());
        assert!("nonsense".parse::<AlgorithmSuite>().is_err());
    }

    #[test]
    fn ids_round_trip() {
        for suite in [AlgorithmSuite::CLASSIC, AlgorithmSuite::MODERN] {
            assert_eq!(suite.to_string().parse::<AlgorithmSuite>().unwrap(), suite);
            assert_eq!(AlgorithmSuite::from_bytes(&suite.to_bytes()).unwrap(), suite);
        }
        assert_eq!("modern".parse::<AlgorithmSuite>().unwrap(), AlgorithmSuite::MODERN);
    }

    #[test]
    fn triple_des_ciphertext_length() {
        // 8-byte IV + whole blocks, padding always adds at least one byte
        assert_eq!(SymAlg::TripleDesCbc.ciphertext_len(0), 16);
        assert_eq!(SymAlg::TripleDesCbc.ciphertext_len(7), 16);
        assert_eq!(SymAlg::TripleDesCbc.ciphertext_len(8), 24);
        assert_eq!(SymAlg::TripleDesCbc.ciphertext_len(100), 8 + 104);
    }
}
