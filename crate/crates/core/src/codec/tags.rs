//! Registry of frame tags. A tag's meaning is fixed by the record that
//! carries it; values are never reused across meanings.

use super::Tag;

// message
pub const FROM: Tag = Tag(0x01);
pub const TO: Tag = Tag(0x02);
pub const SUBJECT: Tag = Tag(0x03);
pub const DATE: Tag = Tag(0x04);
pub const BODY: Tag = Tag(0x05);
pub const MSG_HDR: Tag = Tag(0x06);

// signed message (M2) and envelope
pub const SIG: Tag = Tag(0x10);
pub const SYM_CT: Tag = Tag(0x11);
pub const WRAPPED_KEY: Tag = Tag(0x12);
pub const MESSAGE_ID: Tag = Tag(0x13);
pub const SENDER: Tag = Tag(0x14);
pub const RECIPIENT: Tag = Tag(0x15);
pub const ARMORED_BODY: Tag = Tag(0x16);
pub const SUITE: Tag = Tag(0x17);
pub const TIMESTAMP: Tag = Tag(0x18);

// receipts and evidence
pub const RECEIPT_SIG: Tag = Tag(0x20);
pub const SEALED_RCPT: Tag = Tag(0x21);
pub const DIGEST: Tag = Tag(0x22);
pub const KIND: Tag = Tag(0x23);
pub const PRINCIPALS: Tag = Tag(0x24);
pub const SIGNER_KEY: Tag = Tag(0x25);
pub const VERDICT_INPUT: Tag = Tag(0x26);
pub const SEAL_MODE: Tag = Tag(0x27);
pub const SEAL_BODY: Tag = Tag(0x28);

// keys and signatures
pub const ALG: Tag = Tag(0x30);
pub const ROLE: Tag = Tag(0x31);
pub const OWNER: Tag = Tag(0x32);
pub const KEY_PUBLIC: Tag = Tag(0x33);
pub const KEY_SECRET: Tag = Tag(0x34);
pub const SIG_VALUE: Tag = Tag(0x35);
pub const BIGNUM_A: Tag = Tag(0x36);
pub const BIGNUM_B: Tag = Tag(0x37);
pub const BIGNUM_C: Tag = Tag(0x38);
pub const BIGNUM_D: Tag = Tag(0x39);
pub const BIGNUM_E: Tag = Tag(0x3A);
pub const BIGNUM_F: Tag = Tag(0x3B);

// store records
pub const RECORD_KIND: Tag = Tag(0x40);
pub const PASSWORD_HASH: Tag = Tag(0x41);
pub const SIGNING_PUB: Tag = Tag(0x42);
pub const ENCRYPTION_PUB: Tag = Tag(0x43);
pub const IDEMPOTENCY: Tag = Tag(0x44);
pub const PAYLOAD: Tag = Tag(0x45);
pub const SIGNING_KEY: Tag = Tag(0x46);
pub const ENCRYPTION_KEY: Tag = Tag(0x47);
pub const NOTE: Tag = Tag(0x48);

const NAMES: &[(Tag, &str)] = &[
    (FROM, "FROM"),
    (TO, "TO"),
    (SUBJECT, "SUBJECT"),
    (DATE, "DATE"),
    (BODY, "BODY"),
    (MSG_HDR, "MSG-HDR"),
    (SIG, "SIG"),
    (SYM_CT, "SYM-CT"),
    (WRAPPED_KEY, "WRAPPED-KEY"),
    (MESSAGE_ID, "MESSAGE-ID"),
    (SENDER, "SENDER"),
    (RECIPIENT, "RECIPIENT"),
    (ARMORED_BODY, "ARMORED-BODY"),
    (SUITE, "SUITE"),
    (TIMESTAMP, "TIMESTAMP"),
    (RECEIPT_SIG, "RECEIPT-SIG"),
    (SEALED_RCPT, "SEALED-RCPT"),
    (DIGEST, "DIGEST"),
    (KIND, "KIND"),
    (PRINCIPALS, "PRINCIPALS"),
    (SIGNER_KEY, "SIGNER-KEY"),
    (VERDICT_INPUT, "VERDICT-INPUT"),
    (SEAL_MODE, "SEAL-MODE"),
    (SEAL_BODY, "SEAL-BODY"),
    (ALG, "ALG"),
    (ROLE, "ROLE"),
    (OWNER, "OWNER"),
    (KEY_PUBLIC, "KEY-PUBLIC"),
    (KEY_SECRET, "KEY-SECRET"),
    (SIG_VALUE, "SIG-VALUE"),
    (RECORD_KIND, "RECORD-KIND"),
    (PASSWORD_HASH, "PASSWORD-HASH"),
    (SIGNING_PUB, "SIGNING-PUB"),
    (ENCRYPTION_PUB, "ENCRYPTION-PUB"),
    (IDEMPOTENCY, "IDEMPOTENCY"),
    (PAYLOAD, "PAYLOAD"),
    (SIGNING_KEY, "SIGNING-KEY"),
    (ENCRYPTION_KEY, "ENCRYPTION-KEY"),
    (NOTE, "NOTE"),
];

pub fn name(tag: Tag) -> Option<&'static str> {
    NAMES.iter().find(|(t, _)| *t == tag).map(|(_, n)| *n)
}
