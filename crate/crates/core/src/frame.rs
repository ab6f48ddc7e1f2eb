//! Byte-exact frame codec.
//!
//! Wire layout:
//!
//! ```text
//! [relay_depth][address x6][length][payload x length][sum][xor]
//! ```
//!
//! Both trailer bytes are computed over everything from `relay_depth`
//! through the last payload byte: `sum` is the byte sum modulo 256 and
//! `xor` the bitwise XOR fold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Fixed bytes around the payload: relay, 6 address bytes, length, two checks.
pub const FRAME_OVERHEAD: usize = 10;
pub const MAX_PAYLOAD: usize = 255;

const LENGTH_OFFSET: usize = 7;
const PAYLOAD_OFFSET: usize = 8;

/// Six-octet node address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 6]);

impl Address {
    pub const fn new(bytes: [u8; 6]) -> Self {
        Address(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 6] {
        &self.0
    }

    pub fn matches(&self, other: &Address) -> bool {
        address_matches(self, other)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&to_hex_line(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid address {0:?}: expected 6 space-separated hex octets")]
pub struct AddressParseError(pub String);

impl FromStr for Address {
    type Err = AddressParseError;

    /// Accepts `"64 49 46 68 00 53"`, with `:` or `-` also allowed as separators.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AddressParseError(s.to_string());
        let octets: Vec<u8> = s
            .split(|c: char| c.is_whitespace() || c == ':' || c == '-')
            .filter(|t| !t.is_empty())
            .map(|t| u8::from_str_radix(t, 16))
            .collect::<Result<_, _>>()
            .map_err(|_| err())?;
        let bytes: [u8; 6] = octets.try_into().map_err(|_| err())?;
        Ok(Address(bytes))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which frame invariant a decode (or construction) failed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodecErrorKind {
    Truncated,
    LengthMismatch,
    SumCheckFailed,
    XorCheckFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{kind:?} at byte {offset}")]
pub struct CodecError {
    pub kind: CodecErrorKind,
    /// Byte index where the problem was detected.
    pub offset: usize,
}

impl CodecError {
    fn new(kind: CodecErrorKind, offset: usize) -> Self {
        CodecError { kind, offset }
    }
}

/// A protocol frame. The length and both check bytes are derived from the
/// other fields, so a constructed `Frame` always satisfies its invariants.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    relay_depth: u8,
    address: Address,
    payload: Vec<u8>,
}

impl Frame {
    /// Fails with `LengthMismatch` if the payload does not fit the one-octet
    /// length field.
    pub fn new(relay_depth: u8, address: Address, payload: Vec<u8>) -> Result<Self, CodecError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(CodecError::new(
                CodecErrorKind::LengthMismatch,
                LENGTH_OFFSET,
            ));
        }
        Ok(Frame {
            relay_depth,
            address,
            payload,
        })
    }

    pub fn relay_depth(&self) -> u8 {
        self.relay_depth
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn length(&self) -> u8 {
        self.payload.len() as u8
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }

    fn header_and_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.relay_depth);
        out.extend_from_slice(&self.address.0);
        out.push(self.length());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn sum_check(&self) -> u8 {
        compute_checks(&self.header_and_payload()).0
    }

    pub fn xor_check(&self) -> u8 {
        compute_checks(&self.header_and_payload()).1
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_frame(self)
    }
}

/// Byte sum modulo 256 and XOR fold over `span`.
pub fn compute_checks(span: &[u8]) -> (u8, u8) {
    span.iter()
        .fold((0u8, 0u8), |(sum, xor), &b| (sum.wrapping_add(b), xor ^ b))
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = frame.header_and_payload();
    let (sum, xor) = compute_checks(&out);
    out.push(sum);
    out.push(xor);
    out
}

/// Decodes one frame occupying exactly `bytes`.
///
/// Errors are checked in order: truncation, surplus bytes, sum, xor.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, CodecError> {
    if bytes.len() < FRAME_OVERHEAD {
        return Err(CodecError::new(CodecErrorKind::Truncated, bytes.len()));
    }
    let length = bytes[LENGTH_OFFSET] as usize;
    let total = FRAME_OVERHEAD + length;
    if bytes.len() < total {
        return Err(CodecError::new(CodecErrorKind::Truncated, bytes.len()));
    }
    if bytes.len() > total {
        return Err(CodecError::new(CodecErrorKind::LengthMismatch, total));
    }

    let sum_at = total - 2;
    let (sum, xor) = compute_checks(&bytes[..sum_at]);
    if sum != bytes[sum_at] {
        return Err(CodecError::new(CodecErrorKind::SumCheckFailed, sum_at));
    }
    if xor != bytes[sum_at + 1] {
        return Err(CodecError::new(CodecErrorKind::XorCheckFailed, sum_at + 1));
    }

    let mut address = [0u8; 6];
    address.copy_from_slice(&bytes[1..LENGTH_OFFSET]);
    Ok(Frame {
        relay_depth: bytes[0],
        address: Address(address),
        payload: bytes[PAYLOAD_OFFSET..sum_at].to_vec(),
    })
}

pub fn address_matches(frame_addr: &Address, node_addr: &Address) -> bool {
    frame_addr.0 == node_addr.0
}

/// Lowercase, space-separated hex, e.g. `"01 64 49"`.
pub fn to_hex_line(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 3);
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: invalid hex token {token:?}")]
pub struct HexParseError {
    pub line: usize,
    pub token: String,
}

pub fn parse_hex_line(line: &str) -> Result<Vec<u8>, HexParseError> {
    line.split_whitespace()
        .map(|t| {
            if t.len() != 2 {
                return Err(HexParseError {
                    line: 1,
                    token: t.to_string(),
                });
            }
            u8::from_str_radix(t, 16).map_err(|_| HexParseError {
                line: 1,
                token: t.to_string(),
            })
        })
        .collect()
}

/// Parses a hex-dump test-vector file: one frame per line. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_hex_dump(text: &str) -> Result<Vec<Vec<u8>>, HexParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| parse_hex_line(l).map_err(|e| HexParseError { line: i + 1, ..e }))
        .collect()
}

pub fn write_hex_dump<'a>(frames: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&to_hex_line(f));
        out.push('\n');
    }
    out
}
