//! Binary framing.
//!
//! ```text
//! frame   = len:u32 type:u8 payload[len]       (len counts payload bytes only)
//! 0x01 Hello  version:u8 n:u64 k:u8 b:u64 matrix_seed:u64 hash_seed:u64 d_bound:u8
//! 0x02 Row    index:u32 y_sum:f64 y_count:f64
//! 0x03 Done   delta_a:u32 delta_b:u32
//! 0x04 Abort  reason:u8
//! ```
//!
//! All integers little-endian, reals IEEE-754 binary64 little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::DBound;
use crate::cs_encode::MeasurementRow;

pub const TYPE_HELLO: u8 = 0x01;
pub const TYPE_ROW: u8 = 0x02;
pub const TYPE_DONE: u8 = 0x03;
pub const TYPE_ABORT: u8 = 0x04;

const HEADER_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("message type 0x{kind:02x} expects {expected} payload bytes, frame declares {got}")]
    BadLength { kind: u8, expected: usize, got: usize },
    #[error("invalid d_bound code {0}")]
    BadDBound(u8),
    #[error("invalid abort reason {0}")]
    BadReason(u8),
    #[error("row index {0} does not fit the wire format")]
    IndexOverflow(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortReason {
    OutOfOrder,
    Timeout,
    ParameterRejection,
    RowBudgetExhausted,
}

impl AbortReason {
    pub fn code(self) -> u8 {
        match self {
            AbortReason::OutOfOrder => 0,
            AbortReason::Timeout => 1,
            AbortReason::ParameterRejection => 2,
            AbortReason::RowBudgetExhausted => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => AbortReason::OutOfOrder,
            1 => AbortReason::Timeout,
            2 => AbortReason::ParameterRejection,
            3 => AbortReason::RowBudgetExhausted,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Hello {
        version: u8,
        n: u64,
        k: u8,
        b: u64,
        matrix_seed: u64,
        hash_seed: u64,
        d_bound: DBound,
    },
    Row(MeasurementRow),
    Done {
        delta_a: u32,
        delta_b: u32,
    },
    Abort(AbortReason),
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Hello { .. } => TYPE_HELLO,
            Message::Row(_) => TYPE_ROW,
            Message::Done { .. } => TYPE_DONE,
            Message::Abort(_) => TYPE_ABORT,
        }
    }

    fn payload_len(kind: u8) -> Result<usize, WireError> {
        match kind {
            TYPE_HELLO => Ok(1 + 8 + 1 + 8 + 8 + 8 + 1),
            TYPE_ROW => Ok(4 + 8 + 8),
            TYPE_DONE => Ok(4 + 4),
            TYPE_ABORT => Ok(1),
            other => Err(WireError::UnknownType(other)),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let kind = self.kind();
        let len = Self::payload_len(kind)?;
        let mut out = Vec::with_capacity(HEADER_LEN + len);
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.push(kind);
        match *self {
            Message::Hello {
                version,
                n,
                k,
                b,
                matrix_seed,
                hash_seed,
                d_bound,
            } => {
                out.push(version);
                out.extend_from_slice(&n.to_le_bytes());
                out.push(k);
                out.extend_from_slice(&b.to_le_bytes());
                out.extend_from_slice(&matrix_seed.to_le_bytes());
                out.extend_from_slice(&hash_seed.to_le_bytes());
                out.push(d_bound.code());
            }
            Message::Row(row) => {
                let index = u32::try_from(row.index).map_err(|_| WireError::IndexOverflow(row.index))?;
                out.extend_from_slice(&index.to_le_bytes());
                out.extend_from_slice(&row.y_sum.to_le_bytes());
                out.extend_from_slice(&row.y_count.to_le_bytes());
            }
            Message::Done { delta_a, delta_b } => {
                out.extend_from_slice(&delta_a.to_le_bytes());
                out.extend_from_slice(&delta_b.to_le_bytes());
            }
            Message::Abort(reason) => out.push(reason.code()),
        }
        debug_assert_eq!(out.len(), HEADER_LEN + len);
        Ok(out)
    }

    /// Decodes one frame from the front of `buf`, returning the message and
    /// the number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Message, usize), WireError> {
        if buf.len() < HEADER_LEN {
            return Err(WireError::Truncated {
                need: HEADER_LEN,
                have: buf.len(),
            });
        }
        let declared = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
        let kind = buf[4];
        let expected = Self::payload_len(kind)?;
        if declared != expected {
            return Err(WireError::BadLength {
                kind,
                expected,
                got: declared,
            });
        }
        let total = HEADER_LEN + expected;
        if buf.len() < total {
            return Err(WireError::Truncated {
                need: total,
                have: buf.len(),
            });
        }
        let msg = Self::decode_payload(kind, &buf[HEADER_LEN..total])?;
        Ok((msg, total))
    }

    fn decode_payload(kind: u8, p: &[u8]) -> Result<Message, WireError> {
        let u64_at = |o: usize| u64::from_le_bytes(p[o..o + 8].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(p[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(p[o..o + 8].try_into().unwrap());
        Ok(match kind {
            TYPE_HELLO => Message::Hello {
                version: p[0],
                n: u64_at(1),
                k: p[9],
                b: u64_at(10),
                matrix_seed: u64_at(18),
                hash_seed: u64_at(26),
                d_bound: DBound::from_code(p[34]).ok_or(WireError::BadDBound(p[34]))?,
            },
            TYPE_ROW => Message::Row(MeasurementRow {
                index: u32_at(0) as usize,
                y_sum: f64_at(4),
                y_count: f64_at(12),
            }),
            TYPE_DONE => Message::Done {
                delta_a: u32_at(0),
                delta_b: u32_at(4),
            },
            TYPE_ABORT => Message::Abort(AbortReason::from_code(p[0]).ok_or(WireError::BadReason(p[0]))?),
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&msg.encode()?)?;
    Ok(())
}

/// Reads exactly one frame. A clean EOF before the header surfaces as
/// `io::ErrorKind::UnexpectedEof`.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, WireError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let kind = header[4];
    let expected = Message::payload_len(kind)?;
    let declared = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    if declared != expected {
        return Err(WireError::BadLength {
            kind,
            expected,
            got: declared,
        });
    }
    let mut payload = vec![0u8; expected];
    r.read_exact(&mut payload)?;
    Message::decode_payload(kind, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_unknown_type_and_bad_length() {
        assert!(matches!(
            Message::decode(&[1, 0, 0, 0, 0x09, 0]),
            Err(WireError::UnknownType(9))
        ));
        assert!(matches!(
            Message::decode(&[2, 0, 0, 0, TYPE_ABORT, 0, 0]),
            Err(WireError::BadLength { .. })
        ));
        assert!(matches!(
            Message::decode(&[8, 0, 0, 0, TYPE_DONE, 1, 2]),
            Err(WireError::Truncated { need: 13, have: 7 })
        ));
        assert!(matches!(
            Message::decode(&[1, 0, 0, 0, TYPE_ABORT, 7]),
            Err(WireError::BadReason(7))
        ));
    }

    #[test]
    fn oversized_row_index_rejected() {
        let row = Message::Row(MeasurementRow {
            index: u32::MAX as usize + 1,
            y_sum: 0.0,
            y_count: 0.0,
        });
        assert!(matches!(row.encode(), Err(WireError::IndexOverflow(_))));
    }

    #[test]
    fn stream_reader_reads_back_to_back_frames() {
        let msgs = [
            Message::Abort(AbortReason::Timeout),
            Message::Done { delta_a: 3, delta_b: 4 },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut cursor = io::Cursor::new(buf);
        assert_eq!(read_message(&mut cursor).unwrap(), msgs[0]);
        assert_eq!(read_message(&mut cursor).unwrap(), msgs[1]);
        assert!(matches!(read_message(&mut cursor), Err(WireError::Io(_))));
    }

    fn any_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u8>(), any::<u64>(), any::<u8>(), any::<u64>(), any::<u64>(), any::<u64>(), any::<bool>())
                .prop_map(|(version, n, k, b, matrix_seed, hash_seed, big)| Message::Hello {
                    version,
                    n,
                    k,
                    b,
                    matrix_seed,
                    hash_seed,
                    d_bound: if big { DBound::AtMost2N } else { DBound::AtMostN },
                }),
            (any::<u32>(), any::<f64>(), any::<f64>()).prop_map(|(i, s, c)| Message::Row(MeasurementRow {
                index: i as usize,
                y_sum: s,
                y_count: c,
            })),
            (any::<u32>(), any::<u32>()).prop_map(|(a, b)| Message::Done { delta_a: a, delta_b: b }),
            (0u8..4).prop_map(|c| Message::Abort(AbortReason::from_code(c).unwrap())),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(msg in any_message()) {
            let bytes = msg.encode().unwrap();
            let (back, used) = Message::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.encode().unwrap(), bytes);
        }
    }
}
