//! Binary codec for bundled messages.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header   sender u16 | parent u16 | seq u16 | count u8
//! sync     head_sent u64 | node_received u64 | node_sent u64   (microsecond ticks)
//! entries  count x ( origin u16 | seq u16 | captured u64 | value u16 )
//! ```
//!
//! Decoding is strict: short buffers and trailing bytes are both rejected.

use thiserror::Error;

use crate::model::NodeId;
use crate::sync::SyncSample;
use crate::time::SimTime;

pub const HEADER_LEN: usize = 7;
pub const SYNC_LEN: usize = 24;
pub const ENTRY_LEN: usize = 14;
pub const MAX_ENTRIES: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("buffer truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{extra} trailing bytes after the last entry")]
    TrailingBytes { extra: usize },
    #[error("entry count must be between 1 and 255, got {0}")]
    CountOutOfRange(usize),
}

/// One sensor reading riding a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeasurementRecord {
    pub origin: NodeId,
    pub seq: u16,
    /// Capture timestamp on the origin node's clock.
    pub captured: SimTime,
    pub value: u16,
}

/// A bundled upstream message: routing header, the sender's sync triple,
/// and the measurement entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundledMessage {
    pub sender: NodeId,
    pub parent: NodeId,
    pub seq: u16,
    pub sync: SyncSample,
    pub entries: Vec<MeasurementRecord>,
}

impl BundledMessage {
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + SYNC_LEN + self.entries.len() * ENTRY_LEN
    }
}

pub fn encode(msg: &BundledMessage) -> Result<Vec<u8>, WireError> {
    let count = msg.entries.len();
    if count == 0 || count > MAX_ENTRIES {
        return Err(WireError::CountOutOfRange(count));
    }
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&msg.sender.0.to_le_bytes());
    out.extend_from_slice(&msg.parent.0.to_le_bytes());
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.push(count as u8);
    out.extend_from_slice(&msg.sync.head_sent.as_micros().to_le_bytes());
    out.extend_from_slice(&msg.sync.node_received.as_micros().to_le_bytes());
    out.extend_from_slice(&msg.sync.node_sent.as_micros().to_le_bytes());
    for e in &msg.entries {
        out.extend_from_slice(&e.origin.0.to_le_bytes());
        out.extend_from_slice(&e.seq.to_le_bytes());
        out.extend_from_slice(&e.captured.as_micros().to_le_bytes());
        out.extend_from_slice(&e.value.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(buf: &[u8]) -> Result<BundledMessage, WireError> {
    let need = |needed: usize| -> Result<(), WireError> {
        if buf.len() < needed {
            Err(WireError::Truncated {
                needed,
                have: buf.len(),
            })
        } else {
            Ok(())
        }
    };
    need(HEADER_LEN + SYNC_LEN)?;

    let u16_at = |off: usize| u16::from_le_bytes([buf[off], buf[off + 1]]);
    let u64_at = |off: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&buf[off..off + 8]);
        u64::from_le_bytes(b)
    };

    let sender = NodeId(u16_at(0));
    let parent = NodeId(u16_at(2));
    let seq = u16_at(4);
    let count = buf[6] as usize;
    if count == 0 {
        return Err(WireError::CountOutOfRange(0));
    }
    let sync = SyncSample {
        head_sent: SimTime(u64_at(7)),
        node_received: SimTime(u64_at(15)),
        node_sent: SimTime(u64_at(23)),
    };

    let total = HEADER_LEN + SYNC_LEN + count * ENTRY_LEN;
    need(total)?;
    if buf.len() > total {
        return Err(WireError::TrailingBytes {
            extra: buf.len() - total,
        });
    }

    let mut entries = Vec::with_capacity(count);
    let mut off = HEADER_LEN + SYNC_LEN;
    for _ in 0..count {
        entries.push(MeasurementRecord {
            origin: NodeId(u16_at(off)),
            seq: u16_at(off + 2),
            captured: SimTime(u64_at(off + 4)),
            value: u16_at(off + 12),
        });
        off += ENTRY_LEN;
    }

    Ok(BundledMessage {
        sender,
        parent,
        seq,
        sync,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_message() -> BundledMessage {
        BundledMessage {
            sender: NodeId(2),
            parent: NodeId(1),
            seq: 77,
            sync: SyncSample {
                head_sent: SimTime(1_000_000),
                node_received: SimTime(1_000_123),
                node_sent: SimTime(3_999_456),
            },
            entries: vec![
                MeasurementRecord {
                    origin: NodeId(4),
                    seq: 9,
                    captured: SimTime(3_000_000),
                    value: 0xBEEF,
                },
                MeasurementRecord {
                    origin: NodeId(2),
                    seq: 10,
                    captured: SimTime(3_500_000),
                    value: 0x1234,
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let msg = sample_message();
        let bytes = encode(&msg).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + SYNC_LEN + 2 * ENTRY_LEN);
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = encode(&sample_message()).unwrap();
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "prefix of {cut} accepted");
        }
        let mut extended = bytes.clone();
        extended.push(0);
        assert_eq!(
            decode(&extended).unwrap_err(),
            WireError::TrailingBytes { extra: 1 }
        );
    }

    #[test]
    fn rejects_empty_bundle() {
        let mut msg = sample_message();
        msg.entries.clear();
        assert_eq!(encode(&msg).unwrap_err(), WireError::CountOutOfRange(0));
    }
}
