//! Frame layout shared by every channel.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SMPA"
//! 4       1     version (1)
//! 5       1     msg_type
//! 6       8     window_id
//! 14      4     round
//! 18      4     entry_count
//! 22      12*n  entries: (slot_id u32, value u64)
//! ```
//!
//! All integers are big-endian. Entries are strictly ascending by slot id.

use std::io::{self, Read};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SMPA";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
pub const ENTRY_LEN: usize = 12;

/// Upper bound on entries per frame; larger counts are treated as corrupt input.
pub const MAX_ENTRIES: u32 = 1 << 26;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("entry count {0} exceeds limit")]
    TooManyEntries(u32),
    #[error("slot ids not strictly ascending at entry {0}")]
    Unsorted(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    InputShares = 2,
    RoundBatch = 3,
    Result = 4,
    Disqualify = 5,
    Bye = 6,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            1 => MsgType::Hello,
            2 => MsgType::InputShares,
            3 => MsgType::RoundBatch,
            4 => MsgType::Result,
            5 => MsgType::Disqualify,
            6 => MsgType::Bye,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireFrame {
    pub msg_type: MsgType,
    pub window_id: u64,
    pub round: u32,
    pub entries: Vec<(u32, u64)>,
}

impl WireFrame {
    pub fn new(msg_type: MsgType, window_id: u64, round: u32, entries: Vec<(u32, u64)>) -> Self {
        WireFrame { msg_type, window_id, round, entries }
    }

    /// Frame carrying `values` in slots `0..values.len()`.
    pub fn dense(msg_type: MsgType, window_id: u64, round: u32, values: &[u64]) -> Self {
        let entries = values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
        WireFrame::new(msg_type, window_id, round, entries)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + ENTRY_LEN * self.entries.len()
    }

    pub fn values(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|&(_, v)| v)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.window_id.to_be_bytes());
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for &(slot, value) in &self.entries {
            out.extend_from_slice(&slot.to_be_bytes());
            out.extend_from_slice(&value.to_be_bytes());
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (frame, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(WireError::TrailingBytes(bytes.len() - used));
        }
        Ok(frame)
    }

    /// Decodes the frame at the start of `bytes`, returning it with its length.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), WireError> {
        let header = parse_header(bytes)?;
        let need = HEADER_LEN + ENTRY_LEN * header.count as usize;
        if bytes.len() < need {
            return Err(WireError::Truncated { need, have: bytes.len() });
        }
        let entries = parse_entries(&bytes[HEADER_LEN..need])?;
        Ok((header.into_frame(entries), need))
    }

    /// Reads one frame from a byte stream.
    pub fn read_from<R: Read + ?Sized>(reader: &mut R) -> Result<Self, WireError> {
        let mut head = [0u8; HEADER_LEN];
        reader.read_exact(&mut head)?;
        let header = parse_header(&head)?;
        let mut body = vec![0u8; ENTRY_LEN * header.count as usize];
        reader.read_exact(&mut body)?;
        let entries = parse_entries(&body)?;
        Ok(header.into_frame(entries))
    }
}

struct Header {
    msg_type: MsgType,
    window_id: u64,
    round: u32,
    count: u32,
}

impl Header {
    fn into_frame(self, entries: Vec<(u32, u64)>) -> WireFrame {
        WireFrame::new(self.msg_type, self.window_id, self.round, entries)
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated { need: HEADER_LEN, have: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    let msg_type = MsgType::try_from(bytes[5])?;
    let window_id = u64::from_be_bytes(bytes[6..14].try_into().unwrap());
    let round = u32::from_be_bytes(bytes[14..18].try_into().unwrap());
    let count = u32::from_be_bytes(bytes[18..22].try_into().unwrap());
    if count > MAX_ENTRIES {
        return Err(WireError::TooManyEntries(count));
    }
    Ok(Header { msg_type, window_id, round, count })
}

fn parse_entries(body: &[u8]) -> Result<Vec<(u32, u64)>, WireError> {
    let mut entries = Vec::with_capacity(body.len() / ENTRY_LEN);
    for (i, chunk) in body.chunks_exact(ENTRY_LEN).enumerate() {
        let slot = u32::from_be_bytes(chunk[0..4].try_into().unwrap());
        let value = u64::from_be_bytes(chunk[4..12].try_into().unwrap());
        if let Some(&(prev, _)) = entries.last() {
            if slot <= prev {
                return Err(WireError::Unsorted(i));
            }
        }
        entries.push((slot, value));
    }
    Ok(entries)
}

/// Which side of the system a connection belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Input = 0,
    Privacy = 1,
}

/// Session parameters pinned by the HELLO exchange.
///
/// Encoded as entries with fixed tags: 0 role, 1 peer id, 2 p, 3 m, 4 n,
/// 5 window seconds, 6 protocol id, 7..=10 the SHA-256 config hash as four
/// big-endian u64 words. The protocol version travels in the frame header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub role: Role,
    pub peer_id: u32,
    pub p: u64,
    pub m: u32,
    pub n: u32,
    pub window_secs: u64,
    pub protocol: u8,
    pub config_hash: [u8; 32],
}

impl Hello {
    pub fn to_frame(&self) -> WireFrame {
        let mut values = vec![
            self.role as u64,
            self.peer_id as u64,
            self.p,
            self.m as u64,
            self.n as u64,
            self.window_secs,
            self.protocol as u64,
        ];
        values.extend(self.config_hash.chunks_exact(8).map(|c| u64::from_be_bytes(c.try_into().unwrap())));
        WireFrame::dense(MsgType::Hello, 0, 0, &values)
    }

    pub fn from_frame(frame: &WireFrame) -> Option<Hello> {
        if frame.msg_type != MsgType::Hello || frame.entries.len() != 11 {
            return None;
        }
        if frame.entries.iter().enumerate().any(|(i, &(slot, _))| slot != i as u32) {
            return None;
        }
        let v: Vec<u64> = frame.values().collect();
        let role = match v[0] {
            0 => Role::Input,
            1 => Role::Privacy,
            _ => return None,
        };
        let mut config_hash = [0u8; 32];
        for (i, word) in v[7..11].iter().enumerate() {
            config_hash[i * 8..i * 8 + 8].copy_from_slice(&word.to_be_bytes());
        }
        Some(Hello {
            role,
            peer_id: u32::try_from(v[1]).ok()?,
            p: v[2],
            m: u32::try_from(v[3]).ok()?,
            n: u32::try_from(v[4]).ok()?,
            window_secs: v[5],
            protocol: u8::try_from(v[6]).ok()?,
            config_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_round_batch() {
        let frame = WireFrame::new(MsgType::RoundBatch, 7, 3, vec![(0, 0x0102_0304_0506_0708), (5, 42)]);
        let bytes = frame.encode();
        let expected = hex::decode(concat!(
            "534d5041",
            "01",
            "03",
            "0000000000000007",
            "00000003",
            "00000002",
            "00000000",
            "0102030405060708",
            "00000005",
            "000000000000002a",
        ))
        .unwrap();
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), 22 + 12 * 2);
        assert_eq!(WireFrame::decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn empty_frame_is_header_only() {
        let frame = WireFrame::new(MsgType::RoundBatch, 1, 9, vec![]);
        assert_eq!(frame.encode().len(), HEADER_LEN);
        assert_eq!(WireFrame::decode(&frame.encode()).unwrap(), frame);
    }

    #[test]
    fn rejects_corruption() {
        let good = WireFrame::dense(MsgType::InputShares, 2, 0, &[1, 2, 3]).encode();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(WireFrame::decode(&bad), Err(WireError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(WireFrame::decode(&bad), Err(WireError::UnsupportedVersion(2))));

        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(WireFrame::decode(&bad), Err(WireError::UnknownType(9))));

        assert!(matches!(WireFrame::decode(&good[..good.len() - 1]), Err(WireError::Truncated { .. })));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(WireFrame::decode(&long), Err(WireError::TrailingBytes(1))));

        let unsorted = WireFrame::new(MsgType::Result, 0, 0, vec![(3, 1), (3, 2)]).encode();
        assert!(matches!(WireFrame::decode(&unsorted), Err(WireError::Unsorted(1))));
    }

    #[test]
    fn hello_roundtrip() {
        let hello = Hello {
            role: Role::Privacy,
            peer_id: 2,
            p: 13,
            m: 3,
            n: 5,
            window_secs: 300,
            protocol: 4,
            config_hash: std::array::from_fn(|i| i as u8),
        };
        let frame = hello.to_frame();
        assert_eq!(frame.entries.len(), 11);
        let decoded = WireFrame::decode(&frame.encode()).unwrap();
        assert_eq!(Hello::from_frame(&decoded), Some(hello));
    }

    proptest! {
        #[test]
        fn encode_decode_identity(
            window in any::<u64>(),
            round in any::<u32>(),
            mut slots in proptest::collection::btree_set(any::<u32>(), 0..64),
            seed in any::<u64>(),
        ) {
            let entries: Vec<(u32, u64)> = std::mem::take(&mut slots)
                .into_iter()
                .enumerate()
                .map(|(i, s)| (s, seed.wrapping_mul(i as u64 + 1)))
                .collect();
            let frame = WireFrame::new(MsgType::RoundBatch, window, round, entries);
            let bytes = frame.encode();
            prop_assert_eq!(bytes.len(), frame.encoded_len());
            prop_assert_eq!(&WireFrame::decode(&bytes).unwrap(), &frame);
            let mut cursor = std::io::Cursor::new(bytes);
            prop_assert_eq!(WireFrame::read_from(&mut cursor).unwrap(), frame);
        }
    }
}
