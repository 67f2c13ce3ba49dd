//! Chunk and packet layout with a fixed-size, big-endian codec.
//!
//! ```text
//! packet header (12 bytes)
//!   0..4   session id
//!   4      flags   0x01 established, 0x02 sender has time-critical traffic
//!   5..8   reserved (zero)
//!   8..12  sender timestamp, microseconds, wrapping
//! chunk header (10 bytes), repeated
//!   0      type
//!   1..3   body length
//!   3      flags   data: bits 0-1 fragment position, bit 2 time-critical
//!   4..6   flow id
//!   6..10  sequence number (data), cumulative ack (ack), tag / session id (handshake)
//! ```
//!
//! Chunk bodies: data carries the payload; ack carries the advertised buffer
//! (4 bytes) followed by 8 bytes per gap range; handshake chunks carry the
//! endpoint discriminator, advertised receive buffer and a 64-byte opaque cookie
//! as listed on each type.

use thiserror::Error;

pub const PACKET_HEADER: usize = 12;
pub const CHUNK_HEADER: usize = 10;
pub const COOKIE_LEN: usize = 64;
pub const ACK_FIXED_BODY: usize = 4;
pub const ACK_GAP_LEN: usize = 8;

const FLAG_ESTABLISHED: u8 = 0x01;
const FLAG_TIME_CRITICAL: u8 = 0x02;
const DATA_FLAG_TIME_CRITICAL: u8 = 0x04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChunkKind {
    IHello,
    RHello,
    IIKeying,
    RIKeying,
    Data,
    Ack,
    Close,
}

impl ChunkKind {
    pub const ALL: [ChunkKind; 7] = [
        ChunkKind::IHello,
        ChunkKind::RHello,
        ChunkKind::IIKeying,
        ChunkKind::RIKeying,
        ChunkKind::Data,
        ChunkKind::Ack,
        ChunkKind::Close,
    ];

    pub fn code(self) -> u8 {
        match self {
            ChunkKind::IHello => 0x30,
            ChunkKind::RHello => 0x70,
            ChunkKind::IIKeying => 0x38,
            ChunkKind::RIKeying => 0x78,
            ChunkKind::Data => 0x10,
            ChunkKind::Ack => 0x51,
            ChunkKind::Close => 0x0c,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn is_handshake(self) -> bool {
        matches!(
            self,
            ChunkKind::IHello | ChunkKind::RHello | ChunkKind::IIKeying | ChunkKind::RIKeying
        )
    }
}

/// Fixed per-chunk header cost; identical for every kind.
pub fn chunk_overhead(_kind: ChunkKind) -> usize {
    CHUNK_HEADER
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fragment {
    Whole,
    First,
    Middle,
    Last,
}

impl Fragment {
    fn bits(self) -> u8 {
        match self {
            Fragment::Whole => 0,
            Fragment::First => 1,
            Fragment::Middle => 2,
            Fragment::Last => 3,
        }
    }

    fn from_bits(b: u8) -> Self {
        match b & 0x03 {
            0 => Fragment::Whole,
            1 => Fragment::First,
            2 => Fragment::Middle,
            _ => Fragment::Last,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataChunk {
    pub flow_id: u16,
    pub seq: u32,
    pub frag: Fragment,
    pub time_critical: bool,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AckChunk {
    pub flow_id: u16,
    pub cum_ack: u32,
    /// Inclusive ranges received above `cum_ack`, ascending and disjoint.
    pub gaps: Vec<(u32, u32)>,
    pub adv_buffer: u32,
}

impl AckChunk {
    pub fn covers(&self, seq: u32) -> bool {
        seq <= self.cum_ack || self.gaps.iter().any(|&(a, b)| a <= seq && seq <= b)
    }

    pub fn highest(&self) -> u32 {
        self.gaps.last().map_or(self.cum_ack, |&(_, b)| b)
    }

    fn gaps_valid(&self) -> bool {
        let mut floor = self.cum_ack as u64 + 1;
        for &(a, b) in &self.gaps {
            if (a as u64) < floor || a > b {
                return false;
            }
            floor = b as u64 + 2;
        }
        true
    }
}

/// Initiator hello: carries the discriminator of the endpoint it wants to reach.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IHello {
    pub target_epd: u32,
    pub tag: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RHello {
    pub tag: u32,
    pub cookie: [u8; COOKIE_LEN],
}

/// Carries the session id the initiator wants to receive on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IIKeying {
    pub initiator_session: u32,
    pub initiator_epd: u32,
    pub rcv_buffer: u32,
    pub cookie: [u8; COOKIE_LEN],
}

/// Carries the session id the responder wants to receive on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RIKeying {
    pub responder_session: u32,
    pub rcv_buffer: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Chunk {
    IHello(IHello),
    RHello(RHello),
    IIKeying(IIKeying),
    RIKeying(RIKeying),
    Data(DataChunk),
    Ack(AckChunk),
    Close,
}

impl Chunk {
    pub fn kind(&self) -> ChunkKind {
        match self {
            Chunk::IHello(_) => ChunkKind::IHello,
            Chunk::RHello(_) => ChunkKind::RHello,
            Chunk::IIKeying(_) => ChunkKind::IIKeying,
            Chunk::RIKeying(_) => ChunkKind::RIKeying,
            Chunk::Data(_) => ChunkKind::Data,
            Chunk::Ack(_) => ChunkKind::Ack,
            Chunk::Close => ChunkKind::Close,
        }
    }

    pub fn body_len(&self) -> usize {
        match self {
            Chunk::IHello(_) => 4,
            Chunk::RHello(_) => COOKIE_LEN,
            Chunk::IIKeying(_) => 8 + COOKIE_LEN,
            Chunk::RIKeying(_) => 4,
            Chunk::Data(d) => d.payload.len(),
            Chunk::Ack(a) => ACK_FIXED_BODY + ACK_GAP_LEN * a.gaps.len(),
            Chunk::Close => 0,
        }
    }

    pub fn encoded_len(&self) -> usize {
        chunk_overhead(self.kind()) + self.body_len()
    }

    fn header_fields(&self) -> (u8, u16, u32) {
        match self {
            Chunk::IHello(h) => (0, 0, h.tag),
            Chunk::RHello(h) => (0, 0, h.tag),
            Chunk::IIKeying(k) => (0, 0, k.initiator_session),
            Chunk::RIKeying(k) => (0, 0, k.responder_session),
            Chunk::Data(d) => {
                let tc = if d.time_critical { DATA_FLAG_TIME_CRITICAL } else { 0 };
                (d.frag.bits() | tc, d.flow_id, d.seq)
            }
            Chunk::Ack(a) => (0, a.flow_id, a.cum_ack),
            Chunk::Close => (0, 0, 0),
        }
    }

    fn write_body(&self, out: &mut Vec<u8>) {
        match self {
            Chunk::IHello(h) => out.extend_from_slice(&h.target_epd.to_be_bytes()),
            Chunk::RHello(h) => out.extend_from_slice(&h.cookie),
            Chunk::IIKeying(k) => {
                out.extend_from_slice(&k.initiator_epd.to_be_bytes());
                out.extend_from_slice(&k.rcv_buffer.to_be_bytes());
                out.extend_from_slice(&k.cookie);
            }
            Chunk::RIKeying(k) => out.extend_from_slice(&k.rcv_buffer.to_be_bytes()),
            Chunk::Data(d) => out.extend_from_slice(&d.payload),
            Chunk::Ack(a) => {
                out.extend_from_slice(&a.adv_buffer.to_be_bytes());
                for &(from, to) in &a.gaps {
                    out.extend_from_slice(&from.to_be_bytes());
                    out.extend_from_slice(&to.to_be_bytes());
                }
            }
            Chunk::Close => {}
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketMode {
    Handshake,
    Established,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub session_id: u32,
    pub mode: PacketMode,
    pub time_critical: bool,
    pub timestamp: u32,
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("packet has no chunks")]
    Empty,
    #[error("encoded packet is {size} bytes, limit {limit}")]
    Oversize { size: usize, limit: usize },
    #[error("chunk body of {0} bytes does not fit the length field")]
    BodyTooLong(usize),
    #[error("data chunk with empty payload")]
    EmptyPayload,
    #[error("ack gap ranges overlap, touch or fall below the cumulative ack")]
    InvalidGaps,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("buffer of {0} bytes is shorter than a packet header")]
    Truncated(usize),
    #[error("chunk at offset {offset} claims {claimed} body bytes, {available} available")]
    LengthOverrun {
        offset: usize,
        claimed: usize,
        available: usize,
    },
    #[error("{kind:?} chunk body has length {len}")]
    BadBody { kind: ChunkKind, len: usize },
    #[error("packet contains no known chunks")]
    NoChunks,
    #[error("invalid ack gap ranges")]
    InvalidGaps,
}

impl Packet {
    pub fn encoded_len(&self) -> usize {
        PACKET_HEADER + self.chunks.iter().map(Chunk::encoded_len).sum::<usize>()
    }

    pub fn encode(&self, limit: usize) -> Result<Vec<u8>, EncodeError> {
        if self.chunks.is_empty() {
            return Err(EncodeError::Empty);
        }
        let size = self.encoded_len();
        if size > limit {
            return Err(EncodeError::Oversize { size, limit });
        }
        let mut out = Vec::with_capacity(size);
        out.extend_from_slice(&self.session_id.to_be_bytes());
        let mut flags = 0;
        if self.mode == PacketMode::Established {
            flags |= FLAG_ESTABLISHED;
        }
        if self.time_critical {
            flags |= FLAG_TIME_CRITICAL;
        }
        out.push(flags);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        for c in &self.chunks {
            let body = c.body_len();
            let body_len = u16::try_from(body).map_err(|_| EncodeError::BodyTooLong(body))?;
            match c {
                Chunk::Data(d) if d.payload.is_empty() => return Err(EncodeError::EmptyPayload),
                Chunk::Ack(a) if !a.gaps_valid() => return Err(EncodeError::InvalidGaps),
                _ => {}
            }
            let (flags, flow, seq) = c.header_fields();
            out.push(c.kind().code());
            out.extend_from_slice(&body_len.to_be_bytes());
            out.push(flags);
            out.extend_from_slice(&flow.to_be_bytes());
            out.extend_from_slice(&seq.to_be_bytes());
            c.write_body(&mut out);
        }
        debug_assert_eq!(out.len(), size);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Packet, DecodeError> {
        if buf.len() < PACKET_HEADER {
            return Err(DecodeError::Truncated(buf.len()));
        }
        let session_id = be32(&buf[0..4]);
        let flags = buf[4];
        let timestamp = be32(&buf[8..12]);
        let mode = if flags & FLAG_ESTABLISHED != 0 {
            PacketMode::Established
        } else {
            PacketMode::Handshake
        };

        let mut chunks = Vec::new();
        let mut off = PACKET_HEADER;
        while off < buf.len() {
            if buf.len() - off < CHUNK_HEADER {
                return Err(DecodeError::LengthOverrun {
                    offset: off,
                    claimed: CHUNK_HEADER,
                    available: buf.len() - off,
                });
            }
            let h = &buf[off..off + CHUNK_HEADER];
            let body_len = u16::from_be_bytes([h[1], h[2]]) as usize;
            let body_start = off + CHUNK_HEADER;
            let available = buf.len() - body_start;
            if body_len > available {
                return Err(DecodeError::LengthOverrun {
                    offset: off,
                    claimed: body_len,
                    available,
                });
            }
            let body = &buf[body_start..body_start + body_len];
            off = body_start + body_len;
            let Some(kind) = ChunkKind::from_code(h[0]) else {
                continue;
            };
            let chunk_flags = h[3];
            let flow_id = u16::from_be_bytes([h[4], h[5]]);
            let seq = be32(&h[6..10]);
            chunks.push(decode_chunk(kind, chunk_flags, flow_id, seq, body)?);
        }
        if chunks.is_empty() {
            return Err(DecodeError::NoChunks);
        }
        Ok(Packet {
            session_id,
            mode,
            time_critical: flags & FLAG_TIME_CRITICAL != 0,
            timestamp,
            chunks,
        })
    }
}

fn decode_chunk(kind: ChunkKind, flags: u8, flow_id: u16, seq: u32, body: &[u8]) -> Result<Chunk, DecodeError> {
    let bad = || DecodeError::BadBody { kind, len: body.len() };
    let cookie = |b: &[u8]| -> [u8; COOKIE_LEN] { b.try_into().expect("length checked") };
    Ok(match kind {
        ChunkKind::IHello => {
            if body.len() != 4 {
                return Err(bad());
            }
            Chunk::IHello(IHello {
                target_epd: be32(body),
                tag: seq,
            })
        }
        ChunkKind::RHello => {
            if body.len() != COOKIE_LEN {
                return Err(bad());
            }
            Chunk::RHello(RHello {
                tag: seq,
                cookie: cookie(body),
            })
        }
        ChunkKind::IIKeying => {
            if body.len() != 8 + COOKIE_LEN {
                return Err(bad());
            }
            Chunk::IIKeying(IIKeying {
                initiator_session: seq,
                initiator_epd: be32(&body[0..4]),
                rcv_buffer: be32(&body[4..8]),
                cookie: cookie(&body[8..]),
            })
        }
        ChunkKind::RIKeying => {
            if body.len() != 4 {
                return Err(bad());
            }
            Chunk::RIKeying(RIKeying {
                responder_session: seq,
                rcv_buffer: be32(body),
            })
        }
        ChunkKind::Data => {
            if body.is_empty() {
                return Err(bad());
            }
            Chunk::Data(DataChunk {
                flow_id,
                seq,
                frag: Fragment::from_bits(flags),
                time_critical: flags & DATA_FLAG_TIME_CRITICAL != 0,
                payload: body.to_vec(),
            })
        }
        ChunkKind::Ack => {
            if body.len() < ACK_FIXED_BODY || !(body.len() - ACK_FIXED_BODY).is_multiple_of(ACK_GAP_LEN) {
                return Err(bad());
            }
            let gaps = body[ACK_FIXED_BODY..]
                .chunks_exact(ACK_GAP_LEN)
                .map(|g| (be32(&g[0..4]), be32(&g[4..8])))
                .collect();
            let ack = AckChunk {
                flow_id,
                cum_ack: seq,
                gaps,
                adv_buffer: be32(&body[0..4]),
            };
            if !ack.gaps_valid() {
                return Err(DecodeError::InvalidGaps);
            }
            Chunk::Ack(ack)
        }
        ChunkKind::Close => {
            if !body.is_empty() {
                return Err(bad());
            }
            Chunk::Close
        }
    })
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}
