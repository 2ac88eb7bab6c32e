//! Message types and their bit-exact encoding.
//!
//! Frame layout, all integers little-endian:
//!
//! ```text
//! length: u32 (bytes that follow, excluding itself)
//! type:   u8
//! session: u16
//! round:  u32
//! payload
//! ```
//!
//! Bit-vector payloads (parities and masks) are `count: u32` followed by
//! `ceil(count / 8)` bytes packed LSB-first; unused high bits are zero.

use std::io::Read;

use crate::bitframe::BitFrame;
use crate::error::{Error, Result};
use crate::protocol::schedule::ScheduleVariant;

pub const PROTOCOL_VERSION: u16 = 1;

/// Largest payload the encoder accepts.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 31;

const HEADER_BYTES: usize = 1 + 2 + 4;

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageType {
    Hello = 1,
    Schedule = 2,
    RoundParities = 3,
    MismatchMask = 4,
    HalfParities = 5,
    DirectionMask = 6,
    Digest = 7,
    Abort = 8,
}

impl TryFrom<u8> for MessageType {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Self::Hello,
            2 => Self::Schedule,
            3 => Self::RoundParities,
            4 => Self::MismatchMask,
            5 => Self::HalfParities,
            6 => Self::DirectionMask,
            7 => Self::Digest,
            8 => Self::Abort,
            other => return Err(Error::Decode(format!("unknown message type {other}"))),
        })
    }
}

/// Session parameters proposed by the correcting side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub version: u16,
    pub n: u64,
    /// Estimated QBER in parts per million.
    pub qber_ppm: u32,
    pub variant: ScheduleVariant,
    pub identity_first_round: bool,
    pub session_seed: u128,
}

/// The reference side's acceptance: the echoed parameters and the derived block sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleAck {
    pub params: Hello,
    pub sizes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abort {
    pub code: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Hello(Hello),
    Schedule(ScheduleAck),
    /// Correcting side's parities of blocks or half-blocks.
    RoundParities(BitFrame),
    MismatchMask(BitFrame),
    HalfParities(BitFrame),
    /// Bit `i` set: the error of active block `i` lies in its second half.
    DirectionMask(BitFrame),
    Digest(u64),
    Abort(Abort),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub session: u16,
    pub round: u32,
    pub body: Body,
}

impl Message {
    pub fn new(session: u16, round: u32, body: Body) -> Self {
        Message {
            session,
            round,
            body,
        }
    }

    pub fn message_type(&self) -> MessageType {
        match self.body {
            Body::Hello(_) => MessageType::Hello,
            Body::Schedule(_) => MessageType::Schedule,
            Body::RoundParities(_) => MessageType::RoundParities,
            Body::MismatchMask(_) => MessageType::MismatchMask,
            Body::HalfParities(_) => MessageType::HalfParities,
            Body::DirectionMask(_) => MessageType::DirectionMask,
            Body::Digest(_) => MessageType::Digest,
            Body::Abort(_) => MessageType::Abort,
        }
    }

    /// Number of parity bits this message discloses.
    ///
    /// Only the correcting side's parity lists count; each one is answered by a
    /// mask revealing exactly one reference-side parity per entry.
    pub fn disclosed_parities(&self) -> usize {
        match &self.body {
            Body::RoundParities(bits) | Body::HalfParities(bits) => bits.len(),
            _ => 0,
        }
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let mut out = vec![0u8; 4];
    out.push(msg.message_type() as u8);
    out.extend_from_slice(&msg.session.to_le_bytes());
    out.extend_from_slice(&msg.round.to_le_bytes());
    match &msg.body {
        Body::Hello(h) => put_hello(&mut out, h),
        Body::Schedule(s) => {
            put_hello(&mut out, &s.params);
            let count = u32::try_from(s.sizes.len())
                .map_err(|_| Error::contract("too many schedule entries"))?;
            out.extend_from_slice(&count.to_le_bytes());
            for size in &s.sizes {
                out.extend_from_slice(&size.to_le_bytes());
            }
        }
        Body::RoundParities(bits)
        | Body::MismatchMask(bits)
        | Body::HalfParities(bits)
        | Body::DirectionMask(bits) => {
            let count = u32::try_from(bits.len())
                .map_err(|_| Error::contract("bit payload exceeds u32 count"))?;
            out.extend_from_slice(&count.to_le_bytes());
            out.extend_from_slice(bits.as_bytes());
        }
        Body::Digest(d) => out.extend_from_slice(&d.to_le_bytes()),
        Body::Abort(a) => {
            let reason = a.reason.as_bytes();
            let reason = &reason[..reason.len().min(u16::MAX as usize)];
            out.push(a.code);
            out.extend_from_slice(&(reason.len() as u16).to_le_bytes());
            out.extend_from_slice(reason);
        }
    }
    let body_len = out.len() - 4;
    if body_len - HEADER_BYTES > MAX_PAYLOAD_BYTES {
        return Err(Error::contract("payload exceeds 2^31 bytes"));
    }
    out[..4].copy_from_slice(&(body_len as u32).to_le_bytes());
    Ok(out)
}

fn put_hello(out: &mut Vec<u8>, h: &Hello) {
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&h.n.to_le_bytes());
    out.extend_from_slice(&h.qber_ppm.to_le_bytes());
    out.push(h.variant as u8);
    out.push(h.identity_first_round as u8);
    out.extend_from_slice(&h.session_seed.to_le_bytes());
}

/// Decodes one complete frame. `bytes` must hold exactly one message.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < 4 {
        return Err(Error::Decode("truncated length prefix".into()));
    }
    let declared = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if declared != bytes.len() - 4 {
        return Err(Error::Decode(format!(
            "length prefix {declared} but {} bytes follow",
            bytes.len() - 4
        )));
    }
    decode_body(&bytes[4..])
}

/// Reads one raw length-prefixed frame (prefix included) from a stream.
///
/// Returns `Ok(None)` on a clean end of stream before the first byte.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match reader.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::PeerClosed),
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let declared = u32::from_le_bytes(len) as usize;
    if !(HEADER_BYTES..=MAX_PAYLOAD_BYTES + HEADER_BYTES).contains(&declared) {
        return Err(Error::Decode(format!("implausible frame length {declared}")));
    }
    let mut frame = vec![0u8; declared + 4];
    frame[..4].copy_from_slice(&len);
    reader.read_exact(&mut frame[4..]).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::PeerClosed,
        _ => e.into(),
    })?;
    Ok(Some(frame))
}

/// Reads and decodes one message; `Ok(None)` on clean end of stream.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<(Message, usize)>> {
    match read_frame(reader)? {
        Some(frame) => Ok(Some((decode(&frame)?, frame.len()))),
        None => Ok(None),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::Decode("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn bits(&mut self) -> Result<BitFrame> {
        let count = self.u32()? as usize;
        let bytes = self.take(count.div_ceil(8))?.to_vec();
        BitFrame::from_bytes(bytes, count).map_err(|e| Error::Decode(e.to_string()))
    }

    fn hello(&mut self) -> Result<Hello> {
        let version = self.u16()?;
        let n = self.u64()?;
        let qber_ppm = self.u32()?;
        let variant = ScheduleVariant::try_from(self.u8()?)?;
        let identity_first_round = match self.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Decode(format!("invalid flag byte {other}"))),
        };
        let session_seed = self.u128()?;
        Ok(Hello {
            version,
            n,
            qber_ppm,
            variant,
            identity_first_round,
            session_seed,
        })
    }
}

fn decode_body(body: &[u8]) -> Result<Message> {
    let mut c = Cursor { buf: body, pos: 0 };
    let kind = MessageType::try_from(c.u8()?)?;
    let session = c.u16()?;
    let round = c.u32()?;
    let body = match kind {
        MessageType::Hello => Body::Hello(c.hello()?),
        MessageType::Schedule => {
            let params = c.hello()?;
            let count = c.u32()? as usize;
            if count > (c.buf.len() - c.pos) / 8 {
                return Err(Error::Decode("schedule count exceeds payload".into()));
            }
            let sizes = (0..count).map(|_| c.u64()).collect::<Result<_>>()?;
            Body::Schedule(ScheduleAck { params, sizes })
        }
        MessageType::RoundParities => Body::RoundParities(c.bits()?),
        MessageType::MismatchMask => Body::MismatchMask(c.bits()?),
        MessageType::HalfParities => Body::HalfParities(c.bits()?),
        MessageType::DirectionMask => Body::DirectionMask(c.bits()?),
        MessageType::Digest => Body::Digest(c.u64()?),
        MessageType::Abort => {
            let code = c.u8()?;
            let len = c.u16()? as usize;
            let reason = String::from_utf8(c.take(len)?.to_vec())
                .map_err(|_| Error::Decode("abort reason is not UTF-8".into()))?;
            Body::Abort(Abort { code, reason })
        }
    };
    if c.pos != c.buf.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes after {kind:?}",
            c.buf.len() - c.pos
        )));
    }
    Ok(Message {
        session,
        round,
        body,
    })
}
