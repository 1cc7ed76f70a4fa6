//! Length-prefixed binary framing.
//!
//! Every message on the wire is `[len: u32 LE][msg_type: u8][payload]` where
//! `len` counts the message-type byte plus the payload, so an empty HELLO is
//! the five bytes `01 00 00 00 01`. All multi-byte integers anywhere in a
//! payload are little-endian; coordinates travel as 64-bit raw fixed-point
//! ring elements and timestamps as 64-bit signed seconds. Text never appears
//! on the wire.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Hard cap on payload size (bytes).
pub const MAX_PAYLOAD: usize = 1 << 24;

/// Protocol version carried in HELLO; mismatch is fatal, never negotiated.
pub const PROTOCOL_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    PerturbedSet = 2,
    NoisyIndexes = 3,
    Sizes = 4,
    MaskedOpening = 5,
    Result = 6,
    Error = 7,
    DealerPool = 8,
}

impl MessageType {
    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            1 => MessageType::Hello,
            2 => MessageType::PerturbedSet,
            3 => MessageType::NoisyIndexes,
            4 => MessageType::Sizes,
            5 => MessageType::MaskedOpening,
            6 => MessageType::Result,
            7 => MessageType::Error,
            8 => MessageType::DealerPool,
            other => return Err(Error::protocol(format!("unknown message type {other}"))),
        })
    }
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }
}

/// Encode a frame to bytes.
pub fn frame_encode(msg_type: MessageType, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::invalid(format!(
            "payload of {} bytes exceeds limit {MAX_PAYLOAD}",
            payload.len()
        )));
    }
    let len = (payload.len() + 1) as u32;
    let mut out = Vec::with_capacity(5 + payload.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.push(msg_type as u8);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Decode one frame from the start of `bytes`; returns the frame and the
/// number of bytes consumed.
pub fn frame_decode(bytes: &[u8]) -> Result<(Frame, usize)> {
    if bytes.len() < 5 {
        return Err(Error::framing("truncated frame header"));
    }
    let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len == 0 {
        return Err(Error::framing("frame length must include the type byte"));
    }
    if len > MAX_PAYLOAD + 1 {
        return Err(Error::framing(format!("frame length {len} exceeds limit")));
    }
    if bytes.len() < 4 + len {
        return Err(Error::framing(format!(
            "frame claims {len} bytes but only {} remain",
            bytes.len() - 4
        )));
    }
    let msg_type = MessageType::from_tag(bytes[4])?;
    let payload = bytes[5..4 + len].to_vec();
    Ok((Frame { msg_type, payload }, 4 + len))
}

/// Write one frame to a stream.
pub fn write_frame<W: Write>(w: &mut W, msg_type: MessageType, payload: &[u8]) -> Result<()> {
    let bytes = frame_encode(msg_type, payload)?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Read one frame from a stream. A short read anywhere aborts the session.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut header = [0u8; 5];
    r.read_exact(&mut header)
        .map_err(|e| Error::framing(format!("reading frame header: {e}")))?;
    let len = u32::from_le_bytes([header[0], header[1], header[2], header[3]]) as usize;
    if len == 0 {
        return Err(Error::framing("frame length must include the type byte"));
    }
    if len > MAX_PAYLOAD + 1 {
        return Err(Error::framing(format!("frame length {len} exceeds limit")));
    }
    let msg_type = MessageType::from_tag(header[4])?;
    let mut payload = vec![0u8; len - 1];
    r.read_exact(&mut payload)
        .map_err(|e| Error::framing(format!("reading frame payload: {e}")))?;
    Ok(Frame { msg_type, payload })
}

/// Little-endian payload cursor helpers shared by the wire schemas.
pub mod wire {
    use crate::error::{Error, Result};

    pub fn put_u32(out: &mut Vec<u8>, v: u32) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(out: &mut Vec<u8>, v: u64) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_i64(out: &mut Vec<u8>, v: i64) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub struct Cursor<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Cursor<'a> {
        pub fn new(buf: &'a [u8]) -> Self {
            Cursor { buf, pos: 0 }
        }

        pub fn u8(&mut self) -> Result<u8> {
            let b = *self
                .buf
                .get(self.pos)
                .ok_or_else(|| Error::framing("payload underrun"))?;
            self.pos += 1;
            Ok(b)
        }

        pub fn u32(&mut self) -> Result<u32> {
            let end = self.pos + 4;
            let s = self
                .buf
                .get(self.pos..end)
                .ok_or_else(|| Error::framing("payload underrun"))?;
            self.pos = end;
            Ok(u32::from_le_bytes(s.try_into().unwrap()))
        }

        pub fn u64(&mut self) -> Result<u64> {
            let end = self.pos + 8;
            let s = self
                .buf
                .get(self.pos..end)
                .ok_or_else(|| Error::framing("payload underrun"))?;
            self.pos = end;
            Ok(u64::from_le_bytes(s.try_into().unwrap()))
        }

        pub fn i64(&mut self) -> Result<i64> {
            Ok(self.u64()? as i64)
        }

        pub fn finish(&self) -> Result<()> {
            if self.pos == self.buf.len() {
                Ok(())
            } else {
                Err(Error::framing(format!(
                    "payload has {} trailing bytes",
                    self.buf.len() - self.pos
                )))
            }
        }
    }
}
