//! Frame layout (all integers big-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic 0x47 0x44 0x4D 0x53 ("GDMS")
//! 4       1     version (0x01)
//! 5       1     message kind
//! 6       8     correlation id
//! 14      4     body length
//! 18      n     body
//! ```

use thiserror::Error;

use super::message::{Body, MessageKind, WireMessage};
use crate::codec::CodecError;

pub const MAGIC: [u8; 4] = *b"GDMS";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 18;
pub const MAX_BODY_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: have {have} bytes, need {need}")]
    TruncatedFrame { have: usize, need: usize },
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("body length {0} exceeds limit")]
    TooLarge(usize),
    #[error("malformed body: {0}")]
    BadBody(#[from] CodecError),
    #[error("{0} bytes after frame")]
    Trailing(usize),
}

pub fn encode_frame(msg: &WireMessage) -> Vec<u8> {
    let body = msg.body.encode();
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&msg.correlation_id.to_be_bytes());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Validates as much of the header as `buf` holds. Returns the full frame
/// length once the header is complete.
fn check_header(buf: &[u8]) -> Result<Option<usize>, FrameError> {
    let n = buf.len().min(4);
    if buf[..n] != MAGIC[..n] {
        let mut m = [0u8; 4];
        m[..n].copy_from_slice(&buf[..n]);
        return Err(FrameError::BadMagic(m));
    }
    if buf.len() > 4 && buf[4] != VERSION {
        return Err(FrameError::UnsupportedVersion(buf[4]));
    }
    if buf.len() > 5 && MessageKind::from_code(buf[5]).is_none() {
        return Err(FrameError::UnknownKind(buf[5]));
    }
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let len = u32::from_be_bytes(buf[14..18].try_into().expect("4 bytes")) as usize;
    if len > MAX_BODY_LEN {
        return Err(FrameError::TooLarge(len));
    }
    Ok(Some(HEADER_LEN + len))
}

fn decode_complete(frame: &[u8]) -> Result<WireMessage, FrameError> {
    let kind = MessageKind::from_code(frame[5]).ok_or(FrameError::UnknownKind(frame[5]))?;
    let correlation_id = u64::from_be_bytes(frame[6..14].try_into().expect("8 bytes"));
    let body = Body::decode(kind, &frame[HEADER_LEN..])?;
    Ok(WireMessage { correlation_id, body })
}

/// Decodes exactly one complete frame.
pub fn decode_frame(buf: &[u8]) -> Result<WireMessage, FrameError> {
    let need = match check_header(buf)? {
        Some(total) => total,
        None => HEADER_LEN,
    };
    if buf.len() < need {
        return Err(FrameError::TruncatedFrame { have: buf.len(), need });
    }
    if buf.len() > need {
        return Err(FrameError::Trailing(buf.len() - need));
    }
    decode_complete(buf)
}

/// Incremental decoder for a byte stream carrying back-to-back frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, or `None` when more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, FrameError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        let Some(total) = check_header(&self.buf)? else {
            return Ok(None);
        };
        if self.buf.len() < total {
            return Ok(None);
        }
        let msg = decode_complete(&self.buf[..total]);
        self.buf.drain(..total);
        msg.map(Some)
    }
}
