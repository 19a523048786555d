//! Frame format: a 4-byte big-endian payload length, then the payload.
//! The payload is a tag byte followed by the fields in declaration order;
//! integers and doubles are big-endian, vectors carry a `u32` length.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Default upper bound on a frame payload, in bytes.
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

const TAG_ROUND_START: u8 = 1;
const TAG_SM_RESULT: u8 = 2;
const TAG_ADMM_RESULT: u8 = 3;
const TAG_BROADCAST: u8 = 4;
const TAG_SHUTDOWN: u8 = 5;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {len} bytes exceeds the {cap}-byte cap")]
    Oversized { len: usize, cap: usize },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("connection closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    RoundStart { t: u64, w: Vec<f64> },
    SmResult { g: u32, v_g: Vec<f64> },
    AdmmResult { g: u32, w_g: Vec<f64> },
    Broadcast { t: u64, w: Vec<f64> },
    Shutdown,
}

impl WireMessage {
    fn tag(&self) -> u8 {
        match self {
            WireMessage::RoundStart { .. } => TAG_ROUND_START,
            WireMessage::SmResult { .. } => TAG_SM_RESULT,
            WireMessage::AdmmResult { .. } => TAG_ADMM_RESULT,
            WireMessage::Broadcast { .. } => TAG_BROADCAST,
            WireMessage::Shutdown => TAG_SHUTDOWN,
        }
    }

    fn vector(&self) -> Option<&[f64]> {
        match self {
            WireMessage::RoundStart { w, .. } | WireMessage::Broadcast { w, .. } => Some(w),
            WireMessage::SmResult { v_g, .. } => Some(v_g),
            WireMessage::AdmmResult { w_g, .. } => Some(w_g),
            WireMessage::Shutdown => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vector().is_none_or(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Payload bytes, without the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.tag()];
        match self {
            WireMessage::RoundStart { t, .. } | WireMessage::Broadcast { t, .. } => out.extend(t.to_be_bytes()),
            WireMessage::SmResult { g, .. } | WireMessage::AdmmResult { g, .. } => out.extend(g.to_be_bytes()),
            WireMessage::Shutdown => {}
        }
        if let Some(v) = self.vector() {
            out.extend((v.len() as u32).to_be_bytes());
            for x in v {
                out.extend(x.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: payload, pos: 0 };
        let msg = match r.u8()? {
            TAG_ROUND_START => WireMessage::RoundStart {
                t: r.u64()?,
                w: r.vector()?,
            },
            TAG_SM_RESULT => WireMessage::SmResult {
                g: r.u32()?,
                v_g: r.vector()?,
            },
            TAG_ADMM_RESULT => WireMessage::AdmmResult {
                g: r.u32()?,
                w_g: r.vector()?,
            },
            TAG_BROADCAST => WireMessage::Broadcast {
                t: r.u64()?,
                w: r.vector()?,
            },
            TAG_SHUTDOWN => WireMessage::Shutdown,
            tag => return Err(WireError::Malformed(format!("unknown tag {tag}"))),
        };
        if r.pos != payload.len() {
            return Err(WireError::Malformed(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        if !msg.is_finite() {
            return Err(WireError::Malformed("non-finite value".into()));
        }
        Ok(msg)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const K: usize>(&mut self) -> Result<[u8; K], WireError> {
        let end = self.pos + K;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| WireError::Malformed("truncated payload".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length K"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take()?))
    }

    fn vector(&mut self) -> Result<Vec<f64>, WireError> {
        let len = self.u32()? as usize;
        if len > (self.buf.len() - self.pos) / 8 {
            return Err(WireError::Malformed(format!("vector length {len} overruns the payload")));
        }
        (0..len).map(|_| Ok(f64::from_be_bytes(self.take()?))).collect()
    }
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage, cap: usize) -> Result<(), WireError> {
    let payload = msg.encode();
    if payload.len() > cap {
        return Err(WireError::Oversized { len: payload.len(), cap });
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. A clean end of stream before the header is
/// [`WireError::Closed`]; the length is checked before the payload is read.
pub fn read_frame(r: &mut impl Read, cap: usize) -> Result<WireMessage, WireError> {
    let mut header = [0u8; 4];
    if let Err(e) = r.read_exact(&mut header) {
        return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Closed
        } else {
            e.into()
        });
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > cap {
        return Err(WireError::Oversized { len, cap });
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    WireMessage::decode(&payload)
}
