//! Length-prefixed binary framing.
//!
//! A frame is `u32` payload length (little endian, tag excluded), a `u8` tag and
//! the payload: `f64` fields in little endian in declared order.
//!
//! | tag  | message     | payload                                  |
//! |------|-------------|------------------------------------------|
//! | 0x01 | measurement | `k, timestamp, y[0..6M]`                 |
//! | 0x02 | param update| `source, data_len, clock, theta[..]`     |
//! | 0x03 | threshold   | `beta, clock`                            |
//! | 0x04 | shutdown    | empty                                    |
//!
//! `clock` is the sender's emission time in seconds, used by the logical timing mode.

use std::io::{self, Read, Write};

use dualest_core::{Measurement64, Params64};
use nalgebra::DVector;

use crate::error::WireError;

pub const TAG_MEASUREMENT: u8 = 0x01;
pub const TAG_PARAM_UPDATE: u8 = 0x02;
pub const TAG_THRESHOLD: u8 = 0x03;
pub const TAG_SHUTDOWN: u8 = 0x04;

/// Frames above this payload size are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 1 << 24;

/// Largest integer an `f64` field carries exactly.
const MAX_EXACT_INTEGER: f64 = 9_007_199_254_740_992.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Measurement(Measurement64),
    ParamUpdate { source: usize, data_len: usize, clock: f64, theta: Params64 },
    Threshold { beta: usize, clock: f64 },
    Shutdown,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Measurement(_) => TAG_MEASUREMENT,
            Message::ParamUpdate { .. } => TAG_PARAM_UPDATE,
            Message::Threshold { .. } => TAG_THRESHOLD,
            Message::Shutdown => TAG_SHUTDOWN,
        }
    }

    fn fields(&self) -> Vec<f64> {
        match self {
            Message::Measurement(m) => {
                let mut f = vec![m.k as f64, m.timestamp];
                f.extend(m.y.iter());
                f
            }
            Message::ParamUpdate { source, data_len, clock, theta } => {
                let mut f = vec![*source as f64, *data_len as f64, *clock];
                f.extend(theta.as_vector().iter());
                f
            }
            Message::Threshold { beta, clock } => vec![*beta as f64, *clock],
            Message::Shutdown => Vec::new(),
        }
    }

    /// Complete frame bytes.
    pub fn encode(&self) -> Vec<u8> {
        let fields = self.fields();
        let mut out = Vec::with_capacity(5 + 8 * fields.len());
        out.extend_from_slice(&((8 * fields.len()) as u32).to_le_bytes());
        out.push(self.tag());
        for v in fields {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a payload that has already been split from its header.
    pub fn decode(tag: u8, payload: &[u8]) -> Result<Self, WireError> {
        let bad = || WireError::BadLength { tag, len: payload.len() };
        if payload.len() % 8 != 0 {
            return Err(bad());
        }
        let f: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        match tag {
            TAG_MEASUREMENT => {
                if f.len() < 2 {
                    return Err(bad());
                }
                Ok(Message::Measurement(Measurement64::new(
                    integer("k", f[0])?,
                    f[1],
                    DVector::from_column_slice(&f[2..]),
                )))
            }
            TAG_PARAM_UPDATE => {
                if f.len() < 3 {
                    return Err(bad());
                }
                Ok(Message::ParamUpdate {
                    source: integer("source", f[0])?,
                    data_len: integer("data_len", f[1])?,
                    clock: f[2],
                    theta: Params64::from_slice(&f[3..]),
                })
            }
            TAG_THRESHOLD => {
                if f.len() != 2 {
                    return Err(bad());
                }
                Ok(Message::Threshold { beta: integer("beta", f[0])?, clock: f[1] })
            }
            TAG_SHUTDOWN => {
                if !f.is_empty() {
                    return Err(bad());
                }
                Ok(Message::Shutdown)
            }
            other => Err(WireError::UnknownTag(other)),
        }
    }
}

fn integer(field: &'static str, value: f64) -> Result<usize, WireError> {
    if value.is_finite() && value >= 0.0 && value.fract() == 0.0 && value <= MAX_EXACT_INTEGER {
        Ok(value as usize)
    } else {
        Err(WireError::BadInteger { field, value })
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())
}

/// Reads one frame. `Ok(None)` means the stream closed cleanly on a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut header = [0u8; 5];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().expect("4-byte length"));
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    Message::decode(header[4], &payload).map(Some)
}
