//! CDN1 frames.
//!
//! ```text
//! "CDN1" | u32 LE header length | UTF-8 JSON header | u32 LE payload length | payload
//! ```
//!
//! The payload is a row-major `f32` little-endian tensor whose element count
//! equals the product of `shape` (empty for `hello`).

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CutError, Result};
use crate::latent::{Latent, Shape};

pub const MAGIC: &[u8; 4] = b"CDN1";
pub const MAX_HEADER_BYTES: u32 = 1 << 20;
pub const MAX_PAYLOAD_BYTES: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Hello,
    Eps,
    Decode,
    Echo,
    EpsResult,
    DecodeResult,
    EchoResult,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub request_id: u64,
    pub op: Op,
    #[serde(default)]
    pub t: usize,
    pub shape: [usize; 3],
    #[serde(default)]
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl FrameHeader {
    pub fn shape(&self) -> Shape {
        Shape::new(self.shape[0], self.shape[1], self.shape[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub payload: Vec<f32>,
}

impl Frame {
    pub fn tensor(request_id: u64, op: Op, t: usize, condition: &str, latent: &Latent) -> Frame {
        let s = latent.shape();
        Frame {
            header: FrameHeader {
                request_id,
                op,
                t,
                shape: [s.h, s.w, s.c],
                condition: condition.to_owned(),
                reason: None,
            },
            payload: latent.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn error(request_id: u64, reason: impl Into<String>) -> Frame {
        Frame {
            header: FrameHeader {
                request_id,
                op: Op::Error,
                t: 0,
                shape: [0, 0, 0],
                condition: String::new(),
                reason: Some(reason.into()),
            },
            payload: Vec::new(),
        }
    }

    pub fn to_latent(&self) -> Result<Latent> {
        Latent::from_vec(
            self.header.shape(),
            self.payload.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    let header = serde_json::to_vec(&frame.header).map_err(io::Error::other)?;
    let mut buf = Vec::with_capacity(12 + header.len() + frame.payload.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&((frame.payload.len() * 4) as u32).to_le_bytes());
    for v in &frame.payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one frame. Transport errors come back as `CutError::Io`, malformed
/// content as `CutError::Protocol`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CutError::Protocol(format!("bad magic {magic:02x?}")));
    }
    let header_len = read_u32(r)?;
    if header_len > MAX_HEADER_BYTES {
        return Err(CutError::Protocol(format!("header of {header_len} bytes is too large")));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header)?;
    let header: FrameHeader =
        serde_json::from_slice(&header).map_err(|e| CutError::Protocol(format!("bad header: {e}")))?;
    let payload_len = read_u32(r)?;
    if payload_len > MAX_PAYLOAD_BYTES {
        return Err(CutError::Protocol(format!(
            "payload of {payload_len} bytes is too large"
        )));
    }
    if payload_len % 4 != 0 {
        return Err(CutError::Protocol(format!(
            "payload length {payload_len} is not a multiple of 4"
        )));
    }
    let mut raw = vec![0u8; payload_len as usize];
    r.read_exact(&mut raw)?;
    let payload: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let expected = match header.op {
        Op::Hello | Op::Error => 0,
        _ => header.shape().len(),
    };
    if payload.len() != expected {
        return Err(CutError::Protocol(format!(
            "payload holds {} values, shape {:?} needs {expected}",
            payload.len(),
            header.shape
        )));
    }
    Ok(Frame { header, payload })
}
