//! Binary stdio protocol for external denoisers, version 1.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! HELLO     "SPDX" version:u16 W:u32 H:u32 C:u32 T:u32 schedule:u8
//! Request   0x01 t:u32 window_index:u32 condition:u32 f32[W*H*C]
//! Response  0x02 W:u32 H:u32 C:u32 f32[W*H*C]
//! Shutdown  0x00
//! ```
//!
//! The client opens with HELLO and the server acknowledges by echoing the
//! same HELLO bytes. Requests are answered strictly in order.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::grid::{f32_from_le_bytes, f32_le_bytes};

pub const MAGIC: &[u8; 4] = b"SPDX";
pub const VERSION: u16 = 1;
pub const HELLO_LEN: usize = 23;

pub const TAG_SHUTDOWN: u8 = 0;
pub const TAG_REQUEST: u8 = 1;
pub const TAG_RESPONSE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub steps: u32,
    pub schedule: u8,
}

impl Hello {
    pub fn payload_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn to_bytes(&self) -> [u8; HELLO_LEN] {
        let mut b = [0u8; HELLO_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..10].copy_from_slice(&self.width.to_le_bytes());
        b[10..14].copy_from_slice(&self.height.to_le_bytes());
        b[14..18].copy_from_slice(&self.channels.to_le_bytes());
        b[18..22].copy_from_slice(&self.steps.to_le_bytes());
        b[22] = self.schedule;
        b
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Hello> {
        let mut b = [0u8; HELLO_LEN];
        read_exact(input, &mut b, "HELLO")?;
        if &b[..4] != MAGIC {
            return Err(Error::Protocol(format!("bad magic {:?}", &b[..4])));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::Protocol(format!("unsupported protocol version {version}")));
        }
        let u = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let hello = Hello {
            width: u(6),
            height: u(10),
            channels: u(14),
            steps: u(18),
            schedule: b[22],
        };
        if hello.payload_len() == 0 {
            return Err(Error::Protocol("HELLO with zero-sized dimensions".into()));
        }
        Ok(hello)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub t: u32,
    pub window_index: u32,
    pub condition: u32,
    pub payload: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub payload: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Request(Request),
    Response(Response),
    Shutdown,
}

impl Frame {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut buf = Vec::new();
        match self {
            Frame::Shutdown => buf.push(TAG_SHUTDOWN),
            Frame::Request(r) => {
                buf.push(TAG_REQUEST);
                for v in [r.t, r.window_index, r.condition] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&f32_le_bytes(&r.payload));
            }
            Frame::Response(r) => {
                buf.push(TAG_RESPONSE);
                for v in [r.width, r.height, r.channels] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&f32_le_bytes(&r.payload));
            }
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    /// Reads one frame; payload sizes come from the negotiated HELLO.
    pub fn read_from<R: Read>(input: &mut R, hello: &Hello) -> Result<Frame> {
        let mut tag = [0u8; 1];
        read_exact(input, &mut tag, "frame tag")?;
        match tag[0] {
            TAG_SHUTDOWN => Ok(Frame::Shutdown),
            TAG_REQUEST => {
                let [t, window_index, condition] = read_u32s(input)?;
                Ok(Frame::Request(Request {
                    t,
                    window_index,
                    condition,
                    payload: read_payload(input, hello.payload_len())?,
                }))
            }
            TAG_RESPONSE => {
                let [width, height, channels] = read_u32s(input)?;
                let n = width as usize * height as usize * channels as usize;
                if n != hello.payload_len() {
                    return Err(Error::shape(
                        format!("{}x{}x{}", hello.width, hello.height, hello.channels),
                        format!("{width}x{height}x{channels}"),
                    ));
                }
                Ok(Frame::Response(Response {
                    width,
                    height,
                    channels,
                    payload: read_payload(input, n)?,
                }))
            }
            other => Err(Error::Protocol(format!("unknown frame tag {other}"))),
        }
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Protocol(format!("stream closed while reading {what}")),
        _ => Error::Protocol(format!("reading {what}: {e}")),
    })
}

fn read_u32s<R: Read>(input: &mut R) -> Result<[u32; 3]> {
    let mut b = [0u8; 12];
    read_exact(input, &mut b, "frame header")?;
    let u = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    Ok([u(0), u(4), u(8)])
}

fn read_payload<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut b = vec![0u8; n * 4];
    read_exact(input, &mut b, "payload")?;
    Ok(f32_from_le_bytes(&b))
}

/// Runs the server side of a session until Shutdown.
///
/// `handler` maps each request to a payload of `W*H*C` values. Returns the
/// number of requests served.
pub fn serve<R, W, F>(mut input: R, mut output: W, mut handler: F) -> Result<u64>
where
    R: Read,
    W: Write,
    F: FnMut(&Hello, &Request) -> Result<Vec<f32>>,
{
    let hello = Hello::read_from(&mut input)?;
    hello.write_to(&mut output)?;
    output.flush()?;
    let mut served = 0u64;
    loop {
        match Frame::read_from(&mut input, &hello)? {
            Frame::Shutdown => return Ok(served),
            Frame::Request(req) => {
                let payload = handler(&hello, &req)?;
                if payload.len() != hello.payload_len() {
                    return Err(Error::shape(hello.payload_len(), payload.len()));
                }
                Frame::Response(Response {
                    width: hello.width,
                    height: hello.height,
                    channels: hello.channels,
                    payload,
                })
                .write_to(&mut output)?;
                output.flush()?;
                served += 1;
            }
            Frame::Response(_) => return Err(Error::Protocol("server received a response frame".into())),
        }
    }
}
