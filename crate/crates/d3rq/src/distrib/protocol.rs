//! Framed wire protocol between actors and the learner hub.
//!
//! Frame layout: 4-byte little-endian length prefix covering everything that
//! follows, then one type byte, then the payload. Unknown type bytes and
//! truncated frames are protocol errors; a decoder never consumes past the
//! declared length. Weight snapshots embed their tensors in the checkpoint
//! byte format, so a snapshot on the wire and a checkpoint on disk agree.

use crate::envsim::Observation;
use crate::error::{Error, Result};
use crate::netcore::{load_tensors, save_tensors, Tensor};
use crate::replay::Transition;

pub const PROTOCOL_VERSION: u8 = 1;

pub const TYPE_TRANSITION: u8 = 1;
pub const TYPE_WEIGHTS_REQUEST: u8 = 2;
pub const TYPE_WEIGHTS_SNAPSHOT: u8 = 3;
pub const TYPE_HELLO: u8 = 4;
pub const TYPE_SHUTDOWN: u8 = 5;

/// Monotone weight-snapshot version, tagged with the step it was published
/// at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct WeightVersion {
    pub version: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Transition(Transition),
    WeightsRequest,
    WeightsSnapshot { version: u64, step: u64, tensors: Vec<(String, Tensor)> },
    Hello { protocol: u8, worker_id: u32 },
    Shutdown,
}

// -- primitive writers -------------------------------------------------------

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64_slice(buf: &mut Vec<u8>, vs: &[f64]) {
    put_u32(buf, vs.len() as u32);
    for &v in vs {
        put_f64(buf, v);
    }
}

fn put_observation(buf: &mut Vec<u8>, obs: &Observation) {
    match obs {
        Observation::Vector(v) => {
            buf.push(0);
            put_f64_slice(buf, v);
        }
        Observation::Image(img) => {
            buf.push(1);
            put_u32(buf, img.channels as u32);
            put_u32(buf, img.height as u32);
            put_u32(buf, img.width as u32);
            for &v in &img.data {
                put_f64(buf, v);
            }
        }
    }
}

// -- primitive readers --------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, at: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Protocol(format!(
                "frame truncated: wanted {n} bytes at offset {}, have {}",
                self.at,
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn observation(&mut self) -> Result<Observation> {
        match self.u8()? {
            0 => Ok(Observation::Vector(self.f64_vec()?)),
            1 => {
                let c = self.u32()? as usize;
                let h = self.u32()? as usize;
                let w = self.u32()? as usize;
                let len = c * h * w;
                let mut data = Vec::with_capacity(len);
                for _ in 0..len {
                    data.push(self.f64()?);
                }
                Ok(Observation::Image(crate::augment::ImageTensor {
                    channels: c,
                    height: h,
                    width: w,
                    data,
                }))
            }
            tag => Err(Error::Protocol(format!("unknown observation tag {tag}"))),
        }
    }

    fn finished(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(Error::Protocol(format!(
                "frame has {} trailing bytes",
                self.buf.len() - self.at
            )));
        }
        Ok(())
    }
}

/// Encode one message as a self-delimiting frame.
pub fn encode_frame(msg: &WireMessage) -> Vec<u8> {
    let mut body = Vec::new();
    match msg {
        WireMessage::Transition(t) => {
            body.push(TYPE_TRANSITION);
            put_observation(&mut body, &t.obs);
            put_f64_slice(&mut body, &t.action);
            put_f64(&mut body, t.reward);
            put_observation(&mut body, &t.next_obs);
            body.push(t.terminal as u8);
            body.push(t.truncated as u8);
            put_u64(&mut body, t.episode_id);
            put_u32(&mut body, t.step_index);
        }
        WireMessage::WeightsRequest => body.push(TYPE_WEIGHTS_REQUEST),
        WireMessage::WeightsSnapshot { version, step, tensors } => {
            body.push(TYPE_WEIGHTS_SNAPSHOT);
            put_u64(&mut body, *version);
            put_u64(&mut body, *step);
            let refs: Vec<(String, &Tensor)> =
                tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
            save_tensors(&mut body, &refs).expect("vec write cannot fail");
        }
        WireMessage::Hello { protocol, worker_id } => {
            body.push(TYPE_HELLO);
            body.push(*protocol);
            put_u32(&mut body, *worker_id);
        }
        WireMessage::Shutdown => body.push(TYPE_SHUTDOWN),
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    put_u32(&mut frame, body.len() as u32);
    frame.extend_from_slice(&body);
    frame
}

/// Decode one frame from the front of `bytes`; returns the message and the
/// total bytes consumed (prefix included). Never reads past the declared
/// frame length.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireMessage, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Protocol("frame shorter than its length prefix".into()));
    }
    let len = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    if len == 0 {
        return Err(Error::Protocol("empty frame".into()));
    }
    if bytes.len() < 4 + len {
        return Err(Error::Protocol(format!(
            "frame declares {len} bytes but only {} are available",
            bytes.len() - 4
        )));
    }
    let body = &bytes[4..4 + len];
    let msg = decode_body(body)?;
    Ok((msg, 4 + len))
}

fn decode_body(body: &[u8]) -> Result<WireMessage> {
    let mut r = Reader::new(body);
    let msg = match r.u8()? {
        TYPE_TRANSITION => {
            let obs = r.observation()?;
            let action = r.f64_vec()?;
            let reward = r.f64()?;
            let next_obs = r.observation()?;
            let terminal = r.u8()? != 0;
            let truncated = r.u8()? != 0;
            let episode_id = r.u64()?;
            let step_index = r.u32()?;
            WireMessage::Transition(Transition {
                obs,
                action,
                reward,
                next_obs,
                terminal,
                truncated,
                episode_id,
                step_index,
            })
        }
        TYPE_WEIGHTS_REQUEST => WireMessage::WeightsRequest,
        TYPE_WEIGHTS_SNAPSHOT => {
            let version = r.u64()?;
            let step = r.u64()?;
            let rest = r.bytes(body.len() - r.at)?;
            let tensors = load_tensors(&mut std::io::Cursor::new(rest))
                .map_err(|e| Error::Protocol(format!("snapshot tensors: {e}")))?;
            return Ok(WireMessage::WeightsSnapshot { version, step, tensors });
        }
        TYPE_HELLO => {
            let protocol = r.u8()?;
            let worker_id = r.u32()?;
            WireMessage::Hello { protocol, worker_id }
        }
        TYPE_SHUTDOWN => WireMessage::Shutdown,
        t => return Err(Error::Protocol(format!("unknown frame type byte {t}"))),
    };
    r.finished()?;
    Ok(msg)
}
