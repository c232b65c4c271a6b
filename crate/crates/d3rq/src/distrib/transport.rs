//! Message transports: bounded in-process channels and TCP sockets.
//!
//! Both carry the same encoded frames, so switching transports changes
//! nothing about the protocol. The in-process channel blocks on a full
//! queue, which is the backpressure that keeps the learner (not memory) the
//! limiting factor.

use super::protocol::{decode_frame, encode_frame, WireMessage};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};

pub trait Connection: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
    /// Blocking receive; an orderly peer close is an error the caller treats
    /// as end of stream.
    fn recv(&mut self) -> Result<WireMessage>;
}

/// In-process duplex endpoint over bounded byte-frame channels.
pub struct InProcConn {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Connected pair of in-process endpoints with the given queue depth.
pub fn inproc_pair(depth: usize) -> (InProcConn, InProcConn) {
    let (tx_a, rx_b) = sync_channel(depth);
    let (tx_b, rx_a) = sync_channel(depth);
    (InProcConn { tx: tx_a, rx: rx_a }, InProcConn { tx: tx_b, rx: rx_b })
}

impl Connection for InProcConn {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.tx
            .send(encode_frame(msg))
            .map_err(|_| Error::Protocol("peer closed the channel".into()))
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let frame = self
            .rx
            .recv()
            .map_err(|_| Error::Protocol("peer closed the channel".into()))?;
        let (msg, used) = decode_frame(&frame)?;
        if used != frame.len() {
            return Err(Error::Protocol("channel frame carries trailing bytes".into()));
        }
        Ok(msg)
    }
}

/// Frame-at-a-time TCP endpoint.
pub struct SocketConn {
    stream: TcpStream,
}

impl SocketConn {
    pub fn connect(endpoint: &str) -> Result<Self> {
        let stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true).ok();
        Ok(SocketConn { stream })
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        stream.set_nodelay(true).ok();
        SocketConn { stream }
    }
}

impl Connection for SocketConn {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        let frame = encode_frame(msg);
        self.stream.write_all(&frame)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let mut prefix = [0u8; 4];
        self.stream.read_exact(&mut prefix)?;
        let len = u32::from_le_bytes(prefix) as usize;
        if len == 0 || len > 1 << 30 {
            return Err(Error::Protocol(format!("unreasonable frame length {len}")));
        }
        let mut frame = vec![0u8; 4 + len];
        frame[0..4].copy_from_slice(&prefix);
        self.stream.read_exact(&mut frame[4..])?;
        let (msg, used) = decode_frame(&frame)?;
        debug_assert_eq!(used, frame.len());
        Ok(msg)
    }
}

/// Accept loop helper for the socket transport.
pub struct SocketListener {
    listener: TcpListener,
}

impl SocketListener {
    pub fn bind(endpoint: &str) -> Result<Self> {
        Ok(SocketListener { listener: TcpListener::bind(endpoint)? })
    }

    pub fn local_addr(&self) -> Result<String> {
        Ok(self.listener.local_addr()?.to_string())
    }

    pub fn accept(&self) -> Result<SocketConn> {
        let (stream, _) = self.listener.accept()?;
        Ok(SocketConn::from_stream(stream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;

    #[test]
    fn inproc_roundtrip_and_close_detection() {
        let (mut a, mut b) = inproc_pair(4);
        a.send(&WireMessage::WeightsRequest).unwrap();
        assert_eq!(b.recv().unwrap(), WireMessage::WeightsRequest);
        drop(b);
        assert!(a.send(&WireMessage::Shutdown).is_err());
    }

    #[test]
    fn socket_roundtrip_over_localhost() {
        let listener = SocketListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let mut conn = listener.accept().unwrap();
            let msg = conn.recv().unwrap();
            conn.send(&msg).unwrap();
        });
        let mut client = SocketConn::connect(&addr).unwrap();
        let msg = WireMessage::Transition(Transition {
            obs: crate::envsim::Observation::Vector(vec![1.5, -2.5]),
            action: vec![0.25],
            reward: 0.125,
            next_obs: crate::envsim::Observation::Vector(vec![0.0, 1.0]),
            terminal: false,
            truncated: true,
            episode_id: 77,
            step_index: 3,
        });
        client.send(&msg).unwrap();
        assert_eq!(client.recv().unwrap(), msg);
        server.join().unwrap();
    }
}
