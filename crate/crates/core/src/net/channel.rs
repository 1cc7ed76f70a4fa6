//! Channel abstraction over the frame format: a blocking duplex pipe used by
//! the two-party protocol. Tests and the in-process pipelines use a paired
//! in-memory channel with the identical framing; the TCP channel wraps a
//! socket with buffered, explicitly flushed writes.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::error::{Error, Result};
use crate::net::frame::{read_frame, write_frame, Frame, MessageType};

pub trait FrameChannel {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<()>;
    fn recv(&mut self) -> Result<Frame>;

    /// Receive and require a specific message type; an ERROR frame from the
    /// peer or a type mismatch aborts the session.
    fn expect(&mut self, msg_type: MessageType) -> Result<Frame> {
        let frame = self.recv()?;
        if frame.msg_type == MessageType::Error {
            let code = frame.payload.first().copied().unwrap_or(0);
            return Err(Error::protocol(format!("peer reported error code {code}")));
        }
        if frame.msg_type != msg_type {
            return Err(Error::protocol(format!(
                "expected {msg_type:?}, got {:?}",
                frame.msg_type
            )));
        }
        Ok(frame)
    }
}

/// One end of an in-memory duplex channel.
pub struct InMemoryChannel {
    tx: Sender<Frame>,
    rx: Receiver<Frame>,
}

impl InMemoryChannel {
    /// A connected pair; frames sent on one end arrive on the other.
    pub fn pair() -> (InMemoryChannel, InMemoryChannel) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        (
            InMemoryChannel { tx: tx_a, rx: rx_a },
            InMemoryChannel { tx: tx_b, rx: rx_b },
        )
    }
}

impl FrameChannel for InMemoryChannel {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<()> {
        // encode/decode through the real framing so both transports exercise
        // the same byte format
        let bytes = crate::net::frame::frame_encode(msg_type, payload)?;
        let (frame, _) = crate::net::frame::frame_decode(&bytes)?;
        self.tx
            .send(frame)
            .map_err(|_| Error::protocol("peer hung up"))
    }

    fn recv(&mut self) -> Result<Frame> {
        self.rx.recv().map_err(|_| Error::protocol("peer hung up"))
    }
}

/// A TCP-backed channel. `TCP_NODELAY` is set: the protocol is ping-pong and
/// Nagle batching would serialize every round trip behind delayed ACKs.
pub struct TcpChannel {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let writer = BufWriter::new(stream);
        Ok(TcpChannel { reader, writer })
    }
}

impl FrameChannel for TcpChannel {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<()> {
        write_frame(&mut self.writer, msg_type, payload)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame> {
        read_frame(&mut self.reader)
    }
}

/// Direction of a recorded frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    Sent,
    Received,
}

/// Records the shape of the transcript (direction, type, payload length) of
/// every frame crossing the wrapped channel. Used to assert that the
/// communication pattern depends only on public sizes.
pub struct RecordingChannel<C: FrameChannel> {
    inner: C,
    pub log: Vec<(Dir, MessageType, usize)>,
}

impl<C: FrameChannel> RecordingChannel<C> {
    pub fn new(inner: C) -> Self {
        RecordingChannel {
            inner,
            log: Vec::new(),
        }
    }

    /// The (type, length) sequence of sent frames.
    pub fn sent_shape(&self) -> Vec<(MessageType, usize)> {
        self.log
            .iter()
            .filter(|(d, _, _)| *d == Dir::Sent)
            .map(|(_, t, l)| (*t, *l))
            .collect()
    }
}

impl<C: FrameChannel> FrameChannel for RecordingChannel<C> {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<()> {
        self.log.push((Dir::Sent, msg_type, payload.len()));
        self.inner.send(msg_type, payload)
    }

    fn recv(&mut self) -> Result<Frame> {
        let frame = self.inner.recv()?;
        self.log
            .push((Dir::Received, frame.msg_type, frame.payload.len()));
        Ok(frame)
    }
}
