//! Byte-stream sessions. A reader thread moves incoming bytes into a
//! channel so receive deadlines work uniformly for pipes, sockets and
//! in-memory streams.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{encode_frame_into, DecodeEvent, Decoder, FrameError};
use super::message::Message;
use super::RpcError;

enum Chunk {
    Data(Vec<u8>),
    Eof,
    Failed(String),
}

pub struct Session {
    writer: Box<dyn Write + Send>,
    incoming: Receiver<Chunk>,
    decoder: Decoder,
    pending: VecDeque<DecodeEvent>,
    closed: bool,
    tx_seq: u16,
    rx_next: Option<u16>,
    seq_gaps: u64,
    buffer_size: usize,
    scratch: Vec<u8>,
}

impl Session {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static, buffer_size: usize) -> Self {
        let (tx, rx) = mpsc::channel();
        spawn_reader(reader, tx);
        Session {
            writer: Box::new(writer),
            incoming: rx,
            decoder: Decoder::new(buffer_size),
            pending: VecDeque::new(),
            closed: false,
            tx_seq: 0,
            rx_next: None,
            seq_gaps: 0,
            buffer_size,
            scratch: Vec::with_capacity(buffer_size),
        }
    }

    pub fn tcp(stream: TcpStream, buffer_size: usize) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(Session::new(reader, stream, buffer_size))
    }

    pub fn stdio(buffer_size: usize) -> Self {
        Session::new(io::stdin(), io::stdout(), buffer_size)
    }

    pub fn buffer_size(&self) -> usize {
        self.buffer_size
    }

    pub fn set_buffer_size(&mut self, buffer_size: usize) {
        self.buffer_size = buffer_size;
        self.decoder.set_buffer_size(buffer_size);
    }

    /// Received frames whose sequence number did not follow the previous one.
    pub fn seq_gaps(&self) -> u64 {
        self.seq_gaps
    }

    pub fn send(&mut self, message: &Message) -> Result<(), RpcError> {
        encode_frame_into(message, self.tx_seq, self.buffer_size, &mut self.scratch)?;
        self.writer.write_all(&self.scratch).map_err(RpcError::io)?;
        self.writer.flush().map_err(RpcError::io)?;
        self.tx_seq = self.tx_seq.wrapping_add(1);
        Ok(())
    }

    /// Writes bytes as-is, bypassing framing (fault injection, bridging).
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), RpcError> {
        self.writer.write_all(bytes).map_err(RpcError::io)?;
        self.writer.flush().map_err(RpcError::io)
    }

    /// Next decode event; `None` waits indefinitely.
    pub fn recv_event(&mut self, timeout: Option<Duration>) -> Result<DecodeEvent, RpcError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(ev) = self.pending.pop_front() {
                if let DecodeEvent::Frame { seq, .. } = &ev {
                    if self.rx_next.is_some_and(|n| n != *seq) {
                        self.seq_gaps += 1;
                    }
                    self.rx_next = Some(seq.wrapping_add(1));
                }
                return Ok(ev);
            }
            if self.closed {
                return Err(RpcError::Closed);
            }
            let chunk = match deadline {
                None => self.incoming.recv().unwrap_or(Chunk::Eof),
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    match self.incoming.recv_timeout(left) {
                        Ok(c) => c,
                        Err(RecvTimeoutError::Timeout) => {
                            return Err(RpcError::Timeout { waited: timeout.expect("deadline set") })
                        }
                        Err(RecvTimeoutError::Disconnected) => Chunk::Eof,
                    }
                }
            };
            match chunk {
                Chunk::Data(bytes) => self.pending.extend(self.decoder.push(&bytes)),
                Chunk::Eof => {
                    self.pending.extend(self.decoder.finish());
                    self.closed = true;
                }
                Chunk::Failed(e) => {
                    self.pending.extend(self.decoder.finish());
                    self.closed = true;
                    if self.pending.is_empty() {
                        return Err(RpcError::Io(e));
                    }
                }
            }
        }
    }

    /// Next well-formed message; a damaged frame is an error.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Message, RpcError> {
        loop {
            match self.recv_event(timeout)? {
                DecodeEvent::Frame { message, .. } => return Ok(message),
                DecodeEvent::Error { error: FrameError::BadMagic, .. } => continue,
                DecodeEvent::Error { error, .. } => return Err(RpcError::Corrupt(error)),
            }
        }
    }
}

fn spawn_reader(mut reader: impl Read + Send + 'static, tx: Sender<Chunk>) {
    thread::spawn(move || {
        let mut buf = vec![0u8; 4096];
        loop {
            match reader.read(&mut buf) {
                Ok(0) => {
                    let _ = tx.send(Chunk::Eof);
                    return;
                }
                Ok(n) => {
                    if tx.send(Chunk::Data(buf[..n].to_vec())).is_err() {
                        return;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    let _ = tx.send(Chunk::Failed(e.to_string()));
                    return;
                }
            }
        }
    });
}

/// Write half of an in-memory pipe.
pub struct PipeWriter(Sender<Vec<u8>>);

/// Read half of an in-memory pipe; EOF once every writer is dropped.
pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    leftover: Vec<u8>,
    pos: usize,
}

pub fn pipe() -> (PipeWriter, PipeReader) {
    let (tx, rx) = mpsc::channel();
    (PipeWriter(tx), PipeReader { rx, leftover: Vec::new(), pos: 0 })
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.send(buf.to_vec()).map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe reader dropped"))?;
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for PipeReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        while self.pos == self.leftover.len() {
            match self.rx.recv() {
                Ok(v) => {
                    self.leftover = v;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.leftover.len() - self.pos);
        buf[..n].copy_from_slice(&self.leftover[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Two connected in-memory sessions.
pub fn duplex(buffer_size: usize) -> (Session, Session) {
    let (a_tx, a_rx) = pipe();
    let (b_tx, b_rx) = pipe();
    (Session::new(b_rx, a_tx, buffer_size), Session::new(a_rx, b_tx, buffer_size))
}
