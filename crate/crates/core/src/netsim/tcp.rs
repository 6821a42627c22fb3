//! TCP transport: node emitters and the central collector.

use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

use super::assembler::{FeatureFrame, FrameAssembler};
use super::packet::{decode_packet, encode_packet, read_frame, write_frame, FeaturePacket};

/// Sends packets from one node over a single TCP connection.
pub struct NodeEmitter {
    stream: BufWriter<TcpStream>,
    peer: SocketAddr,
}

impl NodeEmitter {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io("<tcp connect>", e))?;
        stream.set_nodelay(true).ok();
        let peer = stream.peer_addr().map_err(|e| Error::io("<tcp peer>", e))?;
        Ok(Self {
            stream: BufWriter::new(stream),
            peer,
        })
    }

    pub fn send(&mut self, packet: &FeaturePacket) -> Result<()> {
        let bytes = encode_packet(packet)?;
        self.send_raw(&bytes)
    }

    /// Sends pre-encoded bytes as one frame (also used to inject corrupt data in tests).
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<()> {
        write_frame(&mut self.stream, bytes).map_err(|e| self.err(e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.stream.flush().map_err(|e| self.err(e))
    }

    fn err(&self, e: std::io::Error) -> Error {
        Error::io(format!("tcp://{}", self.peer), e)
    }
}

impl Drop for NodeEmitter {
    fn drop(&mut self) {
        let _ = self.stream.flush();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectorOptions {
    /// Stop after this many frames have been emitted.
    pub max_frames: Option<usize>,
    /// Stop once at least one node has connected, every connection has
    /// closed and no frame is still waiting for its nodes.
    pub exit_when_idle: bool,
}

impl Default for CollectorOptions {
    fn default() -> Self {
        Self {
            max_frames: None,
            exit_when_idle: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorStats {
    pub connections: usize,
    pub packets: usize,
    pub decode_errors: usize,
    pub frames: usize,
    pub incomplete_frames: usize,
}

enum Event {
    Opened,
    Packet(FeaturePacket),
    DecodeError,
    Closed,
}

/// Central node: accepts one connection per array node and aligns their
/// packets into frames.
///
/// Each connection has its own reader thread; all packets funnel through
/// one channel into a single aggregator, so frame emission is serialized.
pub struct Collector {
    listener: TcpListener,
    assembler: FrameAssembler,
}

impl Collector {
    pub fn bind(addr: impl ToSocketAddrs, assembler: FrameAssembler) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::io("<tcp bind>", e))?;
        Ok(Self {
            listener,
            assembler,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| Error::io("<tcp local addr>", e))
    }

    /// Runs until the stop condition in `opts` is met, handing every
    /// emitted frame to `sink`. Pending frames are flushed on exit.
    pub fn run(
        mut self,
        opts: CollectorOptions,
        mut sink: impl FnMut(&FeatureFrame) -> Result<()>,
    ) -> Result<CollectorStats> {
        let (tx, rx) = mpsc::channel::<Event>();
        let stop = Arc::new(AtomicBool::new(false));
        self.listener
            .set_nonblocking(true)
            .map_err(|e| Error::io("<tcp listener>", e))?;
        let acceptor = {
            let stop = Arc::clone(&stop);
            let listener = self.listener.try_clone().map_err(|e| Error::io("<tcp listener>", e))?;
            thread::spawn(move || accept_loop(listener, tx, stop))
        };

        let start = Instant::now();
        let mut stats = CollectorStats::default();
        let mut open = 0usize;
        let mut emit = |frame: FeatureFrame, stats: &mut CollectorStats| -> Result<()> {
            stats.frames += 1;
            if !frame.complete {
                stats.incomplete_frames += 1;
            }
            sink(&frame)
        };
        // a node that finished before a slower one connected leaves pending
        // frames behind, so idleness also waits for those to complete or time out
        let done = |stats: &CollectorStats, open: usize, assembler: &FrameAssembler| {
            opts.max_frames.is_some_and(|m| stats.frames >= m)
                || (opts.exit_when_idle
                    && stats.connections > 0
                    && open == 0
                    && assembler.pending_timestamps().next().is_none())
        };

        let result = loop {
            let now = start.elapsed();
            let wait = self
                .assembler
                .next_deadline(now)
                .unwrap_or(Duration::from_millis(100))
                .clamp(Duration::from_millis(1), Duration::from_millis(100));
            match rx.recv_timeout(wait) {
                Ok(Event::Opened) => {
                    stats.connections += 1;
                    open += 1;
                }
                Ok(Event::Closed) => open -= 1,
                Ok(Event::DecodeError) => stats.decode_errors += 1,
                Ok(Event::Packet(p)) => {
                    stats.packets += 1;
                    if let Some(frame) = self.assembler.ingest(p, start.elapsed()) {
                        if let Err(e) = emit(frame, &mut stats) {
                            break Err(e);
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break Ok(()),
            }
            let mut failed = None;
            for frame in self.assembler.poll(start.elapsed()) {
                if let Err(e) = emit(frame, &mut stats) {
                    failed = Some(e);
                    break;
                }
            }
            if let Some(e) = failed {
                break Err(e);
            }
            if done(&stats, open, &self.assembler) {
                break Ok(());
            }
        };
        stop.store(true, Ordering::Relaxed);
        let _ = acceptor.join();
        result?;
        if !opts.max_frames.is_some_and(|m| stats.frames >= m) {
            for frame in self.assembler.flush() {
                emit(frame, &mut stats)?;
            }
        }
        Ok(stats)
    }
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<Event>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("node connected from {peer}");
                if tx.send(Event::Opened).is_err() {
                    return;
                }
                let tx = tx.clone();
                thread::spawn(move || read_loop(stream, peer, tx));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}

fn read_loop(stream: TcpStream, peer: SocketAddr, tx: mpsc::Sender<Event>) {
    if let Err(e) = stream.set_nonblocking(false) {
        log::warn!("{peer}: {e}");
    }
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(bytes)) => {
                let event = match decode_packet(&bytes) {
                    Ok(p) => Event::Packet(p),
                    Err(e) => {
                        log::warn!("{peer}: skipping undecodable packet: {e}");
                        Event::DecodeError
                    }
                };
                if tx.send(event).is_err() {
                    return;
                }
            }
            Ok(None) => break,
            Err(e) => {
                log::warn!("{peer}: connection error: {e}");
                break;
            }
        }
    }
    log::info!("node {peer} disconnected");
    let _ = tx.send(Event::Closed);
}
