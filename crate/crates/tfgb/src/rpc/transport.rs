//! Pluggable reliable byte-stream transport.
//!
//! The traits below are the seam where alternative transports (RDMA-class
//! fabrics, in-process pipes for tests) would attach. The shipped
//! implementation is TCP with Nagle's algorithm disabled so small frames
//! keep their latency fidelity. Every stream is wrapped in a byte counter
//! pair, which is what the monitor reports as network utilization: exact,
//! portable, and attributable to this process alone.

use super::Endpoint;
use std::io::{self, IoSlice, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// An established reliable byte stream with vectored-write capability.
pub trait TransportStream: Read + Write + Send {
    /// A handle that can shut the stream down from another thread.
    fn shutdown_token(&self) -> io::Result<Box<dyn ShutdownToken>>;
}

/// Cross-thread shutdown handle for one stream.
pub trait ShutdownToken: Send + Sync {
    fn shutdown(&self) -> io::Result<()>;
}

/// A bound listener producing streams.
pub trait TransportListener: Send {
    fn accept(&self) -> io::Result<Box<dyn TransportStream>>;
    fn local_endpoint(&self) -> io::Result<Endpoint>;
}

/// Factory for listeners and outbound streams.
pub trait Transport: Send + Sync {
    fn listen(&self, host: &str, port: u16) -> io::Result<Box<dyn TransportListener>>;
    fn connect(&self, endpoint: &Endpoint) -> io::Result<Box<dyn TransportStream>>;
}

/// TCP transport with `TCP_NODELAY` set on both sides.
#[derive(Debug, Default, Clone, Copy)]
pub struct TcpTransport;

impl Transport for TcpTransport {
    fn listen(&self, host: &str, port: u16) -> io::Result<Box<dyn TransportListener>> {
        let listener = TcpListener::bind((host, port))?;
        Ok(Box::new(TcpTransportListener { listener }))
    }

    fn connect(&self, endpoint: &Endpoint) -> io::Result<Box<dyn TransportStream>> {
        let stream = TcpStream::connect((endpoint.host.as_str(), endpoint.port))?;
        stream.set_nodelay(true)?;
        Ok(Box::new(stream))
    }
}

struct TcpTransportListener {
    listener: TcpListener,
}

impl TransportListener for TcpTransportListener {
    fn accept(&self) -> io::Result<Box<dyn TransportStream>> {
        let (stream, _) = self.listener.accept()?;
        stream.set_nodelay(true)?;
        Ok(Box::new(stream))
    }

    fn local_endpoint(&self) -> io::Result<Endpoint> {
        let addr = self.listener.local_addr()?;
        Endpoint::new(addr.ip().to_string(), addr.port())
            .map_err(|e| io::Error::other(e.to_string()))
    }
}

impl TransportStream for TcpStream {
    fn shutdown_token(&self) -> io::Result<Box<dyn ShutdownToken>> {
        Ok(Box::new(TcpShutdownToken {
            stream: self.try_clone()?,
        }))
    }
}

struct TcpShutdownToken {
    stream: TcpStream,
}

impl ShutdownToken for TcpShutdownToken {
    fn shutdown(&self) -> io::Result<()> {
        self.stream.shutdown(Shutdown::Both)
    }
}

/// Cumulative transmitted/received byte counters, shared between a stream
/// and its observers (the monitor).
#[derive(Debug, Clone, Default)]
pub struct NetCounters {
    tx: Arc<AtomicU64>,
    rx: Arc<AtomicU64>,
}

impl NetCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tx_bytes(&self) -> u64 {
        self.tx.load(Ordering::Relaxed)
    }

    pub fn rx_bytes(&self) -> u64 {
        self.rx.load(Ordering::Relaxed)
    }

    fn add_tx(&self, n: u64) {
        self.tx.fetch_add(n, Ordering::Relaxed);
    }

    fn add_rx(&self, n: u64) {
        self.rx.fetch_add(n, Ordering::Relaxed);
    }
}

/// Stream wrapper that counts every byte moved in either direction.
pub struct CountingStream {
    inner: Box<dyn TransportStream>,
    counters: NetCounters,
}

impl CountingStream {
    pub fn new(inner: Box<dyn TransportStream>, counters: NetCounters) -> Self {
        CountingStream { inner, counters }
    }

    pub fn counters(&self) -> &NetCounters {
        &self.counters
    }

    pub fn shutdown_token(&self) -> io::Result<Box<dyn ShutdownToken>> {
        self.inner.shutdown_token()
    }
}

impl Read for CountingStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.counters.add_rx(n as u64);
        Ok(n)
    }
}

impl Write for CountingStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.counters.add_tx(n as u64);
        Ok(n)
    }

    // Keep the vectored path vectored; the default forwards to write().
    fn write_vectored(&mut self, bufs: &[IoSlice<'_>]) -> io::Result<usize> {
        let n = self.inner.write_vectored(bufs)?;
        self.counters.add_tx(n as u64);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Write every slice fully, advancing across partial vectored writes.
pub fn write_all_vectored<W: Write>(writer: &mut W, slices: &[IoSlice<'_>]) -> io::Result<()> {
    let mut slices: Vec<IoSlice<'_>> = slices.to_vec();
    let mut remaining: &mut [IoSlice<'_>] = &mut slices;
    while !remaining.is_empty() {
        let n = writer.write_vectored(remaining)?;
        if n == 0 {
            return Err(io::Error::new(
                io::ErrorKind::WriteZero,
                "vectored write returned zero",
            ));
        }
        IoSlice::advance_slices(&mut remaining, n);
    }
    Ok(())
}
