use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::frame::{encode_frame, FrameDecoder, FrameError};
use super::message::{Body, WireMessage};
use super::service::StoreService;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connect to {addr} failed: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("connection closed by peer")]
    Closed,
    #[error("frame error: {0}")]
    Frame(#[from] FrameError),
    #[error("agent disconnected")]
    Disconnected,
}

impl TransportError {
    /// Errors after which the request may be retried on a fresh connection.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, TransportError::Frame(_))
    }
}

/// Moves one request to the store endpoint and brings back its response.
pub trait TransportAgent: Send {
    fn endpoint(&self) -> String;
    fn is_connected(&self) -> bool;
    fn exchange(&mut self, request: &WireMessage) -> Result<WireMessage, TransportError>;
}

/// Calls the store service directly, without serialization.
#[derive(Debug, Clone)]
pub struct InProcessAgent {
    service: StoreService,
    connected: bool,
}

impl InProcessAgent {
    pub fn new(service: StoreService) -> Self {
        InProcessAgent {
            service,
            connected: true,
        }
    }

    /// Simulates an unreachable store until [`reconnect`](Self::reconnect).
    pub fn disconnect(&mut self) {
        self.connected = false;
    }

    pub fn reconnect(&mut self) {
        self.connected = true;
    }
}

impl TransportAgent for InProcessAgent {
    fn endpoint(&self) -> String {
        "in-process".into()
    }

    fn is_connected(&self) -> bool {
        self.connected
    }

    fn exchange(&mut self, request: &WireMessage) -> Result<WireMessage, TransportError> {
        if !self.connected {
            return Err(TransportError::Disconnected);
        }
        Ok(self.service.handle(request.clone()))
    }
}

/// Length-prefixed frames over one TCP connection, reconnecting lazily.
pub struct TcpAgent {
    addr: String,
    stream: Option<TcpStream>,
    decoder: FrameDecoder,
    connect_timeout: Duration,
    io_timeout: Duration,
    connect_attempts: Arc<AtomicU64>,
}

impl std::fmt::Debug for TcpAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TcpAgent")
            .field("addr", &self.addr)
            .field("connected", &self.stream.is_some())
            .finish()
    }
}

impl TcpAgent {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpAgent {
            addr: addr.into(),
            stream: None,
            decoder: FrameDecoder::new(),
            connect_timeout: Duration::from_secs(2),
            io_timeout: Duration::from_secs(30),
            connect_attempts: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_io_timeout(mut self, t: Duration) -> Self {
        self.io_timeout = t;
        self
    }

    /// Shared counter of connection attempts made by this agent.
    pub fn connect_attempts(&self) -> Arc<AtomicU64> {
        self.connect_attempts.clone()
    }

    fn connect(&mut self) -> Result<&mut TcpStream, TransportError> {
        if self.stream.is_none() {
            self.connect_attempts.fetch_add(1, Ordering::SeqCst);
            let err = |source| TransportError::Connect {
                addr: self.addr.clone(),
                source,
            };
            let addrs: Vec<SocketAddr> = self.addr.to_socket_addrs().map_err(err)?.collect();
            let mut last = std::io::Error::new(ErrorKind::AddrNotAvailable, "no address");
            let mut stream = None;
            for a in addrs {
                match TcpStream::connect_timeout(&a, self.connect_timeout) {
                    Ok(s) => {
                        stream = Some(s);
                        break;
                    }
                    Err(e) => last = e,
                }
            }
            let stream = stream.ok_or_else(|| TransportError::Connect {
                addr: self.addr.clone(),
                source: last,
            })?;
            stream.set_nodelay(true)?;
            self.decoder = FrameDecoder::new();
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().expect("just connected"))
    }

    fn round_trip(&mut self, request: &WireMessage) -> Result<WireMessage, TransportError> {
        let read_timeout = self.io_timeout + request_wait(&request.body);
        let frame = encode_frame(request);
        let stream = self.connect()?;
        stream.set_read_timeout(Some(read_timeout))?;
        stream.write_all(&frame)?;
        let mut buf = [0u8; 8192];
        loop {
            if let Some(msg) = self.decoder.next_message()? {
                return Ok(msg);
            }
            let stream = self.stream.as_mut().ok_or(TransportError::Closed)?;
            let n = stream.read(&mut buf)?;
            if n == 0 {
                return Err(TransportError::Closed);
            }
            self.decoder.feed(&buf[..n]);
        }
    }
}

fn request_wait(body: &Body) -> Duration {
    match body {
        Body::WithdrawDemand { wait_ms, .. } => Duration::from_millis(*wait_ms as u64),
        Body::WithdrawResult {
            wait: true,
            timeout_ms,
            ..
        } => Duration::from_millis(*timeout_ms),
        _ => Duration::ZERO,
    }
}

impl TransportAgent for TcpAgent {
    fn endpoint(&self) -> String {
        self.addr.clone()
    }

    fn is_connected(&self) -> bool {
        self.stream.is_some()
    }

    fn exchange(&mut self, request: &WireMessage) -> Result<WireMessage, TransportError> {
        let out = self.round_trip(request);
        if out.is_err() {
            self.stream = None;
        }
        out
    }
}
