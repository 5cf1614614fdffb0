use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;

use super::frame::{encode_frame, FrameDecoder};
use super::message::{Body, ErrorCode, WireMessage};
use super::service::StoreService;

const ACCEPT_POLL: Duration = Duration::from_millis(10);

struct Acceptor {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<()>,
}

type Connections = Arc<Mutex<HashMap<u64, TcpStream>>>;

/// TCP endpoint of the store. Each acceptor is one thread accepting on the
/// shared listener; every connection gets its own serving thread and is
/// answered strictly in request order.
pub struct StoreServer {
    listener: TcpListener,
    local_addr: SocketAddr,
    service: StoreService,
    acceptors: Vec<Acceptor>,
    connections: Connections,
    next_conn: Arc<AtomicU64>,
}

impl std::fmt::Debug for StoreServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreServer")
            .field("local_addr", &self.local_addr)
            .field("acceptors", &self.acceptors.len())
            .finish()
    }
}

impl StoreServer {
    /// Binds without starting any acceptor.
    pub fn bind(addr: &str, service: StoreService) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        Ok(StoreServer {
            listener,
            local_addr,
            service,
            acceptors: Vec::new(),
            connections: Arc::default(),
            next_conn: Arc::new(AtomicU64::new(0)),
        })
    }

    /// Binds and starts one acceptor.
    pub fn start(addr: &str, service: StoreService) -> std::io::Result<Self> {
        let mut s = Self::bind(addr, service)?;
        s.add_acceptor()?;
        Ok(s)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn acceptors(&self) -> usize {
        self.acceptors.len()
    }

    pub fn add_acceptor(&mut self) -> std::io::Result<()> {
        let listener = self.listener.try_clone()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let service = self.service.clone();
        let conns = self.connections.clone();
        let next = self.next_conn.clone();
        let handle = std::thread::Builder::new()
            .name(format!("dst-accept-{}", self.local_addr.port()))
            .spawn(move || accept_loop(listener, flag, service, conns, next))?;
        self.acceptors.push(Acceptor { stop, handle });
        Ok(())
    }

    /// Stops the most recently added acceptor. Returns false when none run.
    pub fn remove_acceptor(&mut self) -> bool {
        match self.acceptors.pop() {
            Some(a) => {
                a.stop.store(true, Ordering::SeqCst);
                let _ = a.handle.join();
                true
            }
            None => false,
        }
    }

    /// Stops all acceptors and closes every open connection.
    pub fn shutdown(&mut self) {
        while self.remove_acceptor() {}
        for (_, c) in self.connections.lock().drain() {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    service: StoreService,
    conns: Connections,
    next: Arc<AtomicU64>,
) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next.fetch_add(1, Ordering::SeqCst);
                if let Ok(clone) = stream.try_clone() {
                    conns.lock().insert(id, clone);
                }
                let service = service.clone();
                let conns = conns.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("dst-conn-{id}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &service) {
                            log::debug!("connection {peer} closed: {e}");
                        }
                        conns.lock().remove(&id);
                    });
                if let Err(e) = spawned {
                    log::warn!("cannot spawn connection thread: {e}");
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_connection(mut stream: TcpStream, service: &StoreService) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 16 * 1024];
    loop {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        decoder.feed(&buf[..n]);
        // A partial frame simply waits for more bytes.
        loop {
            match decoder.next_message() {
                Ok(Some(req)) => {
                    let resp = service.handle(req);
                    stream.write_all(&encode_frame(&resp))?;
                }
                Ok(None) => break,
                Err(e) => {
                    let resp = WireMessage::new(0, Body::error(ErrorCode::BadRequest, e.to_string()));
                    stream.write_all(&encode_frame(&resp))?;
                    return Err(std::io::Error::new(ErrorKind::InvalidData, e));
                }
            }
        }
    }
}
