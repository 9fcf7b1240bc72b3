use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::{render_exposition, SnapshotCell};

pub const CONTENT_TYPE: &str = "text/plain; version=0.0.4";
pub const DEFAULT_PORT: u16 = 9464;
const MAX_HEADER_BYTES: usize = 16 * 1024;

/// Blocking scrape endpoint serving `GET /metrics` and `GET /healthz`, one
/// connection at a time on the calling thread.
pub struct MetricsServer {
    listener: TcpListener,
    shutdown: Arc<AtomicBool>,
}

/// Stops a running [`MetricsServer`] from another thread.
#[derive(Clone)]
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
}

impl ServerHandle {
    pub fn stop(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl MetricsServer {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(MetricsServer {
            listener: TcpListener::bind(addr)?,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn handle(&self) -> io::Result<ServerHandle> {
        let mut addr = self.local_addr()?;
        if addr.ip().is_unspecified() {
            addr.set_ip(std::net::Ipv4Addr::LOCALHOST.into());
        }
        Ok(ServerHandle {
            addr,
            shutdown: self.shutdown.clone(),
        })
    }

    /// Serves until [`ServerHandle::stop`] is called.
    pub fn serve(self, cell: Arc<SnapshotCell>) {
        for conn in self.listener.incoming() {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    if let Err(e) = handle_connection(stream, &cell) {
                        log::debug!("scrape connection failed: {e}");
                    }
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    }
}

fn respond(stream: &mut TcpStream, status: &str, content_type: &str, body: &[u8]) -> io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body)?;
    stream.flush()
}

fn handle_connection(mut stream: TcpStream, cell: &SnapshotCell) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    // drain headers
    let mut seen = request_line.len();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        seen += n;
        if n == 0 || line == "\r\n" || line == "\n" || seen > MAX_HEADER_BYTES {
            break;
        }
    }
    let mut parts = request_line.split_whitespace();
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let path = target.split('?').next().unwrap_or("");
    match (method, path) {
        ("GET", "/metrics") => {
            let samples = cell.load();
            let body = render_exposition(&samples);
            respond(&mut stream, "200 OK", CONTENT_TYPE, body.as_bytes())
        }
        ("GET", "/healthz") => respond(&mut stream, "200 OK", "text/plain", b"ok\n"),
        ("GET", _) => respond(&mut stream, "404 Not Found", "text/plain", b"not found\n"),
        _ => respond(&mut stream, "405 Method Not Allowed", "text/plain", b"method not allowed\n"),
    }
}
