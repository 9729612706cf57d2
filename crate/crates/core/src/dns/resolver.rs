use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::Transport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExchangeError {
    #[error("no response before timeout")]
    Timeout,
    #[error("transport error: {0}")]
    Io(String),
}

impl From<io::Error> for ExchangeError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ExchangeError::Timeout,
            _ => ExchangeError::Io(e.to_string()),
        }
    }
}

/// One request/response transaction with a recursive resolver.
///
/// Implementations must be safe to call from many threads at once.
pub trait Resolver: Send + Sync {
    fn exchange(&self, request: &[u8], transport: Transport, timeout: Duration) -> Result<Vec<u8>, ExchangeError>;
}

/// Standard DNS over UDP/TCP to a fixed resolver endpoint.
#[derive(Debug, Clone)]
pub struct NetworkResolver {
    endpoint: SocketAddr,
}

impl NetworkResolver {
    pub fn new(endpoint: SocketAddr) -> Self {
        NetworkResolver { endpoint }
    }

    fn udp(&self, request: &[u8], timeout: Duration) -> Result<Vec<u8>, ExchangeError> {
        let bind: SocketAddr = if self.endpoint.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        let sock = UdpSocket::bind(bind)?;
        sock.connect(self.endpoint)?;
        sock.send(request)?;
        let deadline = Instant::now() + timeout;
        let mut buf = vec![0u8; 65_535];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ExchangeError::Timeout);
            }
            sock.set_read_timeout(Some(left))?;
            let n = sock.recv(&mut buf)?;
            // Stray datagrams with another id are ignored, not fatal.
            if n >= 2 && buf[..2] == request[..2] {
                buf.truncate(n);
                return Ok(buf);
            }
        }
    }

    fn tcp(&self, request: &[u8], timeout: Duration) -> Result<Vec<u8>, ExchangeError> {
        let len = u16::try_from(request.len()).map_err(|_| ExchangeError::Io("request too large".into()))?;
        let mut stream = TcpStream::connect_timeout(&self.endpoint, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        let mut framed = Vec::with_capacity(request.len() + 2);
        framed.extend_from_slice(&len.to_be_bytes());
        framed.extend_from_slice(request);
        stream.write_all(&framed)?;
        let mut len_buf = [0u8; 2];
        stream.read_exact(&mut len_buf)?;
        let mut body = vec![0u8; usize::from(u16::from_be_bytes(len_buf))];
        stream.read_exact(&mut body)?;
        Ok(body)
    }
}

impl Resolver for NetworkResolver {
    fn exchange(&self, request: &[u8], transport: Transport, timeout: Duration) -> Result<Vec<u8>, ExchangeError> {
        match transport {
            Transport::Udp => self.udp(request, timeout),
            Transport::Tcp => self.tcp(request, timeout),
        }
    }
}
