//! Real network backend: ICMP echo over datagram or raw sockets, plain
//! TCP connects.

use std::io;
use std::mem::MaybeUninit;
use std::net::{IpAddr, Shutdown, SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::{ConnectResult, EchoResult, ProbeTransport, TransportError};

const ECHO_REQUEST_V4: u8 = 8;
const ECHO_REPLY_V4: u8 = 0;
const ECHO_REQUEST_V6: u8 = 128;
const ECHO_REPLY_V6: u8 = 129;

#[derive(Debug, Clone)]
pub struct SystemTransport {
    ident: u16,
}

impl Default for SystemTransport {
    fn default() -> Self {
        SystemTransport {
            ident: (std::process::id() & 0xffff) as u16,
        }
    }
}

impl SystemTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tries an unprivileged ICMP socket first, then a raw one.
    fn icmp_socket(v6: bool) -> Result<(Socket, bool), TransportError> {
        let (domain, proto) = if v6 {
            (Domain::IPV6, Protocol::ICMPV6)
        } else {
            (Domain::IPV4, Protocol::ICMPV4)
        };
        match Socket::new(domain, Type::DGRAM, Some(proto)) {
            Ok(s) => Ok((s, false)),
            Err(dgram) => match Socket::new(domain, Type::RAW, Some(proto)) {
                Ok(s) => Ok((s, true)),
                Err(raw) if is_permission(&raw) || is_permission(&dgram) => {
                    Err(TransportError::Permission(format!("{dgram}; {raw}")))
                }
                Err(raw) => Err(TransportError::Other(raw.to_string())),
            },
        }
    }
}

fn is_permission(e: &io::Error) -> bool {
    e.kind() == io::ErrorKind::PermissionDenied || matches!(e.raw_os_error(), Some(1) | Some(13))
}

fn checksum(data: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in data.chunks(2) {
        let word = u16::from_be_bytes([chunk[0], *chunk.get(1).unwrap_or(&0)]);
        sum += u32::from(word);
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn echo_packet(v6: bool, ident: u16, seq: u16) -> Vec<u8> {
    let mut pkt = vec![if v6 { ECHO_REQUEST_V6 } else { ECHO_REQUEST_V4 }, 0, 0, 0];
    pkt.extend_from_slice(&ident.to_be_bytes());
    pkt.extend_from_slice(&seq.to_be_bytes());
    pkt.extend_from_slice(b"ptrsweep");
    // The kernel fills in the ICMPv6 checksum.
    if !v6 {
        let c = checksum(&pkt);
        pkt[2..4].copy_from_slice(&c.to_be_bytes());
    }
    pkt
}

impl ProbeTransport for SystemTransport {
    fn echo(&self, target: IpAddr, seq: u16, timeout: Duration) -> Result<EchoResult, TransportError> {
        let v6 = target.is_ipv6();
        let (sock, raw) = Self::icmp_socket(v6)?;
        let dest = SockAddr::from(SocketAddr::new(target, 0));
        let pkt = echo_packet(v6, self.ident, seq);
        if let Err(e) = sock.send_to(&pkt, &dest) {
            return match e.raw_os_error() {
                Some(101) | Some(113) => Ok(EchoResult::NoReply),
                _ if is_permission(&e) => Err(TransportError::Permission(e.to_string())),
                _ => Err(TransportError::Other(e.to_string())),
            };
        }
        let deadline = Instant::now() + timeout;
        let mut buf = [MaybeUninit::<u8>::uninit(); 1500];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(EchoResult::NoReply);
            }
            sock.set_read_timeout(Some(left)).map_err(|e| TransportError::Other(e.to_string()))?;
            let (n, from) = match sock.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(EchoResult::NoReply)
                }
                Err(e) => return Err(TransportError::Other(e.to_string())),
            };
            // SAFETY: recv_from initialized the first n bytes.
            let data: Vec<u8> = buf[..n].iter().map(|b| unsafe { b.assume_init() }).collect();
            if from.as_socket().map(|s| s.ip()) != Some(target) {
                continue;
            }
            // Raw IPv4 sockets deliver the IP header too.
            let icmp = if raw && !v6 {
                let ihl = usize::from(data.first().map_or(0, |b| b & 0x0f)) * 4;
                data.get(ihl..).unwrap_or(&[])
            } else {
                &data[..]
            };
            let want = if v6 { ECHO_REPLY_V6 } else { ECHO_REPLY_V4 };
            if icmp.len() >= 8 && icmp[0] == want && icmp[6..8] == seq.to_be_bytes() {
                // Datagram sockets rewrite the identifier, so only raw ones check it.
                if !raw || icmp[4..6] == self.ident.to_be_bytes() {
                    return Ok(EchoResult::Reply);
                }
            }
        }
    }

    fn connect(&self, target: SocketAddr, timeout: Duration) -> Result<ConnectResult, TransportError> {
        match TcpStream::connect_timeout(&target, timeout) {
            Ok(stream) => {
                let _ = stream.shutdown(Shutdown::Both);
                Ok(ConnectResult::Accepted)
            }
            Err(e) => match (e.kind(), e.raw_os_error()) {
                (io::ErrorKind::ConnectionRefused, _) => Ok(ConnectResult::Refused),
                // EMFILE, ENFILE, ENOBUFS, EADDRNOTAVAIL
                (_, Some(24 | 23 | 105 | 99)) => Err(TransportError::LocalResource(e.to_string())),
                (io::ErrorKind::PermissionDenied, _) => Err(TransportError::Permission(e.to_string())),
                _ => Ok(ConnectResult::TimedOut),
            },
        }
    }

    fn pause(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn checksum_of_known_packet() {
        let pkt = echo_packet(false, 0x1234, 1);
        assert_eq!(checksum(&pkt), 0);
    }

    #[test]
    fn loopback_connects() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let t = SystemTransport::new();
        assert_eq!(t.connect(addr, Duration::from_secs(2)).unwrap(), ConnectResult::Accepted);
        drop(listener);
        assert_eq!(t.connect(addr, Duration::from_secs(2)).unwrap(), ConnectResult::Refused);
    }
}
