use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Scenario, ZoneData, ZoneEntry, ZoneStatus};
use crate::dns::wire::{decode_query, encode_response, AnswerData, IncomingQuery, UDP_PAYLOAD_LIMIT};
use crate::dns::{ExchangeError, RecordKind, ReverseName, Resolver, Transport, RCODE_NOERROR, RCODE_NXDOMAIN, RCODE_SERVFAIL};

const RCODE_NOTIMP: u16 = 4;
const RCODE_REFUSED: u16 = 5;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolverCounters {
    pub udp: u64,
    pub tcp: u64,
    pub max_in_flight: usize,
}

/// Byte-level scripted resolver. Every exchange decodes a real DNS query
/// and encodes a real response.
pub struct SimResolver {
    scenario: Arc<Scenario>,
    latency: Option<Duration>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    udp: AtomicU64,
    tcp: AtomicU64,
    per_query: Mutex<HashMap<(String, RecordKind, Transport), u64>>,
}

impl SimResolver {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        SimResolver {
            scenario,
            latency: None,
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            udp: AtomicU64::new(0),
            tcp: AtomicU64::new(0),
            per_query: Mutex::new(HashMap::new()),
        }
    }

    /// Holds every exchange for `d` of real time, so overlap is observable.
    pub fn with_latency(mut self, d: Duration) -> Self {
        self.latency = Some(d);
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn counters(&self) -> ResolverCounters {
        ResolverCounters {
            udp: self.udp.load(Ordering::SeqCst),
            tcp: self.tcp.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
        }
    }

    /// Transactions seen for one (name, type) over one transport.
    pub fn transactions(&self, name: &str, kind: RecordKind, transport: Transport) -> u64 {
        let key = (crate::dns::normalize_name(name), kind, transport);
        self.per_query.lock().expect("lock").get(&key).copied().unwrap_or(0)
    }

    /// Total transactions per (name, type) across transports.
    pub fn transaction_counts(&self) -> HashMap<(String, RecordKind), u64> {
        let mut out = HashMap::new();
        for ((n, k, _), c) in self.per_query.lock().expect("lock").iter() {
            *out.entry((n.clone(), *k)).or_default() += c;
        }
        out
    }

    /// Builds the response bytes, or `None` when the script says to stay silent.
    pub fn respond(&self, request: &[u8], transport: Transport) -> Result<Option<Vec<u8>>, ExchangeError> {
        let q = decode_query(request).map_err(|e| ExchangeError::Io(e.to_string()))?;
        if let Some(kind) = q.kind {
            let key = (crate::dns::normalize_name(&q.name), kind, transport);
            *self.per_query.lock().expect("lock").entry(key).or_default() += 1;
        }
        let (rcode, answers, truncate) = match q.kind {
            None => (RCODE_NOTIMP, Vec::new(), false),
            Some(RecordKind::Ptr) => match ReverseName::parse(&q.name) {
                Some(rn) => {
                    let entry = self.scenario.ptr_entry(rn.source());
                    match render(&q.name, entry, |n| AnswerData::Ptr(n.clone())) {
                        Some(r) => r,
                        None => return Ok(None),
                    }
                }
                None => (RCODE_NXDOMAIN, Vec::new(), false),
            },
            Some(RecordKind::Aaaa) => {
                let fwd = self.scenario.aaaa_answer(&q.name);
                match render(&fwd.terminal, &fwd.entry, |a| AnswerData::Aaaa(*a)) {
                    Some((rcode, answers, t)) => (rcode, with_chain(&fwd.chain, answers), t),
                    None => return Ok(None),
                }
            }
            Some(RecordKind::A) => {
                let fwd = self.scenario.a_answer(&q.name);
                match render(&fwd.terminal, &fwd.entry, |a| AnswerData::A(*a)) {
                    Some((rcode, answers, t)) => (rcode, with_chain(&fwd.chain, answers), t),
                    None => return Ok(None),
                }
            }
        };
        let bytes = encode(&q, rcode, &answers, truncate && transport == Transport::Udp)?;
        if transport == Transport::Udp && bytes.len() > UDP_PAYLOAD_LIMIT {
            return encode(&q, rcode, &answers, true).map(Some);
        }
        Ok(Some(bytes))
    }
}

fn encode(q: &IncomingQuery, rcode: u16, answers: &[(String, AnswerData)], truncate: bool) -> Result<Vec<u8>, ExchangeError> {
    encode_response(q, rcode, answers, truncate).map_err(|e| ExchangeError::Io(e.to_string()))
}

type Rendered = (u16, Vec<(String, AnswerData)>, bool);

fn render<T>(owner: &str, entry: &ZoneEntry<T>, data: impl Fn(&T) -> AnswerData) -> Option<Rendered> {
    let (rcode, answers) = match &entry.data {
        ZoneData::Answers(v) => (RCODE_NOERROR, v.iter().map(|x| (owner.to_string(), data(x))).collect()),
        ZoneData::Status(ZoneStatus::NxDomain) => (RCODE_NXDOMAIN, Vec::new()),
        ZoneData::Status(ZoneStatus::ServFail) => (RCODE_SERVFAIL, Vec::new()),
        ZoneData::Status(ZoneStatus::NoData) => (RCODE_NOERROR, Vec::new()),
        ZoneData::Status(ZoneStatus::Refused) => (RCODE_REFUSED, Vec::new()),
        ZoneData::Status(ZoneStatus::Timeout) => return None,
    };
    Some((rcode, answers, entry.truncate))
}

fn with_chain(chain: &[(String, String)], answers: Vec<(String, AnswerData)>) -> Vec<(String, AnswerData)> {
    chain
        .iter()
        .map(|(owner, target)| (owner.clone(), AnswerData::Cname(target.clone())))
        .chain(answers)
        .collect()
}

struct Gauge<'a>(&'a AtomicUsize);

impl Drop for Gauge<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Resolver for SimResolver {
    fn exchange(&self, request: &[u8], transport: Transport, _timeout: Duration) -> Result<Vec<u8>, ExchangeError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _gauge = Gauge(&self.in_flight);
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        match transport {
            Transport::Udp => self.udp.fetch_add(1, Ordering::SeqCst),
            Transport::Tcp => self.tcp.fetch_add(1, Ordering::SeqCst),
        };
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        self.respond(request, transport)?.ok_or(ExchangeError::Timeout)
    }
}

/// A [`SimResolver`] listening on loopback UDP and TCP, same port.
pub struct SimServer {
    addr: SocketAddr,
    resolver: Arc<SimResolver>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl SimServer {
    pub fn start(resolver: Arc<SimResolver>) -> io::Result<SimServer> {
        Self::bind(resolver, "127.0.0.1:0".parse().expect("literal"))
    }

    pub fn bind(resolver: Arc<SimResolver>, want: SocketAddr) -> io::Result<SimServer> {
        let (udp, tcp) = bind_pair(want)?;
        let addr = udp.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        udp.set_read_timeout(Some(Duration::from_millis(50)))?;
        tcp.set_nonblocking(true)?;

        let mut threads = Vec::new();
        {
            let (resolver, stop) = (resolver.clone(), stop.clone());
            threads.push(std::thread::spawn(move || {
                let mut buf = vec![0u8; 65_535];
                while !stop.load(Ordering::SeqCst) {
                    let Ok((n, peer)) = udp.recv_from(&mut buf) else {
                        continue;
                    };
                    if let Ok(resp) = resolver.exchange(&buf[..n], Transport::Udp, Duration::ZERO) {
                        let _ = udp.send_to(&resp, peer);
                    }
                }
            }));
        }
        {
            let (resolver, stop) = (resolver.clone(), stop.clone());
            threads.push(std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match tcp.accept() {
                        Ok((stream, _)) => {
                            let resolver = resolver.clone();
                            std::thread::spawn(move || {
                                let _ = serve_tcp(stream, &resolver);
                            });
                        }
                        Err(_) => std::thread::sleep(Duration::from_millis(5)),
                    }
                }
            }));
        }
        Ok(SimServer {
            addr,
            resolver,
            stop,
            threads,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn resolver(&self) -> &SimResolver {
        &self.resolver
    }

    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.halt();
    }
}

fn bind_pair(want: SocketAddr) -> io::Result<(UdpSocket, TcpListener)> {
    if want.port() != 0 {
        return Ok((UdpSocket::bind(want)?, TcpListener::bind(want)?));
    }
    let mut last = None;
    for _ in 0..20 {
        let udp = UdpSocket::bind(want)?;
        match TcpListener::bind(udp.local_addr()?) {
            Ok(tcp) => return Ok((udp, tcp)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| io::Error::other("no free port")))
}

fn serve_tcp(mut stream: TcpStream, resolver: &SimResolver) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    loop {
        let mut len = [0u8; 2];
        if stream.read_exact(&mut len).is_err() {
            return Ok(());
        }
        let mut req = vec![0u8; usize::from(u16::from_be_bytes(len))];
        stream.read_exact(&mut req)?;
        let Ok(resp) = resolver.exchange(&req, Transport::Tcp, Duration::ZERO) else {
            return Ok(());
        };
        let mut framed = (resp.len() as u16).to_be_bytes().to_vec();
        framed.extend_from_slice(&resp);
        stream.write_all(&framed)?;
    }
}
