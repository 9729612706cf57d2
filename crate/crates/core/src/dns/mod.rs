//! DNS query construction, execution and response taxonomy.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

mod engine;
mod resolver;
pub mod wire;

pub use engine::{BatchStats, DnsEngine, EngineConfig};
pub use resolver::{ExchangeError, NetworkResolver, Resolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordKind {
    #[serde(rename = "PTR")]
    Ptr,
    #[serde(rename = "A")]
    A,
    #[serde(rename = "AAAA")]
    Aaaa,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Ptr => "PTR",
            RecordKind::A => "A",
            RecordKind::Aaaa => "AAAA",
        })
    }
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PTR" => Ok(RecordKind::Ptr),
            "A" => Ok(RecordKind::A),
            "AAAA" => Ok(RecordKind::Aaaa),
            other => Err(format!("unsupported record type {other:?}")),
        }
    }
}

/// Normalized outcome of one completed query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResponseCategory {
    NoError,
    NoDomain,
    ServFail,
    NoData,
    Timeout,
    Other,
}

impl ResponseCategory {
    pub const ALL: [ResponseCategory; 6] = [
        ResponseCategory::NoError,
        ResponseCategory::NoDomain,
        ResponseCategory::ServFail,
        ResponseCategory::NoData,
        ResponseCategory::Timeout,
        ResponseCategory::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ResponseCategory::NoError => "NoError",
            ResponseCategory::NoDomain => "NoDomain",
            ResponseCategory::ServFail => "ServFail",
            ResponseCategory::NoData => "NoData",
            ResponseCategory::Timeout => "Timeout",
            ResponseCategory::Other => "Other",
        }
    }
}

impl fmt::Display for ResponseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const RCODE_NOERROR: u16 = 0;
pub const RCODE_SERVFAIL: u16 = 2;
pub const RCODE_NXDOMAIN: u16 = 3;

/// Maps a response to its category. Total over all inputs.
///
/// `answer_count` counts only records of the queried type, so a NOERROR
/// response carrying just a CNAME is NoData.
pub fn classify_response(rcode: u16, answer_count: usize, timed_out: bool) -> ResponseCategory {
    if timed_out {
        return ResponseCategory::Timeout;
    }
    match rcode {
        RCODE_NXDOMAIN => ResponseCategory::NoDomain,
        RCODE_SERVFAIL => ResponseCategory::ServFail,
        RCODE_NOERROR if answer_count == 0 => ResponseCategory::NoData,
        RCODE_NOERROR => ResponseCategory::NoError,
        _ => ResponseCategory::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Udp,
    Tcp,
}

/// `d.c.b.a.in-addr.arpa` name for an IPv4 address.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReverseName {
    source: Ipv4Addr,
    name: String,
}

impl ReverseName {
    pub fn source(&self) -> Ipv4Addr {
        self.source
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Recovers the address from a reverse name; tolerates case and a trailing dot.
    pub fn parse(name: &str) -> Option<ReverseName> {
        let lower = name.trim_end_matches('.').to_ascii_lowercase();
        let stem = lower.strip_suffix(".in-addr.arpa")?;
        let mut octets = [0u8; 4];
        let mut parts = stem.split('.');
        for slot in octets.iter_mut().rev() {
            let part = parts.next()?;
            if part.is_empty() || part.len() > 3 || !part.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            *slot = part.parse().ok()?;
        }
        if parts.next().is_some() {
            return None;
        }
        Some(reverse_name(Ipv4Addr::from(octets)))
    }
}

impl fmt::Display for ReverseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

pub fn reverse_name(addr: Ipv4Addr) -> ReverseName {
    let [a, b, c, d] = addr.octets();
    ReverseName {
        source: addr,
        name: format!("{d}.{c}.{b}.{a}.in-addr.arpa"),
    }
}

/// Lowercase with one trailing dot removed; the root name becomes `""`.
pub fn normalize_name(name: &str) -> String {
    let lower = name.to_ascii_lowercase();
    match lower.strip_suffix('.') {
        Some(stripped) => stripped.to_string(),
        None => lower,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DnsQuery {
    pub name: String,
    pub kind: RecordKind,
}

impl DnsQuery {
    pub fn new(name: impl Into<String>, kind: RecordKind) -> Self {
        DnsQuery {
            name: name.into(),
            kind,
        }
    }

    pub fn ptr(addr: Ipv4Addr) -> Self {
        DnsQuery::new(reverse_name(addr).name, RecordKind::Ptr)
    }

    pub(crate) fn cache_key(&self) -> (String, RecordKind) {
        (normalize_name(&self.name), self.kind)
    }
}

/// One outcome per completed query. `answers` is non-empty iff the
/// category is NoError.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub name: String,
    pub kind: RecordKind,
    pub category: ResponseCategory,
    pub answers: Vec<String>,
    pub transport: Transport,
    #[serde(default)]
    pub cached: bool,
    #[serde(default)]
    pub cname_chain: bool,
    #[serde(default)]
    pub rcode: Option<u16>,
    pub ts_us: u64,
}
