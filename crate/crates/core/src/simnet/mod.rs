//! Scripted offline network: a DNS resolver and a probe transport driven by
//! a line-oriented scenario file.
//!
//! # Scenario grammar
//!
//! One directive per line; `#` starts a comment. Names are case-insensitive
//! and a lone `.` stands for the empty (root) name.
//!
//! ```text
//! seed <u64>
//! epoch <unix-seconds>                     virtual clock start
//! route <prefix> <asn>                     routing table entry
//! country <asn> <CC>                       registry country for an ASN
//! ptr <ipv4|ipv4-prefix> [+tc] <name>...   PTR answers
//! ptr <ipv4|ipv4-prefix> [+tc] <STATUS>
//! aaaa <name> [+tc] <ipv6>... | <STATUS>
//! a <name> [+tc] <ipv4>... | <STATUS>
//! cname <name> <target>
//! echo <addr> all | none | <pattern>       pattern: x = reply, - = silent, per request
//! tcp <addr> <port|*> accept | refuse | drop
//! default ptr|aaaa|a <STATUS>
//! default echo all | none | <pattern>
//! default tcp accept | refuse | drop
//! ```
//!
//! `STATUS` is one of `NXDOMAIN`, `SERVFAIL`, `NODATA`, `TIMEOUT`, `REFUSED`.
//! `+tc` marks the answer as too large for UDP, forcing a TCP retry. A PTR
//! rule for a prefix applies to every address in it; the most specific
//! rule wins. Unlisted lookups fall back to the defaults, which start as
//! `NXDOMAIN`, echo `none` and tcp `drop`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dns::normalize_name;
use crate::routing::{AsnCountryMap, CountryCode, Prefix, PrefixMap, RoutingTable, TableLoadReport};
use crate::Asn;

mod resolver;
mod transport;

pub use resolver::{ResolverCounters, SimResolver, SimServer};
pub use transport::SimTransport;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZoneStatus {
    NxDomain,
    ServFail,
    NoData,
    Timeout,
    Refused,
}

impl FromStr for ZoneStatus {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_uppercase().as_str() {
            "NXDOMAIN" => Ok(ZoneStatus::NxDomain),
            "SERVFAIL" => Ok(ZoneStatus::ServFail),
            "NODATA" => Ok(ZoneStatus::NoData),
            "TIMEOUT" => Ok(ZoneStatus::Timeout),
            "REFUSED" => Ok(ZoneStatus::Refused),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZoneData<T> {
    Answers(Vec<T>),
    Status(ZoneStatus),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneEntry<T> {
    pub data: ZoneData<T>,
    pub truncate: bool,
}

impl<T> ZoneEntry<T> {
    fn status(s: ZoneStatus) -> Self {
        ZoneEntry {
            data: ZoneData::Status(s),
            truncate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EchoScript {
    All,
    None,
    /// Reply to request `i` iff `pattern[i]`; later requests go unanswered.
    Pattern(Vec<bool>),
}

impl EchoScript {
    pub fn replies_to(&self, seq: u16) -> bool {
        match self {
            EchoScript::All => true,
            EchoScript::None => false,
            EchoScript::Pattern(p) => p.get(usize::from(seq)).copied().unwrap_or(false),
        }
    }
}

impl FromStr for EchoScript {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(EchoScript::All),
            "none" => Ok(EchoScript::None),
            p if !p.is_empty() && p.bytes().all(|b| b == b'x' || b == b'-') => {
                Ok(EchoScript::Pattern(p.bytes().map(|b| b == b'x').collect()))
            }
            other => Err(format!("bad echo script {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpBehavior {
    Accept,
    Refuse,
    Drop,
}

impl FromStr for TcpBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accept" => Ok(TcpBehavior::Accept),
            "refuse" => Ok(TcpBehavior::Refuse),
            "drop" => Ok(TcpBehavior::Drop),
            other => Err(format!("bad tcp behavior {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub epoch: Duration,
    routes: Vec<(Prefix, Asn)>,
    countries: Vec<(Asn, CountryCode)>,
    ptr: PrefixMap<ZoneEntry<String>>,
    aaaa: HashMap<String, ZoneEntry<Ipv6Addr>>,
    a: HashMap<String, ZoneEntry<Ipv4Addr>>,
    cname: HashMap<String, String>,
    echo: HashMap<IpAddr, EchoScript>,
    tcp: HashMap<(IpAddr, Option<u16>), TcpBehavior>,
    default_ptr: ZoneEntry<String>,
    default_aaaa: ZoneEntry<Ipv6Addr>,
    default_a: ZoneEntry<Ipv4Addr>,
    default_echo: EchoScript,
    default_tcp: TcpBehavior,
    digest: String,
}

/// Where a forward lookup ends after following CNAMEs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardAnswer<T> {
    /// `(owner, target)` for each CNAME followed.
    pub chain: Vec<(String, String)>,
    pub terminal: String,
    pub entry: ZoneEntry<T>,
}

fn parse_name(token: &str) -> String {
    if token == "." {
        String::new()
    } else {
        normalize_name(token)
    }
}

fn parse_asn(token: &str) -> Option<Asn> {
    token.strip_prefix("AS").unwrap_or(token).parse().ok().map(Asn)
}

fn zone_entry<T, F>(tokens: &[&str], parse: F) -> Result<ZoneEntry<T>, String>
where
    F: Fn(&str) -> Result<T, String>,
{
    let (truncate, rest) = match tokens.first() {
        Some(&"+tc") => (true, &tokens[1..]),
        _ => (false, tokens),
    };
    match rest {
        [] => Err("missing answers or status".into()),
        [one] if one.parse::<ZoneStatus>().is_ok() => Ok(ZoneEntry {
            data: ZoneData::Status(one.parse().expect("checked")),
            truncate,
        }),
        many => {
            let answers = many.iter().map(|t| parse(t)).collect::<Result<Vec<T>, String>>()?;
            Ok(ZoneEntry {
                data: ZoneData::Answers(answers),
                truncate,
            })
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario {
            seed: 0,
            epoch: Duration::ZERO,
            routes: Vec::new(),
            countries: Vec::new(),
            ptr: PrefixMap::new(),
            aaaa: HashMap::new(),
            a: HashMap::new(),
            cname: HashMap::new(),
            echo: HashMap::new(),
            tcp: HashMap::new(),
            default_ptr: ZoneEntry::status(ZoneStatus::NxDomain),
            default_aaaa: ZoneEntry::status(ZoneStatus::NxDomain),
            default_a: ZoneEntry::status(ZoneStatus::NxDomain),
            default_echo: EchoScript::None,
            default_tcp: TcpBehavior::Drop,
            digest: String::new(),
        };
        let mut normalized = String::new();
        let mut cname_lines = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let tokens: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let _ = writeln!(normalized, "{}", tokens.join(" "));
            let err = |message: String| ScenarioError { line: line_no, message };
            s.directive(&tokens, &mut cname_lines, line_no).map_err(err)?;
        }
        for (name, line) in &cname_lines {
            s.check_chain(name).map_err(|message| ScenarioError { line: *line, message })?;
        }
        s.digest = hex::encode(Sha256::digest(normalized.as_bytes()));
        Ok(s)
    }

    fn directive(&mut self, t: &[&str], cname_lines: &mut BTreeMap<String, usize>, line: usize) -> Result<(), String> {
        let arity = |n: usize| {
            if t.len() == n {
                Ok(())
            } else {
                Err(format!("{} takes {} argument(s)", t[0], n - 1))
            }
        };
        match t[0] {
            "seed" => {
                arity(2)?;
                self.seed = t[1].parse().map_err(|_| format!("bad seed {:?}", t[1]))?;
            }
            "epoch" => {
                arity(2)?;
                self.epoch = Duration::from_secs(t[1].parse().map_err(|_| format!("bad epoch {:?}", t[1]))?);
            }
            "route" => {
                arity(3)?;
                let p: Prefix = t[1].parse().map_err(|e| format!("{e}"))?;
                let asn = parse_asn(t[2]).ok_or_else(|| format!("bad ASN {:?}", t[2]))?;
                self.routes.push((p, asn));
            }
            "country" => {
                arity(3)?;
                let asn = parse_asn(t[1]).ok_or_else(|| format!("bad ASN {:?}", t[1]))?;
                let cc = CountryCode::parse(t[2]).ok_or_else(|| format!("bad country code {:?}", t[2]))?;
                self.countries.push((asn, cc));
            }
            "ptr" => {
                if t.len() < 3 {
                    return Err("ptr needs an address and answers".into());
                }
                let prefix = if t[1].contains('/') {
                    t[1].parse::<Prefix>().map_err(|e| format!("{e}"))?
                } else {
                    let a: Ipv4Addr = t[1].parse().map_err(|_| format!("bad IPv4 address {:?}", t[1]))?;
                    Prefix::new(IpAddr::V4(a), 32).expect("host prefix")
                };
                if !prefix.is_ipv4() {
                    return Err(format!("ptr target {prefix} is not IPv4"));
                }
                let entry = zone_entry(&t[2..], |n| Ok(parse_name(n)))?;
                self.ptr
                    .insert_first(prefix, entry)
                    .map_err(|_| format!("duplicate ptr rule for {prefix}"))?;
            }
            "aaaa" | "a" => {
                if t.len() < 3 {
                    return Err(format!("{} needs a name and answers", t[0]));
                }
                let name = parse_name(t[1]);
                if self.cname.contains_key(&name) {
                    return Err(format!("{name:?} already has a CNAME"));
                }
                let dup = if t[0] == "aaaa" {
                    let e = zone_entry(&t[2..], |x| x.parse().map_err(|_| format!("bad IPv6 address {x:?}")))?;
                    self.aaaa.insert(name.clone(), e).is_some()
                } else {
                    let e = zone_entry(&t[2..], |x| x.parse().map_err(|_| format!("bad IPv4 address {x:?}")))?;
                    self.a.insert(name.clone(), e).is_some()
                };
                if dup {
                    return Err(format!("duplicate {} rule for {name:?}", t[0]));
                }
            }
            "cname" => {
                arity(3)?;
                let (name, target) = (parse_name(t[1]), parse_name(t[2]));
                if self.aaaa.contains_key(&name) || self.a.contains_key(&name) {
                    return Err(format!("{name:?} has address records and cannot be a CNAME"));
                }
                if self.cname.insert(name.clone(), target).is_some() {
                    return Err(format!("duplicate cname for {name:?}"));
                }
                cname_lines.insert(name, line);
            }
            "echo" => {
                arity(3)?;
                let addr: IpAddr = t[1].parse().map_err(|_| format!("bad address {:?}", t[1]))?;
                if self.echo.insert(addr, t[2].parse()?).is_some() {
                    return Err(format!("duplicate echo script for {addr}"));
                }
            }
            "tcp" => {
                arity(4)?;
                let addr: IpAddr = t[1].parse().map_err(|_| format!("bad address {:?}", t[1]))?;
                let port = match t[2] {
                    "*" => None,
                    p => Some(p.parse::<u16>().map_err(|_| format!("bad port {p:?}"))?),
                };
                if self.tcp.insert((addr, port), t[3].parse()?).is_some() {
                    return Err(format!("duplicate tcp script for {addr} port {}", t[2]));
                }
            }
            "default" => {
                arity(3)?;
                let status = || t[2].parse::<ZoneStatus>().map_err(|_| format!("bad status {:?}", t[2]));
                match t[1] {
                    "ptr" => self.default_ptr = ZoneEntry::status(status()?),
                    "aaaa" => self.default_aaaa = ZoneEntry::status(status()?),
                    "a" => self.default_a = ZoneEntry::status(status()?),
                    "echo" => self.default_echo = t[2].parse()?,
                    "tcp" => self.default_tcp = t[2].parse()?,
                    other => return Err(format!("no default for {other:?}")),
                }
            }
            other => return Err(format!("unknown directive {other:?}")),
        }
        Ok(())
    }

    fn check_chain(&self, start: &str) -> Result<(), String> {
        let mut seen = vec![start.to_string()];
        let mut cur = start;
        while let Some(next) = self.cname.get(cur) {
            if seen.iter().any(|s| s == next) {
                return Err(format!("CNAME loop through {next:?}"));
            }
            if !self.cname.contains_key(next) && !self.aaaa.contains_key(next) && !self.a.contains_key(next) {
                return Err(format!("CNAME {cur:?} points at {next:?}, which has no records"));
            }
            seen.push(next.clone());
            cur = next;
        }
        Ok(())
    }

    /// Hex SHA-256 over the comment-free, whitespace-normalized lines.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn routes(&self) -> &[(Prefix, Asn)] {
        &self.routes
    }

    pub fn routing_table(&self) -> RoutingTable {
        let mut t = RoutingTable::new();
        let mut report = TableLoadReport::default();
        for (p, a) in &self.routes {
            t.insert(*p, *a, &mut report);
        }
        t
    }

    /// The routes in the routing-table file format.
    pub fn routes_text(&self) -> String {
        self.routes.iter().map(|(p, a)| format!("{p}\t{}\n", a.0)).collect()
    }

    pub fn country_map(&self) -> AsnCountryMap {
        let mut m = AsnCountryMap::new();
        for (a, c) in &self.countries {
            m.insert(*a, *c);
        }
        m
    }

    /// The country assignments in delegated-statistics format.
    pub fn delegations_text(&self) -> String {
        self.countries
            .iter()
            .map(|(a, c)| format!("simnet|{c}|asn|{}|1|20160229|allocated\n", a.0))
            .collect()
    }

    pub fn ptr_entry(&self, addr: Ipv4Addr) -> &ZoneEntry<String> {
        self.ptr.longest_match_v4(addr).map(|(_, e)| e).unwrap_or(&self.default_ptr)
    }

    fn forward<'a, T: Clone>(
        &'a self,
        name: &str,
        zone: &'a HashMap<String, ZoneEntry<T>>,
        other_has: impl Fn(&str) -> bool,
        default: &'a ZoneEntry<T>,
    ) -> ForwardAnswer<T> {
        let mut chain = Vec::new();
        let mut cur = normalize_name(name);
        while let Some(next) = self.cname.get(&cur) {
            chain.push((cur.clone(), next.clone()));
            cur = next.clone();
        }
        let entry = match zone.get(&cur) {
            Some(e) => e.clone(),
            None if other_has(&cur) || !chain.is_empty() => ZoneEntry::status(ZoneStatus::NoData),
            None => default.clone(),
        };
        ForwardAnswer {
            chain,
            terminal: cur,
            entry,
        }
    }

    pub fn aaaa_answer(&self, name: &str) -> ForwardAnswer<Ipv6Addr> {
        self.forward(name, &self.aaaa, |n| self.a.contains_key(n), &self.default_aaaa)
    }

    pub fn a_answer(&self, name: &str) -> ForwardAnswer<Ipv4Addr> {
        self.forward(name, &self.a, |n| self.aaaa.contains_key(n), &self.default_a)
    }

    pub fn echo_script(&self, addr: IpAddr) -> &EchoScript {
        self.echo.get(&addr).unwrap_or(&self.default_echo)
    }

    pub fn tcp_behavior(&self, addr: IpAddr, port: u16) -> TcpBehavior {
        self.tcp
            .get(&(addr, Some(port)))
            .or_else(|| self.tcp.get(&(addr, None)))
            .copied()
            .unwrap_or(self.default_tcp)
    }
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, ScenarioError> {
        Scenario::parse(s)
    }
}

#[cfg(test)]
mod tests;
