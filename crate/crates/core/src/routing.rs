//! Flattened BGP routing table and RIR delegation data.
//!
//! The routing table is ingested from pre-flattened text (`prefix<TAB>asn`,
//! `#` comments) rather than MRT dumps. Lookups are longest-prefix match over
//! one hash table per prefix length, probing only lengths that are present.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::ops::RangeInclusive;
use std::str::FromStr;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Asn;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefixError {
    #[error("missing '/length' in {0:?}")]
    MissingLength(String),
    #[error("invalid address in {0:?}")]
    BadAddress(String),
    #[error("invalid prefix length in {0:?}")]
    BadLength(String),
    #[error("host bits set below /{len} in {text:?}")]
    HostBitsSet { text: String, len: u8 },
}

/// An address prefix with all host bits clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    base: IpAddr,
    len: u8,
}

pub(crate) fn v4_mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

pub(crate) fn v6_mask(len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        u128::MAX << (128 - u32::from(len))
    }
}

impl Prefix {
    /// Builds a prefix, rejecting out-of-range lengths and set host bits.
    pub fn new(base: IpAddr, len: u8) -> Result<Self, PrefixError> {
        let text = format!("{base}/{len}");
        match base {
            IpAddr::V4(a) => {
                if len > 32 {
                    return Err(PrefixError::BadLength(text));
                }
                if u32::from(a) & !v4_mask(len) != 0 {
                    return Err(PrefixError::HostBitsSet { text, len });
                }
            }
            IpAddr::V6(a) => {
                if len > 128 {
                    return Err(PrefixError::BadLength(text));
                }
                if u128::from(a) & !v6_mask(len) != 0 {
                    return Err(PrefixError::HostBitsSet { text, len });
                }
            }
        }
        Ok(Prefix { base, len })
    }

    /// Builds a prefix by clearing host bits of `addr`.
    pub fn truncating(addr: IpAddr, len: u8) -> Self {
        match addr {
            IpAddr::V4(a) => {
                let len = len.min(32);
                Prefix {
                    base: IpAddr::V4(Ipv4Addr::from(u32::from(a) & v4_mask(len))),
                    len,
                }
            }
            IpAddr::V6(a) => {
                let len = len.min(128);
                Prefix {
                    base: IpAddr::V6(Ipv6Addr::from(u128::from(a) & v6_mask(len))),
                    len,
                }
            }
        }
    }

    pub fn base(&self) -> IpAddr {
        self.base
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_ipv4(&self) -> bool {
        self.base.is_ipv4()
    }

    pub fn contains(&self, addr: IpAddr) -> bool {
        match (self.base, addr) {
            (IpAddr::V4(b), IpAddr::V4(a)) => u32::from(a) & v4_mask(self.len) == u32::from(b),
            (IpAddr::V6(b), IpAddr::V6(a)) => u128::from(a) & v6_mask(self.len) == u128::from(b),
            _ => false,
        }
    }

    /// First and last IPv4 address covered, if this is an IPv4 prefix.
    pub fn v4_range(&self) -> Option<RangeInclusive<u32>> {
        match self.base {
            IpAddr::V4(b) => {
                let start = u32::from(b);
                Some(start..=start | !v4_mask(self.len))
            }
            IpAddr::V6(_) => None,
        }
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.len)
    }
}

impl FromStr for Prefix {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| PrefixError::MissingLength(s.to_string()))?;
        let base: IpAddr = addr
            .parse()
            .map_err(|_| PrefixError::BadAddress(s.to_string()))?;
        if len.is_empty() || !len.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PrefixError::BadLength(s.to_string()));
        }
        let len: u8 = len.parse().map_err(|_| PrefixError::BadLength(s.to_string()))?;
        Prefix::new(base, len)
    }
}

impl Serialize for Prefix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Longest-prefix-match map for both address families.
#[derive(Debug, Clone)]
pub struct PrefixMap<V> {
    v4: Vec<HashMap<u32, V>>,
    v6: Vec<HashMap<u128, V>>,
    // Lengths with at least one entry, longest first.
    v4_lens: Vec<u8>,
    v6_lens: Vec<u8>,
}

impl<V> Default for PrefixMap<V> {
    fn default() -> Self {
        PrefixMap {
            v4: (0..=32).map(|_| HashMap::new()).collect(),
            v6: (0..=128).map(|_| HashMap::new()).collect(),
            v4_lens: Vec::new(),
            v6_lens: Vec::new(),
        }
    }
}

impl<V> PrefixMap<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.v4.iter().map(HashMap::len).sum::<usize>() + self.v6.iter().map(HashMap::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn note_len(lens: &mut Vec<u8>, len: u8) {
        if let Err(pos) = lens.binary_search_by(|probe| len.cmp(probe)) {
            lens.insert(pos, len);
        }
    }

    /// Inserts `value` unless the prefix is already present; returns the
    /// existing value on collision.
    pub fn insert_first(&mut self, prefix: Prefix, value: V) -> Result<(), &V> {
        let len = prefix.len;
        match prefix.base {
            IpAddr::V4(b) => {
                let slot = &mut self.v4[usize::from(len)];
                if slot.contains_key(&u32::from(b)) {
                    return Err(&self.v4[usize::from(len)][&u32::from(b)]);
                }
                slot.insert(u32::from(b), value);
                Self::note_len(&mut self.v4_lens, len);
            }
            IpAddr::V6(b) => {
                let slot = &mut self.v6[usize::from(len)];
                if slot.contains_key(&u128::from(b)) {
                    return Err(&self.v6[usize::from(len)][&u128::from(b)]);
                }
                slot.insert(u128::from(b), value);
                Self::note_len(&mut self.v6_lens, len);
            }
        }
        Ok(())
    }

    pub fn get(&self, prefix: &Prefix) -> Option<&V> {
        match prefix.base {
            IpAddr::V4(b) => self.v4[usize::from(prefix.len)].get(&u32::from(b)),
            IpAddr::V6(b) => self.v6[usize::from(prefix.len)].get(&u128::from(b)),
        }
    }

    pub fn longest_match_v4(&self, addr: Ipv4Addr) -> Option<(Prefix, &V)> {
        let bits = u32::from(addr);
        self.v4_lens.iter().find_map(|&len| {
            let key = bits & v4_mask(len);
            self.v4[usize::from(len)].get(&key).map(|v| {
                (
                    Prefix {
                        base: IpAddr::V4(Ipv4Addr::from(key)),
                        len,
                    },
                    v,
                )
            })
        })
    }

    pub fn longest_match_v6(&self, addr: Ipv6Addr) -> Option<(Prefix, &V)> {
        let bits = u128::from(addr);
        self.v6_lens.iter().find_map(|&len| {
            let key = bits & v6_mask(len);
            self.v6[usize::from(len)].get(&key).map(|v| {
                (
                    Prefix {
                        base: IpAddr::V6(Ipv6Addr::from(key)),
                        len,
                    },
                    v,
                )
            })
        })
    }

    pub fn longest_match(&self, addr: IpAddr) -> Option<(Prefix, &V)> {
        match addr {
            IpAddr::V4(a) => self.longest_match_v4(a),
            IpAddr::V6(a) => self.longest_match_v6(a),
        }
    }

    /// All entries, in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = (Prefix, &V)> + '_ {
        let v4 = self.v4.iter().enumerate().flat_map(|(len, m)| {
            m.iter().map(move |(&k, v)| {
                (
                    Prefix {
                        base: IpAddr::V4(Ipv4Addr::from(k)),
                        len: len as u8,
                    },
                    v,
                )
            })
        });
        let v6 = self.v6.iter().enumerate().flat_map(|(len, m)| {
            m.iter().map(move |(&k, v)| {
                (
                    Prefix {
                        base: IpAddr::V6(Ipv6Addr::from(k)),
                        len: len as u8,
                    },
                    v,
                )
            })
        });
        v4.chain(v6)
    }
}

/// Counters produced while loading a routing table. Malformed lines are never fatal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableLoadReport {
    pub entries: u64,
    pub skipped_malformed: u64,
    pub skipped_default_route: u64,
    pub duplicate_entries: u64,
    /// Same prefix announced with a different origin; the first origin is kept.
    pub origin_conflicts: u64,
}

/// Prefix to origin-ASN table. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    map: PrefixMap<Asn>,
}

fn parse_asn(text: &str) -> Option<Asn> {
    let digits = text
        .strip_prefix("AS")
        .or_else(|| text.strip_prefix("as"))
        .unwrap_or(text);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().map(Asn)
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one entry with duplicate/conflict accounting.
    pub fn insert(&mut self, prefix: Prefix, asn: Asn, report: &mut TableLoadReport) {
        if prefix.len() == 0 {
            report.skipped_default_route += 1;
            return;
        }
        match self.map.insert_first(prefix, asn) {
            Ok(()) => report.entries += 1,
            Err(existing) if *existing == asn => report.duplicate_entries += 1,
            Err(existing) => {
                debug!("{prefix}: origin {asn} conflicts with {existing}, keeping first");
                report.origin_conflicts += 1;
            }
        }
    }

    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<(Self, TableLoadReport)> {
        let mut table = RoutingTable::new();
        let mut report = TableLoadReport::default();
        for line in reader.lines() {
            let line = line?;
            table.ingest_line(&line, &mut report);
        }
        if report.origin_conflicts > 0 {
            warn!("{} multi-origin prefixes, first origin kept", report.origin_conflicts);
        }
        Ok((table, report))
    }

    fn ingest_line(&mut self, line: &str, report: &mut TableLoadReport) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return;
        }
        let mut fields = line.split_whitespace();
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(p), Some(a), None) => p.parse::<Prefix>().ok().zip(parse_asn(a)),
            _ => None,
        };
        match parsed {
            Some((prefix, asn)) => self.insert(prefix, asn, report),
            None => report.skipped_malformed += 1,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookup_origin_asn(&self, addr: IpAddr) -> Option<Asn> {
        self.map.longest_match(addr).map(|(_, asn)| *asn)
    }

    pub fn lookup_prefix(&self, addr: IpAddr) -> Option<(Prefix, Asn)> {
        self.map.longest_match(addr).map(|(p, asn)| (p, *asn))
    }

    pub fn entries(&self) -> impl Iterator<Item = (Prefix, Asn)> + '_ {
        self.map.iter().map(|(p, a)| (p, *a))
    }

    /// Disjoint, ascending, maximally merged IPv4 ranges covered by the table.
    pub fn routed_ipv4_ranges(&self) -> Vec<RangeInclusive<u32>> {
        let mut ranges: Vec<(u32, u32)> = self
            .entries()
            .filter_map(|(p, _)| p.v4_range())
            .map(|r| (*r.start(), *r.end()))
            .collect();
        ranges.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(ranges.len());
        for (start, end) in ranges {
            match merged.last_mut() {
                // Adjacent ranges merge too; `last.1 + 1` cannot overflow when start > last.1.
                Some(last) if start <= last.1 || start == last.1 + 1 => last.1 = last.1.max(end),
                _ => merged.push((start, end)),
            }
        }
        merged.into_iter().map(|(s, e)| s..=e).collect()
    }

    pub fn routed_ipv4_count(&self) -> u64 {
        self.routed_ipv4_ranges()
            .iter()
            .map(|r| u64::from(r.end() - r.start()) + 1)
            .sum()
    }

    /// Every routed IPv4 address exactly once, ascending.
    pub fn enumerate_routed_ipv4(&self) -> impl Iterator<Item = Ipv4Addr> {
        self.routed_ipv4_ranges()
            .into_iter()
            .flat_map(|r| r.map(Ipv4Addr::from))
    }
}

pub fn parse_routing_table(text: &str) -> (RoutingTable, TableLoadReport) {
    RoutingTable::from_reader(text.as_bytes()).expect("reading from memory cannot fail")
}

/// Two-letter ISO 3166 code as registered with an RIR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn parse(text: &str) -> Option<Self> {
        match text.as_bytes() {
            [a, b] if a.is_ascii_alphabetic() && b.is_ascii_alphabetic() => {
                Some(CountryCode([a.to_ascii_uppercase(), b.to_ascii_uppercase()]))
            }
            _ => None,
        }
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii letters")
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const UNKNOWN_COUNTRY: &str = "unknown";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RirLoadReport {
    pub asn_records: u64,
    pub asns_mapped: u64,
    pub ignored_non_asn: u64,
    pub ignored_summary: u64,
    pub ignored_unassigned: u64,
    pub skipped_malformed: u64,
    pub country_conflicts: u64,
}

/// ASN to registered country.
#[derive(Debug, Clone, Default)]
pub struct AsnCountryMap {
    map: HashMap<Asn, CountryCode>,
}

// Delegations larger than this are treated as corrupt rather than expanded.
const MAX_ASN_RANGE: u64 = 1 << 20;

impl AsnCountryMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, asn: Asn, cc: CountryCode) -> bool {
        match self.map.get(&asn) {
            Some(existing) if *existing != cc => false,
            Some(_) => true,
            None => {
                self.map.insert(asn, cc);
                true
            }
        }
    }

    pub fn lookup(&self, asn: Asn) -> Option<CountryCode> {
        self.map.get(&asn).copied()
    }

    /// Country code text, or `"unknown"` for unmapped ASNs.
    pub fn country_label(&self, asn: Asn) -> String {
        self.lookup(asn)
            .map(|cc| cc.to_string())
            .unwrap_or_else(|| UNKNOWN_COUNTRY.to_string())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<(Self, RirLoadReport)> {
        let mut out = AsnCountryMap::new();
        let mut report = RirLoadReport::default();
        for line in reader.lines() {
            out.ingest_line(line?.trim(), &mut report);
        }
        if report.country_conflicts > 0 {
            warn!("{} ASNs delegated to more than one country, first kept", report.country_conflicts);
        }
        Ok((out, report))
    }

    fn ingest_line(&mut self, line: &str, report: &mut RirLoadReport) {
        if line.is_empty() || line.starts_with('#') {
            return;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 5 {
            report.skipped_malformed += 1;
            return;
        }
        if fields[2] != "asn" {
            report.ignored_non_asn += 1;
            return;
        }
        if fields[1] == "*" || fields.get(5) == Some(&"summary") {
            report.ignored_summary += 1;
            return;
        }
        if matches!(fields.get(6).copied(), Some("available" | "reserved")) {
            report.ignored_unassigned += 1;
            return;
        }
        let cc = CountryCode::parse(fields[1]);
        let start: Option<u32> = fields[3].parse().ok();
        let count: Option<u64> = fields[4].parse().ok();
        let (cc, start, count) = match (cc, start, count) {
            (Some(cc), Some(s), Some(c)) if c >= 1 && c <= MAX_ASN_RANGE && u64::from(s) + c - 1 <= u64::from(u32::MAX) => {
                (cc, s, c)
            }
            _ => {
                report.skipped_malformed += 1;
                return;
            }
        };
        report.asn_records += 1;
        for offset in 0..count {
            let asn = Asn(start + offset as u32);
            let fresh = !self.map.contains_key(&asn);
            if self.insert(asn, cc) {
                if fresh {
                    report.asns_mapped += 1;
                }
            } else {
                debug!("{asn}: delegated to {cc} after {}", self.map[&asn]);
                report.country_conflicts += 1;
            }
        }
    }
}

pub fn parse_rir_delegations(text: &str) -> (AsnCountryMap, RirLoadReport) {
    AsnCountryMap::from_reader(text.as_bytes()).expect("reading from memory cannot fail")
}
