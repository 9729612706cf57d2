//! Per-address classification of discovered IPv6 addresses and IID
//! structure statistics.
//!
//! Bits are numbered over the whole address, 1 for the most significant bit
//! through 128 for the least significant, so the interface identifier spans
//! bits 65 to 128.

use std::collections::BTreeMap;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::{Prefix, PrefixMap, RoutingTable};
use crate::Asn;

/// Registry snapshot bundled with the crate.
pub const DEFAULT_REGISTRY: &str = include_str!("../data/iana-ipv6-special-registry.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("registry line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Special-purpose IPv6 blocks with longest-prefix lookup.
#[derive(Debug, Clone)]
pub struct SpecialRegistry {
    entries: Vec<(Prefix, String)>,
    index: PrefixMap<usize>,
}

impl SpecialRegistry {
    /// Parses `prefix<TAB>label` lines. Unlike routing tables, a registry is
    /// curated input, so any malformed line is an error.
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut entries = Vec::new();
        let mut index = PrefixMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| RegistryError::Malformed { line: i + 1, reason };
            let mut fields = line.split('\t').map(str::trim).filter(|f| !f.is_empty());
            let (Some(p), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(bad("expected prefix<TAB>label".into()));
            };
            let prefix: Prefix = p.parse().map_err(|e| bad(format!("{e}")))?;
            if prefix.is_ipv4() {
                return Err(bad(format!("{prefix} is not an IPv6 prefix")));
            }
            if index.insert_first(prefix, entries.len()).is_err() {
                return Err(bad(format!("duplicate prefix {prefix}")));
            }
            entries.push((prefix, label.to_string()));
        }
        Ok(SpecialRegistry { entries, index })
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_REGISTRY).expect("bundled registry parses")
    }

    pub fn entries(&self) -> &[(Prefix, String)] {
        &self.entries
    }

    pub fn lookup(&self, addr: Ipv6Addr) -> Option<(Prefix, &str)> {
        self.index
            .longest_match_v6(addr)
            .map(|(p, &i)| (p, self.entries[i].1.as_str()))
    }
}

impl Default for SpecialRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

/// The four disjoint address buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AddressBucket {
    Special,
    Routable,
    NonStandard,
    UnroutedStandard,
}

impl fmt::Display for AddressBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddressBucket::Special => "special",
            AddressBucket::Routable => "routable",
            AddressBucket::NonStandard => "non-standard",
            AddressBucket::UnroutedStandard => "unrouted-standard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedAddress {
    pub address: Ipv6Addr,
    pub origin_asn: Option<Asn>,
    pub special_class: Option<String>,
    pub globally_routable: bool,
    pub slaac_eui64: bool,
    pub zero_iid: bool,
    pub first_set_bit: Option<u8>,
    pub embedded_v4: Ipv4Addr,
    pub matches_source_v4: bool,
    /// IPv4 address padded into the top 32 bits with the rest zero.
    pub high_bits_v4: Option<Ipv4Addr>,
    pub non_standard: bool,
}

impl ClassifiedAddress {
    pub fn bucket(&self) -> AddressBucket {
        if self.special_class.is_some() {
            AddressBucket::Special
        } else if self.globally_routable {
            AddressBucket::Routable
        } else if self.non_standard {
            AddressBucket::NonStandard
        } else {
            AddressBucket::UnroutedStandard
        }
    }
}

/// Global unicast space, 2000::/3.
pub fn in_global_unicast(addr: Ipv6Addr) -> bool {
    addr.octets()[0] & 0xe0 == 0x20
}

pub fn iid(addr: Ipv6Addr) -> u64 {
    u128::from(addr) as u64
}

/// True iff the IID carries the universal/local bit (bit 7 of the IID) and
/// `ff:fe` in its fourth and fifth bytes, the shape of a MAC-derived IID.
pub fn is_slaac_eui64(addr: Ipv6Addr) -> bool {
    let o = addr.octets();
    o[8] & 0x02 != 0 && o[11] == 0xff && o[12] == 0xfe
}

/// Whole-address index of the most significant set IID bit.
pub fn first_set_bit_index(addr: Ipv6Addr) -> Option<u8> {
    match iid(addr) {
        0 => None,
        v => Some(65 + v.leading_zeros() as u8),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddedV4 {
    /// Low 32 bits read as an IPv4 address; always defined.
    pub low: Ipv4Addr,
    pub matches_source: bool,
    pub high_bits: Option<Ipv4Addr>,
}

pub fn embedded_ipv4(addr: Ipv6Addr, source_v4: Option<Ipv4Addr>) -> EmbeddedV4 {
    let bits = u128::from(addr);
    let low = Ipv4Addr::from(bits as u32);
    let top = (bits >> 96) as u32;
    let high_bits = (top != 0 && bits << 32 == 0).then(|| Ipv4Addr::from(top));
    EmbeddedV4 {
        low,
        matches_source: source_v4 == Some(low),
        high_bits,
    }
}

pub fn classify_address(
    addr: Ipv6Addr,
    registry: &SpecialRegistry,
    table: &RoutingTable,
    source_v4: Option<Ipv4Addr>,
) -> ClassifiedAddress {
    let special_class = registry.lookup(addr).map(|(_, l)| l.to_string());
    let origin_asn = table.lookup_origin_asn(IpAddr::V6(addr));
    let globally_routable = special_class.is_none() && origin_asn.is_some();
    let non_standard = special_class.is_none() && !globally_routable && !in_global_unicast(addr);
    let first_set_bit = first_set_bit_index(addr);
    let emb = embedded_ipv4(addr, source_v4);
    ClassifiedAddress {
        address: addr,
        origin_asn,
        special_class,
        globally_routable,
        slaac_eui64: is_slaac_eui64(addr),
        zero_iid: first_set_bit.is_none(),
        first_set_bit,
        embedded_v4: emb.low,
        matches_source_v4: emb.matches_source,
        high_bits_v4: emb.high_bits,
        non_standard,
    }
}

/// Convenience check used by the A stage and pairing.
pub fn is_globally_routable(addr: Ipv6Addr, registry: &SpecialRegistry, table: &RoutingTable) -> bool {
    registry.lookup(addr).is_none() && table.lookup_origin_asn(IpAddr::V6(addr)).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitPatternStats {
    /// Index 0 holds bit 65, index 63 bit 128.
    pub histogram: Vec<u64>,
    pub zero_iid: u64,
    pub analyzed: u64,
}

impl Default for BitPatternStats {
    fn default() -> Self {
        BitPatternStats {
            histogram: vec![0; 64],
            zero_iid: 0,
            analyzed: 0,
        }
    }
}

impl BitPatternStats {
    pub fn add(&mut self, first_set_bit: Option<u8>) {
        self.analyzed += 1;
        match first_set_bit {
            Some(b) => self.histogram[usize::from(b - 65)] += 1,
            None => self.zero_iid += 1,
        }
    }

    pub fn count(&self, bit: u8) -> u64 {
        self.histogram[usize::from(bit - 65)]
    }

    pub fn nonzero(&self) -> u64 {
        self.analyzed - self.zero_iid
    }

    /// Fraction of nonzero-IID addresses whose first set bit is `bit` or later.
    pub fn cdf(&self, bit: u8) -> f64 {
        let total = self.nonzero();
        if total == 0 {
            return 0.0;
        }
        let at_or_after: u64 = self.histogram[usize::from(bit - 65)..].iter().sum();
        at_or_after as f64 / total as f64
    }

    /// `(bit, count, cdf)` rows for bits 65 through 128.
    pub fn rows(&self) -> Vec<(u8, u64, f64)> {
        (65..=128u8).map(|b| (b, self.count(b), self.cdf(b))).collect()
    }
}

pub fn bit_pattern_stats<'a, I>(addrs: I) -> BitPatternStats
where
    I: IntoIterator<Item = &'a ClassifiedAddress>,
{
    let mut stats = BitPatternStats::default();
    for a in addrs {
        stats.add(a.first_set_bit);
    }
    stats
}

/// Per-label counts of special-purpose addresses, plus bucket totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub addresses: u64,
    pub buckets: BTreeMap<AddressBucket, u64>,
    pub special_classes: BTreeMap<String, u64>,
    pub slaac_eui64: u64,
    pub zero_iid: u64,
    pub embedded_v4_matches: u64,
    /// Non-standard addresses with an IPv4 address in their top 32 bits.
    pub high_bits_v4_non_standard: u64,
    pub origin_asns: u64,
}

pub fn summarize<'a, I>(addrs: I) -> ClassSummary
where
    I: IntoIterator<Item = &'a ClassifiedAddress>,
{
    let mut s = ClassSummary::default();
    let mut asns = std::collections::BTreeSet::new();
    for a in addrs {
        s.addresses += 1;
        *s.buckets.entry(a.bucket()).or_default() += 1;
        if let Some(c) = &a.special_class {
            *s.special_classes.entry(c.clone()).or_default() += 1;
        }
        if a.globally_routable {
            if let Some(asn) = a.origin_asn {
                asns.insert(asn);
            }
            s.slaac_eui64 += u64::from(a.slaac_eui64);
            s.zero_iid += u64::from(a.zero_iid);
        }
        s.embedded_v4_matches += u64::from(a.matches_source_v4);
        s.high_bits_v4_non_standard += u64::from(a.non_standard && a.high_bits_v4.is_some());
    }
    s.origin_asns = asns.len() as u64;
    s
}
