//! Conservative IPv4/IPv6 pairing from joint A/AAAA resolution.
//!
//! A pair `(a4, a6, asn, name)` is kept when `name` resolves to exactly one
//! routable address per family, both addresses share an origin ASN, and no
//! other name contradicts the association.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{is_globally_routable, SpecialRegistry};
use crate::routing::RoutingTable;
use crate::sweep::NameRecord;
use crate::Asn;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolutionGraph {
    names: BTreeMap<String, (BTreeSet<Ipv4Addr>, BTreeSet<Ipv6Addr>)>,
    by_v4: BTreeMap<Ipv4Addr, BTreeSet<String>>,
    by_v6: BTreeMap<Ipv6Addr, BTreeSet<String>>,
    pub dropped_v4: u64,
    pub dropped_v6: u64,
}

impl ResolutionGraph {
    /// Adds answers for `name` as given, with no routability filtering.
    pub fn insert<A, B>(&mut self, name: &str, v4: A, v6: B)
    where
        A: IntoIterator<Item = Ipv4Addr>,
        B: IntoIterator<Item = Ipv6Addr>,
    {
        let entry = self.names.entry(name.to_string()).or_default();
        for a in v4 {
            entry.0.insert(a);
            self.by_v4.entry(a).or_default().insert(name.to_string());
        }
        for a in v6 {
            entry.1.insert(a);
            self.by_v6.entry(a).or_default().insert(name.to_string());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, &BTreeSet<Ipv4Addr>, &BTreeSet<Ipv6Addr>)> {
        self.names.iter().map(|(n, (a, b))| (n.as_str(), a, b))
    }

    pub fn get(&self, name: &str) -> Option<(&BTreeSet<Ipv4Addr>, &BTreeSet<Ipv6Addr>)> {
        self.names.get(name).map(|(a, b)| (a, b))
    }

    pub fn names_for_v4(&self, a: Ipv4Addr) -> Option<&BTreeSet<String>> {
        self.by_v4.get(&a)
    }

    pub fn names_for_v6(&self, a: Ipv6Addr) -> Option<&BTreeSet<String>> {
        self.by_v6.get(&a)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// True when both inverse indices agree with the forward map.
    pub fn is_consistent(&self) -> bool {
        let mut v4: BTreeMap<Ipv4Addr, BTreeSet<String>> = BTreeMap::new();
        let mut v6: BTreeMap<Ipv6Addr, BTreeSet<String>> = BTreeMap::new();
        for (n, (a4, a6)) in &self.names {
            for a in a4 {
                v4.entry(*a).or_default().insert(n.clone());
            }
            for a in a6 {
                v6.entry(*a).or_default().insert(n.clone());
            }
        }
        v4 == self.by_v4 && v6 == self.by_v6
    }
}

/// Keeps only globally routable answers. An IPv4 answer counts as routable
/// when the routing table gives it an origin.
pub fn build_resolution_graph(records: &[NameRecord], registry: &SpecialRegistry, table: &RoutingTable) -> ResolutionGraph {
    let mut g = ResolutionGraph::default();
    for r in records {
        let (v4, bad4): (Vec<_>, Vec<_>) = r
            .a_addresses()
            .partition(|a| table.lookup_origin_asn(IpAddr::V4(*a)).is_some());
        let (v6, bad6): (Vec<_>, Vec<_>) = r
            .aaaa_addresses()
            .partition(|a| is_globally_routable(*a, registry, table));
        g.dropped_v4 += bad4.len() as u64;
        g.dropped_v6 += bad6.len() as u64;
        g.insert(&r.name, v4, v6);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContradictionMode {
    /// Only other single-answer candidates can contradict.
    #[default]
    Candidates,
    /// Any other name whose answers include the address can contradict.
    RawSets,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AddressPair {
    pub v4: Ipv4Addr,
    pub v6: Ipv6Addr,
    pub asn: Asn,
    pub name: String,
}

struct Candidate<'a> {
    name: &'a str,
    v4: Ipv4Addr,
    v6: Ipv6Addr,
}

pub fn derive_pairs(graph: &ResolutionGraph, table: &RoutingTable, mode: ContradictionMode) -> Vec<AddressPair> {
    let candidates: Vec<Candidate> = graph
        .names()
        .filter(|(_, a4, a6)| a4.len() == 1 && a6.len() == 1)
        .map(|(name, a4, a6)| Candidate {
            name,
            v4: *a4.first().expect("one"),
            v6: *a6.first().expect("one"),
        })
        .collect();

    let contradicted: Box<dyn Fn(&Candidate) -> bool> = match mode {
        ContradictionMode::Candidates => {
            let mut mates4: BTreeMap<Ipv4Addr, BTreeSet<Ipv6Addr>> = BTreeMap::new();
            let mut mates6: BTreeMap<Ipv6Addr, BTreeSet<Ipv4Addr>> = BTreeMap::new();
            for c in &candidates {
                mates4.entry(c.v4).or_default().insert(c.v6);
                mates6.entry(c.v6).or_default().insert(c.v4);
            }
            Box::new(move |c: &Candidate| mates4[&c.v4].len() > 1 || mates6[&c.v6].len() > 1)
        }
        ContradictionMode::RawSets => Box::new(|c: &Candidate| {
            let bad4 = graph.names_for_v4(c.v4).into_iter().flatten().any(|m| {
                let (_, m6) = graph.get(m).expect("indexed");
                !(m6.len() == 1 && m6.contains(&c.v6))
            });
            let bad6 = graph.names_for_v6(c.v6).into_iter().flatten().any(|m| {
                let (m4, _) = graph.get(m).expect("indexed");
                !(m4.len() == 1 && m4.contains(&c.v4))
            });
            bad4 || bad6
        }),
    };

    let mut kept: BTreeMap<(Ipv4Addr, Ipv6Addr), AddressPair> = BTreeMap::new();
    for c in candidates.iter().filter(|c| !contradicted(c)) {
        let asn4 = table.lookup_origin_asn(IpAddr::V4(c.v4));
        let asn6 = table.lookup_origin_asn(IpAddr::V6(c.v6));
        let (Some(asn), true) = (asn4, asn4 == asn6) else {
            continue;
        };
        // Names iterate in order, so the first one seen is the smallest.
        kept.entry((c.v4, c.v6)).or_insert_with(|| AddressPair {
            v4: c.v4,
            v6: c.v6,
            asn,
            name: c.name.to_string(),
        });
    }
    kept.into_values().collect()
}

/// Writes `v4,v6,asn,name` CSV.
pub fn write_pairs_csv(path: &Path, pairs: &[AddressPair]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["v4", "v6", "asn", "name"])?;
    for p in pairs {
        w.write_record([p.v4.to_string(), p.v6.to_string(), p.asn.0.to_string(), p.name.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<AddressPair>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let bad = |what: &str| {
            csv::Error::from(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: bad {what} on line {}", path.display(), row.position().map_or(0, |p| p.line())),
            ))
        };
        out.push(AddressPair {
            v4: field(0).parse().map_err(|_| bad("v4"))?,
            v6: field(1).parse().map_err(|_| bad("v6"))?,
            asn: Asn(field(2).trim_start_matches("AS").parse().map_err(|_| bad("asn"))?),
            name: field(3),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::parse_routing_table;

    fn table() -> RoutingTable {
        parse_routing_table("192.0.2.0/24\t64500\n2a00:1::/32\t64500\n198.51.100.0/24\t64501\n").0
    }

    fn v4(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn v6(s: &str) -> Ipv6Addr {
        s.parse().unwrap()
    }

    #[test]
    fn single_name_pairs() {
        let mut g = ResolutionGraph::default();
        g.insert("n1", [v4("192.0.2.1")], [v6("2a00:1::1")]);
        let pairs = derive_pairs(&g, &table(), ContradictionMode::Candidates);
        assert_eq!(
            pairs,
            vec![AddressPair {
                v4: v4("192.0.2.1"),
                v6: v6("2a00:1::1"),
                asn: Asn(64500),
                name: "n1".into()
            }]
        );
    }

    #[test]
    fn contradiction_drops_both() {
        let mut g = ResolutionGraph::default();
        g.insert("n1", [v4("192.0.2.1")], [v6("2a00:1::1")]);
        g.insert("n2", [v4("192.0.2.1")], [v6("2a00:1::2")]);
        assert!(derive_pairs(&g, &table(), ContradictionMode::Candidates).is_empty());
    }

    #[test]
    fn asn_mismatch_and_duplicates() {
        let mut g = ResolutionGraph::default();
        g.insert("n1", [v4("198.51.100.1")], [v6("2a00:1::1")]);
        assert!(derive_pairs(&g, &table(), ContradictionMode::Candidates).is_empty());

        let mut g = ResolutionGraph::default();
        g.insert("b", [v4("192.0.2.1")], [v6("2a00:1::1")]);
        g.insert("a", [v4("192.0.2.1")], [v6("2a00:1::1")]);
        let pairs = derive_pairs(&g, &table(), ContradictionMode::Candidates);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].name, "a");
    }

    #[test]
    fn raw_set_mode_is_stricter() {
        let mut g = ResolutionGraph::default();
        g.insert("n1", [v4("192.0.2.1")], [v6("2a00:1::1")]);
        g.insert("cdn", [v4("192.0.2.1"), v4("192.0.2.2")], [v6("2a00:1::9")]);
        assert_eq!(derive_pairs(&g, &table(), ContradictionMode::Candidates).len(), 1);
        assert!(derive_pairs(&g, &table(), ContradictionMode::RawSets).is_empty());
    }

    #[test]
    fn graph_filters_unroutable() {
        use crate::dns::{QueryOutcome, RecordKind, ResponseCategory, Transport};
        use crate::sweep::NameValidity;
        let outcome = |kind, answers: &[&str]| QueryOutcome {
            name: "x".into(),
            kind,
            category: ResponseCategory::NoError,
            answers: answers.iter().map(|s| s.to_string()).collect(),
            transport: Transport::Udp,
            cached: false,
            cname_chain: false,
            rcode: Some(0),
            ts_us: 0,
        };
        let rec = |name: &str, a6: &[&str], a4: Option<&[&str]>| NameRecord {
            name: name.into(),
            sources: BTreeSet::from([v4("192.0.2.7")]),
            multiplicity: 1,
            validity: NameValidity::Valid,
            aaaa: Some(outcome(RecordKind::Aaaa, a6)),
            a: a4.map(|a| outcome(RecordKind::A, a)),
        };
        let records = vec![
            rec("n1", &["2a00:1::1"], Some(&["192.0.2.1"])),
            rec("localhost", &["::1"], None),
            rec("s1", &["2a00:1::5"], Some(&["192.0.2.9"])),
            rec("s2", &["2a00:1::5"], Some(&["10.0.0.1"])),
            rec("s3", &["2a00:1::5"], None),
        ];
        let g = build_resolution_graph(&records, &SpecialRegistry::bundled(), &table());
        assert_eq!(g.get("n1").unwrap().0.len(), 1);
        assert!(g.get("localhost").unwrap().1.is_empty());
        assert_eq!(g.names_for_v6(v6("2a00:1::5")).unwrap().len(), 3);
        assert_eq!((g.dropped_v4, g.dropped_v6), (1, 1));
        assert!(g.is_consistent());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let pairs = vec![AddressPair {
            v4: v4("192.0.2.1"),
            v6: v6("2a00:1::1"),
            asn: Asn(64500),
            name: "n,1".into(),
        }];
        write_pairs_csv(&path, &pairs).unwrap();
        assert_eq!(read_pairs_csv(&path).unwrap(), pairs);
    }
}
