//! Aggregates over probe and classification results, written as CSV and
//! gnuplot-ready data files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifiedAddress;
use crate::pairing::AddressPair;
use crate::probe::{ProbeKind, ProbeLogRecord, TcpResult};
use crate::routing::AsnCountryMap;
use crate::Asn;

pub const DEFAULT_BINS: usize = 20;
pub const QUANTILES: [u32; 5] = [5, 25, 50, 75, 95];

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PortSummary {
    pub probes: u64,
    pub accepted: u64,
    pub refused: u64,
    pub dropped: u64,
    pub accepted_rate: f64,
    pub refused_rate: f64,
    pub dropped_rate: f64,
}

impl PortSummary {
    fn add(&mut self, r: TcpResult) {
        self.probes += 1;
        match r {
            TcpResult::Accepted => self.accepted += 1,
            TcpResult::Refused => self.refused += 1,
            TcpResult::Dropped => self.dropped += 1,
        }
    }

    fn finish(&mut self) {
        self.accepted_rate = ratio(self.accepted, self.probes);
        self.refused_rate = ratio(self.refused, self.probes);
        self.dropped_rate = ratio(self.dropped, self.probes);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub icmp_targets: u64,
    pub icmp_responsive: u64,
    pub icmp_rate: f64,
    pub ports: BTreeMap<u16, PortSummary>,
    /// Targets that accepted or refused some TCP connection but never answered an echo.
    pub tcp_without_icmp: u64,
}

fn summarize_where(records: &[ProbeLogRecord], keep: impl Fn(&ProbeLogRecord) -> bool) -> Summary {
    let mut s = Summary::default();
    let mut echo: HashMap<IpAddr, bool> = HashMap::new();
    let mut tcp_evidence: BTreeSet<IpAddr> = BTreeSet::new();
    for r in records.iter().filter(|r| keep(r)) {
        match r.kind {
            ProbeKind::Icmp => {
                s.icmp_targets += 1;
                s.icmp_responsive += u64::from(r.responsive());
                *echo.entry(r.target).or_default() |= r.responsive();
            }
            ProbeKind::Tcp => {
                if let (Some(port), Some(res)) = (r.port, r.tcp_result()) {
                    s.ports.entry(port).or_default().add(res);
                    if res != TcpResult::Dropped {
                        tcp_evidence.insert(r.target);
                    }
                }
            }
        }
    }
    s.icmp_rate = ratio(s.icmp_responsive, s.icmp_targets);
    s.ports.values_mut().for_each(PortSummary::finish);
    s.tcp_without_icmp = tcp_evidence
        .iter()
        .filter(|t| !echo.get(t).copied().unwrap_or(false))
        .count() as u64;
    s
}

pub fn summarize(records: &[ProbeLogRecord]) -> Summary {
    summarize_where(records, |_| true)
}

pub fn summarize_family(records: &[ProbeLogRecord], family: &str) -> Summary {
    summarize_where(records, |r| r.family == family)
}

/// Something a probe can report per address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    IcmpResponsive,
    Tcp(u16, TcpResult),
}

impl Metric {
    pub fn probe_label(&self) -> String {
        match self {
            Metric::IcmpResponsive => "icmp".into(),
            Metric::Tcp(p, _) => format!("tcp/{p}"),
        }
    }

    pub fn outcome_label(&self) -> &'static str {
        match self {
            Metric::IcmpResponsive => "responsive",
            Metric::Tcp(_, r) => r.as_str(),
        }
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.probe_label(), self.outcome_label())
    }

    fn matches(&self, r: &ProbeLogRecord) -> Option<bool> {
        match (self, r.kind) {
            (Metric::IcmpResponsive, ProbeKind::Icmp) => Some(r.responsive()),
            (Metric::Tcp(p, want), ProbeKind::Tcp) if r.port == Some(*p) => r.tcp_result().map(|got| got == *want),
            _ => None,
        }
    }

    /// ICMP plus every outcome of every port seen in `records`.
    pub fn all_for(records: &[ProbeLogRecord]) -> Vec<Metric> {
        let ports: BTreeSet<u16> = records.iter().filter_map(|r| r.port).collect();
        std::iter::once(Metric::IcmpResponsive)
            .chain(ports.into_iter().flat_map(|p| TcpResult::ALL.into_iter().map(move |r| Metric::Tcp(p, r))))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsnStats {
    pub asn: Asn,
    /// Distinct targets with an ICMP record.
    pub addresses: u64,
    pub icmp_responsive: u64,
    pub tcp: BTreeMap<u16, BTreeMap<TcpResult, u64>>,
}

impl AsnStats {
    pub fn count(&self, m: Metric) -> u64 {
        match m {
            Metric::IcmpResponsive => self.icmp_responsive,
            Metric::Tcp(p, r) => self.tcp.get(&p).and_then(|c| c.get(&r)).copied().unwrap_or(0),
        }
    }

    pub fn rate(&self, m: Metric) -> f64 {
        ratio(self.count(m), self.addresses)
    }
}

/// Incremental per-ASN aggregation, fed one log record at a time.
#[derive(Debug, Default)]
pub struct AsnAggregator {
    family: Option<String>,
    stats: BTreeMap<Asn, AsnStats>,
}

impl AsnAggregator {
    pub fn new(family: Option<&str>) -> Self {
        AsnAggregator {
            family: family.map(str::to_string),
            stats: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, r: &ProbeLogRecord) {
        if self.family.as_deref().is_some_and(|f| f != r.family) {
            return;
        }
        let Some(asn) = r.asn else { return };
        let s = self.stats.entry(asn).or_insert_with(|| AsnStats {
            asn,
            ..Default::default()
        });
        match r.kind {
            ProbeKind::Icmp => {
                s.addresses += 1;
                s.icmp_responsive += u64::from(r.responsive());
            }
            ProbeKind::Tcp => {
                if let (Some(p), Some(res)) = (r.port, r.tcp_result()) {
                    *s.tcp.entry(p).or_default().entry(res).or_default() += 1;
                }
            }
        }
    }

    pub fn finish(self) -> Vec<AsnStats> {
        self.stats.into_values().collect()
    }
}

pub fn asn_stats(records: &[ProbeLogRecord], family: Option<&str>) -> Vec<AsnStats> {
    let mut agg = AsnAggregator::new(family);
    records.iter().for_each(|r| agg.add(r));
    agg.finish()
}

/// Bin `i` of `bins` covers rates in `[i/bins, (i+1)/bins)`; rate 1.0 goes
/// in the last bin. ASNs without addresses are skipped.
pub fn per_asn_histogram(stats: &[AsnStats], metric: Metric, bins: usize) -> Vec<u64> {
    let bins = bins.max(1);
    let mut hist = vec![0u64; bins];
    for s in stats.iter().filter(|s| s.addresses > 0) {
        let bin = (s.count(metric) as u128 * bins as u128 / s.addresses as u128) as usize;
        hist[bin.min(bins - 1)] += 1;
    }
    hist
}

/// Nearest-rank percentile: the value at rank `max(1, ceil(p * n / 100))`.
pub fn nearest_rank(values: &mut [f64], p: u32) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let rank = ((p as usize * n).div_ceil(100)).max(1).min(n);
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Some(*v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityRecord {
    pub asn: Asn,
    pub probe: String,
    pub outcome: String,
    pub pairs: u64,
    pub v4_rate: f64,
    pub v6_rate: f64,
    /// Positive when the IPv4 side does better.
    pub disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub probe: String,
    pub outcome: String,
    pub asns: u64,
    /// Values at the 5th, 25th, 50th, 75th and 95th percentiles.
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub records: Vec<DisparityRecord>,
    pub quantiles: Vec<QuantileRow>,
}

/// Per-ASN v4 minus v6 rate over pairs whose two sides were both probed.
pub fn paired_disparity(records: &[ProbeLogRecord], pairs: &[AddressPair]) -> Disparity {
    let mut by_target: HashMap<IpAddr, Vec<&ProbeLogRecord>> = HashMap::new();
    for r in records {
        by_target.entry(r.target).or_default().push(r);
    }
    let mut out = Disparity::default();
    for metric in Metric::all_for(records) {
        // asn -> (pairs, v4 hits, v6 hits)
        let mut per_asn: BTreeMap<Asn, (u64, u64, u64)> = BTreeMap::new();
        for p in pairs {
            let hit = |addr: IpAddr| {
                by_target
                    .get(&addr)
                    .and_then(|rs| rs.iter().find_map(|r| metric.matches(r)))
            };
            let (Some(h4), Some(h6)) = (hit(IpAddr::V4(p.v4)), hit(IpAddr::V6(p.v6))) else {
                continue;
            };
            let e = per_asn.entry(p.asn).or_default();
            e.0 += 1;
            e.1 += u64::from(h4);
            e.2 += u64::from(h6);
        }
        let mut values = Vec::new();
        for (asn, (n, h4, h6)) in per_asn {
            let (v4_rate, v6_rate) = (ratio(h4, n), ratio(h6, n));
            values.push(v4_rate - v6_rate);
            out.records.push(DisparityRecord {
                asn,
                probe: metric.probe_label(),
                outcome: metric.outcome_label().into(),
                pairs: n,
                v4_rate,
                v6_rate,
                disparity: v4_rate - v6_rate,
            });
        }
        if values.is_empty() {
            continue;
        }
        out.quantiles.push(QuantileRow {
            probe: metric.probe_label(),
            outcome: metric.outcome_label().into(),
            asns: values.len() as u64,
            quantiles: QUANTILES.iter().map(|&q| nearest_rank(&mut values, q).expect("nonempty")).collect(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopTables {
    pub asns: Vec<(Asn, u64)>,
    pub countries: Vec<(String, u64)>,
}

/// Largest ASNs and countries by globally routable address count.
pub fn top_tables(records: &[ClassifiedAddress], cc: &AsnCountryMap, n: usize) -> TopTables {
    let mut per_asn: BTreeMap<Asn, u64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.globally_routable) {
        if let Some(a) = r.origin_asn {
            *per_asn.entry(a).or_default() += 1;
        }
    }
    let mut per_cc: BTreeMap<String, u64> = BTreeMap::new();
    for (a, c) in &per_asn {
        *per_cc.entry(cc.country_label(*a)).or_default() += c;
    }
    let mut asns: Vec<(Asn, u64)> = per_asn.into_iter().collect();
    asns.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    asns.truncate(n);
    let mut countries: Vec<(String, u64)> = per_cc.into_iter().collect();
    countries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    countries.truncate(n);
    TopTables { asns, countries }
}

pub const SIZE_BANDS: [&str; 6] = ["1", "2", "3", "4-9", "10-99", ">=100"];

/// Counts ASNs by how many routable addresses they hold.
pub fn asn_size_breakdown(records: &[ClassifiedAddress]) -> [u64; 6] {
    let mut per_asn: HashMap<Asn, u64> = HashMap::new();
    for r in records.iter().filter(|r| r.globally_routable) {
        if let Some(a) = r.origin_asn {
            *per_asn.entry(a).or_default() += 1;
        }
    }
    let mut bands = [0u64; 6];
    for n in per_asn.into_values() {
        let i = match n {
            1 => 0,
            2 => 1,
            3 => 2,
            4..=9 => 3,
            10..=99 => 4,
            _ => 5,
        };
        bands[i] += 1;
    }
    bands
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Summary,
    pub by_family: BTreeMap<String, Summary>,
    pub bins: usize,
    /// IPv6 per-ASN rate histograms keyed by metric label.
    pub histograms: BTreeMap<String, Vec<u64>>,
    pub disparity: Disparity,
    pub top: TopTables,
    pub asn_sizes: BTreeMap<String, u64>,
    #[serde(skip)]
    asn_stats: Vec<AsnStats>,
}

pub struct ReportInputs<'a> {
    pub probes: &'a [ProbeLogRecord],
    pub pairs: &'a [AddressPair],
    pub classified: &'a [ClassifiedAddress],
    pub countries: &'a AsnCountryMap,
    pub bins: usize,
    pub top_n: usize,
}

pub fn build_report(inp: &ReportInputs) -> Report {
    let asn_v6 = asn_stats(inp.probes, Some("ipv6"));
    let histograms = Metric::all_for(inp.probes)
        .into_iter()
        .map(|m| (m.label(), per_asn_histogram(&asn_v6, m, inp.bins)))
        .collect();
    let sizes = asn_size_breakdown(inp.classified);
    Report {
        summary: summarize(inp.probes),
        by_family: ["ipv4", "ipv6"]
            .iter()
            .map(|f| (f.to_string(), summarize_family(inp.probes, f)))
            .collect(),
        bins: inp.bins,
        histograms,
        disparity: paired_disparity(inp.probes, inp.pairs),
        top: top_tables(inp.classified, inp.countries, inp.top_n),
        asn_sizes: SIZE_BANDS.iter().zip(sizes).map(|(b, n)| (b.to_string(), n)).collect(),
        asn_stats: asn_v6,
    }
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

impl Report {
    pub fn asn_stats(&self) -> &[AsnStats] {
        &self.asn_stats
    }

    /// Writes every table into `dir` and returns the paths written.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut put = |name: &str| {
            let p = dir.join(name);
            written.push(p.clone());
            p
        };
        let json = serde_json::to_vec_pretty(self).map_err(io::Error::other)?;
        fs::write(put("report.json"), json)?;

        let mut rows = Vec::new();
        for (fam, s) in std::iter::once(("all", &self.summary)).chain(self.by_family.iter().map(|(f, s)| (f.as_str(), s))) {
            for (port, p) in &s.ports {
                rows.push(vec![
                    fam.to_string(),
                    port.to_string(),
                    p.probes.to_string(),
                    p.accepted.to_string(),
                    p.refused.to_string(),
                    p.dropped.to_string(),
                    f6(p.accepted_rate),
                    f6(p.refused_rate),
                    f6(p.dropped_rate),
                ]);
            }
        }
        write_csv(
            &put("ports.csv"),
            &["family", "port", "probes", "accepted", "refused", "dropped", "accepted_rate", "refused_rate", "dropped_rate"],
            rows,
        )?;

        let metrics: Vec<Metric> = self
            .asn_stats
            .iter()
            .flat_map(|s| s.tcp.keys().copied())
            .collect::<BTreeSet<u16>>()
            .into_iter()
            .flat_map(|p| TcpResult::ALL.into_iter().map(move |r| Metric::Tcp(p, r)))
            .collect();
        let mut header = vec!["asn".to_string(), "addresses".into(), "icmp_responsive".into(), "icmp_rate".into()];
        header.extend(metrics.iter().map(|m| m.label().replace(' ', "_")));
        let rows = self
            .asn_stats
            .iter()
            .map(|s| {
                let mut r = vec![s.asn.0.to_string(), s.addresses.to_string(), s.icmp_responsive.to_string(), f6(s.rate(Metric::IcmpResponsive))];
                r.extend(metrics.iter().map(|m| s.count(*m).to_string()));
                r
            })
            .collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&put("asn_stats.csv"), &header_refs, rows)?;

        let mut rows = Vec::new();
        let mut dat = String::from("# per-ASN IPv6 rate histograms\n");
        for (label, hist) in &self.histograms {
            let _ = writeln!(dat, "\n\n# {label}\n# bin_lo bin_hi asns");
            for (i, n) in hist.iter().enumerate() {
                let (lo, hi) = (i as f64 / self.bins as f64, (i + 1) as f64 / self.bins as f64);
                rows.push(vec![label.clone(), f6(lo), f6(hi), n.to_string()]);
                let _ = writeln!(dat, "{} {} {n}", f6(lo), f6(hi));
            }
        }
        write_csv(&put("asn_histogram.csv"), &["metric", "bin_lo", "bin_hi", "asns"], rows)?;
        fs::write(put("asn_histogram.dat"), dat)?;

        let rows = self
            .disparity
            .records
            .iter()
            .map(|d| {
                vec![
                    d.asn.0.to_string(),
                    d.probe.clone(),
                    d.outcome.clone(),
                    d.pairs.to_string(),
                    f6(d.v4_rate),
                    f6(d.v6_rate),
                    f6(d.disparity),
                ]
            })
            .collect();
        write_csv(&put("disparity.csv"), &["asn", "probe", "outcome", "pairs", "v4_rate", "v6_rate", "disparity"], rows)?;
        let mut dat = String::from("# probe outcome asns p5 p25 p50 p75 p95\n");
        let rows = self
            .disparity
            .quantiles
            .iter()
            .map(|q| {
                let mut r = vec![q.probe.clone(), q.outcome.clone(), q.asns.to_string()];
                r.extend(q.quantiles.iter().map(|v| f6(*v)));
                let _ = writeln!(dat, "{}", r.join(" "));
                r
            })
            .collect();
        write_csv(&put("disparity_quantiles.csv"), &["probe", "outcome", "asns", "p5", "p25", "p50", "p75", "p95"], rows)?;
        fs::write(put("disparity_quantiles.dat"), dat)?;

        let rows = self.top.asns.iter().map(|(a, n)| vec![a.0.to_string(), n.to_string()]).collect();
        write_csv(&put("top_asns.csv"), &["asn", "addresses"], rows)?;
        let rows = self.top.countries.iter().map(|(c, n)| vec![c.clone(), n.to_string()]).collect();
        write_csv(&put("top_countries.csv"), &["country", "addresses"], rows)?;
        let rows = SIZE_BANDS
            .iter()
            .map(|b| vec![b.to_string(), self.asn_sizes.get(*b).copied().unwrap_or(0).to_string()])
            .collect();
        write_csv(&put("asn_sizes.csv"), &["band", "asns"], rows)?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::{Ipv4Addr, Ipv6Addr};

    fn icmp(target: &str, asn: u32, responsive: bool) -> ProbeLogRecord {
        let target: IpAddr = target.parse().unwrap();
        ProbeLogRecord {
            ts_us: 0,
            family: crate::probe::family(target).into(),
            target,
            kind: ProbeKind::Icmp,
            port: None,
            result: if responsive { "responsive" } else { "unresponsive" }.into(),
            replies: Some(u32::from(responsive)),
            requests: Some(3),
            asn: Some(Asn(asn)),
            paired_with: None,
            local_retries: 0,
        }
    }

    fn tcp(target: &str, asn: u32, port: u16, r: TcpResult) -> ProbeLogRecord {
        let mut rec = icmp(target, asn, false);
        rec.kind = ProbeKind::Tcp;
        rec.port = Some(port);
        rec.result = r.as_str().into();
        rec.replies = None;
        rec.requests = None;
        rec
    }

    #[test]
    fn port_rates() {
        let mut recs = Vec::new();
        for i in 0..1000 {
            let r = if i < 200 { TcpResult::Accepted } else { TcpResult::Dropped };
            recs.push(tcp(&format!("2a00::{:x}", i + 1), 1, 80, r));
        }
        let s = summarize(&recs);
        assert_eq!(s.ports[&80].accepted_rate, 0.2);
    }

    #[test]
    fn silent_targets() {
        let recs: Vec<_> = (1..=10)
            .flat_map(|i| {
                let t = format!("2a00::{i}");
                [icmp(&t, 1, false), tcp(&t, 1, 22, TcpResult::Dropped)]
            })
            .collect();
        let s = summarize(&recs);
        assert_eq!(s.icmp_rate, 0.0);
        assert_eq!(s.ports[&22].dropped_rate, 1.0);
        assert_eq!(s.tcp_without_icmp, 0);
    }

    #[test]
    fn tcp_without_icmp() {
        let recs = vec![
            icmp("2a00::1", 1, false),
            tcp("2a00::1", 1, 22, TcpResult::Refused),
            icmp("2a00::2", 1, true),
            tcp("2a00::2", 1, 22, TcpResult::Accepted),
        ];
        assert_eq!(summarize(&recs).tcp_without_icmp, 1);
    }

    fn stats(asn: u32, addresses: u64, responsive: u64) -> AsnStats {
        AsnStats {
            asn: Asn(asn),
            addresses,
            icmp_responsive: responsive,
            tcp: BTreeMap::new(),
        }
    }

    #[test]
    fn histogram_examples() {
        let bimodal = vec![stats(1, 4, 0), stats(2, 3, 3), stats(3, 1, 0)];
        let h = per_asn_histogram(&bimodal, Metric::IcmpResponsive, DEFAULT_BINS);
        assert_eq!(h[0], 2);
        assert_eq!(h[19], 1);
        assert_eq!(h.iter().sum::<u64>(), 3);
        let h = per_asn_histogram(&[stats(1, 10, 5)], Metric::IcmpResponsive, 10);
        assert_eq!(h, vec![0, 0, 0, 0, 0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn quantile_examples() {
        let mut v = vec![1.0, -1.0, 0.0];
        assert_eq!(nearest_rank(&mut v, 50), Some(0.0));
        let mut v = vec![0.0; 7];
        assert!(QUANTILES.iter().all(|&q| nearest_rank(&mut v, q) == Some(0.0)));
        assert_eq!(nearest_rank(&mut [], 50), None);
        let mut v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&mut v, 5), Some(1.0));
        assert_eq!(nearest_rank(&mut v, 95), Some(19.0));
    }

    #[test]
    fn disparity_sign() {
        let pairs: Vec<AddressPair> = (1..=4u8)
            .map(|i| AddressPair {
                v4: Ipv4Addr::new(192, 0, 2, i),
                v6: format!("2a00::{i}").parse::<Ipv6Addr>().unwrap(),
                asn: Asn(7),
                name: format!("n{i}"),
            })
            .collect();
        let mut recs = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            recs.push(icmp(&p.v4.to_string(), 7, true));
            recs.push(icmp(&p.v6.to_string(), 7, i == 0));
        }
        let d = paired_disparity(&recs, &pairs);
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.records[0].v4_rate, 1.0);
        assert_eq!(d.records[0].v6_rate, 0.25);
        assert!(d.quantiles[0].quantiles[2] > 0.0);
    }

    fn classified(asn: u32, i: u32) -> ClassifiedAddress {
        crate::classify::classify_address(
            Ipv6Addr::from((u128::from(asn) << 96) | u128::from(i)),
            &crate::classify::SpecialRegistry::bundled(),
            &crate::routing::parse_routing_table(&format!("{}/32\t{asn}\n", Ipv6Addr::from(u128::from(asn) << 96))).0,
            None,
        )
    }

    #[test]
    fn top_and_sizes() {
        let mut recs: Vec<_> = (0..3).map(|i| classified(0x2a00_0001, i)).collect();
        recs.extend((0..5).map(|i| classified(0x2a00_0002, i)));
        let cc = AsnCountryMap::new();
        let t = top_tables(&recs, &cc, 1);
        assert_eq!(t.asns, vec![(Asn(0x2a00_0002), 5)]);
        assert_eq!(t.countries, vec![("unknown".to_string(), 8)]);
        let mut tie: Vec<_> = (0..5).map(|i| classified(0x2a00_0001, i)).collect();
        tie.extend((0..5).map(|i| classified(0x2a00_0002, i)));
        assert_eq!(top_tables(&tie, &cc, 2).asns[0].0, Asn(0x2a00_0001));

        assert_eq!(asn_size_breakdown(&[]), [0; 6]);
        let mut mix = vec![classified(0x2a00_0001, 0), classified(0x2a00_0002, 0)];
        mix.extend((0..2).map(|i| classified(0x2a00_0003, i)));
        mix.extend((0..150).map(|i| classified(0x2a00_0004, i)));
        assert_eq!(asn_size_breakdown(&mix), [2, 1, 0, 0, 0, 1]);
    }
}
