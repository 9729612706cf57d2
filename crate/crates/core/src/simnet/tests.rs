use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::clock::VirtualClock;
use crate::dns::{DnsEngine, DnsQuery, EngineConfig, NetworkResolver, RecordKind, ResponseCategory, Transport};
use crate::probe::{icmp_probe, tcp_probe, ProbeConfig, TcpResult};

const BASIC: &str = "\
seed 7
epoch 1456704000
route 192.0.2.0/24 64500
route 2a00:1::/32 64500
country 64500 DE
ptr 192.0.2.1 host1.example
ptr 192.0.2.2 NXDOMAIN
ptr 192.0.2.3 +tc big.example
ptr 192.0.2.16/28 SERVFAIL
ptr 192.0.2.17 special.example   # more specific than the /28
aaaa host1.example 2a00:1::1
aaaa host2.example SERVFAIL
aaaa localhost ::1
a host1.example 192.0.2.1
cname www.example host1.example
echo 2a00:1::1 --x
tcp 2a00:1::1 80 refuse
tcp 2a00:1::1 * accept
";

fn engine(s: Arc<Scenario>) -> (Arc<SimResolver>, DnsEngine) {
    let r = Arc::new(SimResolver::new(s));
    let e = DnsEngine::new(r.clone(), Arc::new(VirtualClock::new(Duration::ZERO)), EngineConfig::default()).unwrap();
    (r, e)
}

fn run(e: &DnsEngine, qs: Vec<DnsQuery>) -> Vec<crate::dns::QueryOutcome> {
    let mut out = vec![None; qs.len()];
    e.execute_batch(qs, |i, o| out[i] = Some(o));
    out.into_iter().map(Option::unwrap).collect()
}

#[test]
fn parses_and_serves_zone() {
    let s = Arc::new(Scenario::parse(BASIC).unwrap());
    assert_eq!(s.seed, 7);
    assert_eq!(s.routing_table().len(), 2);
    let (r, e) = engine(s);
    let out = run(
        &e,
        vec![
            DnsQuery::ptr("192.0.2.1".parse().unwrap()),
            DnsQuery::ptr("192.0.2.2".parse().unwrap()),
            DnsQuery::ptr("192.0.2.3".parse().unwrap()),
            DnsQuery::ptr("192.0.2.20".parse().unwrap()),
            DnsQuery::ptr("192.0.2.17".parse().unwrap()),
            DnsQuery::ptr("192.0.2.99".parse().unwrap()),
            DnsQuery::new("host2.example", RecordKind::Aaaa),
            DnsQuery::new("www.example", RecordKind::Aaaa),
            DnsQuery::new("host1.example", RecordKind::A),
            DnsQuery::new("localhost", RecordKind::A),
        ],
    );
    assert_eq!(out[0].answers, vec!["host1.example".to_string()]);
    assert_eq!(out[1].category, ResponseCategory::NoDomain);
    assert_eq!(out[2].transport, Transport::Tcp);
    assert_eq!(out[2].answers, vec!["big.example".to_string()]);
    assert_eq!(out[3].category, ResponseCategory::ServFail);
    assert_eq!(out[4].answers, vec!["special.example".to_string()]);
    assert_eq!(out[5].category, ResponseCategory::NoDomain);
    assert_eq!(out[6].category, ResponseCategory::ServFail);
    assert_eq!(out[7].answers, vec!["2a00:1::1".to_string()]);
    assert!(out[7].cname_chain);
    assert_eq!(out[8].answers, vec!["192.0.2.1".to_string()]);
    assert_eq!(out[9].category, ResponseCategory::NoData);
    assert_eq!(r.transactions("3.2.0.192.in-addr.arpa", RecordKind::Ptr, Transport::Tcp), 1);
}

#[test]
fn statuses_map_to_categories() {
    let s = Arc::new(
        Scenario::parse("aaaa n1 NXDOMAIN\naaaa n2 NODATA\naaaa n3 TIMEOUT\naaaa n4 REFUSED\ndefault aaaa SERVFAIL\n").unwrap(),
    );
    let (_, e) = engine(s);
    let qs = ["n1", "n2", "n3", "n4", "elsewhere"]
        .iter()
        .map(|n| DnsQuery::new(*n, RecordKind::Aaaa))
        .collect();
    let cats: Vec<_> = run(&e, qs).into_iter().map(|o| o.category).collect();
    assert_eq!(
        cats,
        vec![
            ResponseCategory::NoDomain,
            ResponseCategory::NoData,
            ResponseCategory::Timeout,
            ResponseCategory::Other,
            ResponseCategory::ServFail
        ]
    );
}

#[test]
fn rejects_bad_scenarios_with_line_numbers() {
    let cases = [
        ("seed 1\nbogus 3\n", 2),
        ("ptr 192.0.2.1\n", 1),
        ("\n\nptr 2a00::1 x.example\n", 3),
        ("aaaa n1 2a00::1\naaaa n1 2a00::2\n", 2),
        ("cname a.example b.example\n", 1),
        ("aaaa b 2a00::1\ncname a b\ncname c d\n", 3),
        ("cname a b\ncname b a\n", 1),
        ("echo 2a00::1 xq\n", 1),
        ("tcp 2a00::1 http accept\n", 1),
        ("route 192.0.2.1/24 1\n", 1),
    ];
    for (text, line) in cases {
        let err = Scenario::parse(text).unwrap_err();
        assert_eq!(err.line, line, "{text:?}: {err}");
    }
}

#[test]
fn digest_ignores_comments_and_spacing() {
    let a = Scenario::parse("seed 1\n# note\naaaa  n1   2a00::1\n").unwrap();
    let b = Scenario::parse("seed 1\naaaa n1 2a00::1   # trailing\n\n").unwrap();
    let c = Scenario::parse("seed 2\naaaa n1 2a00::1\n").unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn probe_scripts() {
    let s = Arc::new(Scenario::parse(BASIC).unwrap());
    let t = SimTransport::new(s);
    let cfg = ProbeConfig::default();
    let target: IpAddr = "2a00:1::1".parse().unwrap();
    let o = icmp_probe(target, &cfg, &t).unwrap();
    assert!(o.responsive);
    assert_eq!((o.replies, o.requests), (1, 3));
    assert_eq!(tcp_probe(target, 80, &cfg, &t).unwrap().result, TcpResult::Refused);
    assert_eq!(tcp_probe(target, 22, &cfg, &t).unwrap().result, TcpResult::Accepted);
    let other: IpAddr = "2a00:1::2".parse().unwrap();
    assert!(!icmp_probe(other, &cfg, &t).unwrap().responsive);
    assert_eq!(tcp_probe(other, 22, &cfg, &t).unwrap().result, TcpResult::Dropped);
}

#[test]
fn loopback_server_answers_over_udp_and_tcp() {
    let s = Arc::new(Scenario::parse(BASIC).unwrap());
    let server = SimServer::start(Arc::new(SimResolver::new(s))).unwrap();
    let cfg = EngineConfig {
        resolver: server.addr(),
        timeout: Duration::from_millis(500),
        max_in_flight: 4,
        ..EngineConfig::default()
    };
    let e = DnsEngine::new(
        Arc::new(NetworkResolver::new(server.addr())),
        Arc::new(VirtualClock::new(Duration::ZERO)),
        cfg,
    )
    .unwrap();
    let out = run(
        &e,
        vec![
            DnsQuery::ptr("192.0.2.1".parse().unwrap()),
            DnsQuery::ptr("192.0.2.3".parse().unwrap()),
            DnsQuery::new("host2.example", RecordKind::Aaaa),
        ],
    );
    assert_eq!(out[0].answers, vec!["host1.example".to_string()]);
    assert_eq!(out[1].transport, Transport::Tcp);
    assert_eq!(out[1].answers, vec!["big.example".to_string()]);
    assert_eq!(out[2].category, ResponseCategory::ServFail);
    let c = server.resolver().counters();
    assert_eq!((c.udp, c.tcp), (3, 1));
    server.shutdown();
}
