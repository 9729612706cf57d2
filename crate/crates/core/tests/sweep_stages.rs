mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv6Addr};
use std::sync::Arc;
use std::time::Duration;

use ptrsweep_core::classify::SpecialRegistry;
use ptrsweep_core::clock::VirtualClock;
use ptrsweep_core::dns::{reverse_name, DnsEngine, EngineConfig, RecordKind, ResponseCategory, Transport};
use ptrsweep_core::jsonl::read_records;
use ptrsweep_core::simnet::{Scenario, SimResolver, ZoneData, ZoneStatus};
use ptrsweep_core::sweep::{
    self, run_a_sweep, run_aaaa_sweep, run_ptr_sweep, select_a_candidates, NameLogRecord, PtrLogRecord, StageOptions, StagePaths,
};

fn engine(resolver: Arc<SimResolver>) -> DnsEngine {
    let cfg = EngineConfig {
        max_in_flight: 16,
        ..EngineConfig::default()
    };
    DnsEngine::new(resolver, Arc::new(VirtualClock::new(Duration::ZERO)), cfg).unwrap()
}

fn opts(chunk: u64, stop: Option<usize>) -> StageOptions {
    StageOptions {
        chunk_size: chunk,
        stop_after_chunks: stop,
    }
}

#[test]
fn categories_sum_to_queries() {
    for seed in 0..5 {
        let s = Arc::new(Scenario::parse(&common::random_zone(seed, 3)).unwrap());
        let table = s.routing_table();
        let dir = tempfile::tempdir().unwrap();
        let r = Arc::new(SimResolver::new(s.clone()));
        let e = engine(r.clone());
        let run = run_ptr_sweep(&table, &e, &StagePaths::in_dir(dir.path(), "ptr"), opts(100, None)).unwrap();
        assert!(run.complete);
        assert_eq!(run.stats.queries, table.routed_ipv4_count());
        let by_cat: u64 = ResponseCategory::ALL.iter().map(|c| run.stats.category(*c)).sum();
        assert_eq!(by_cat, run.stats.queries);

        let log: Vec<PtrLogRecord> = read_records(&dir.path().join("ptr.jsonl")).unwrap();
        let sources: BTreeSet<_> = log.iter().map(|r| r.source).collect();
        assert_eq!(sources.len() as u64, table.routed_ipv4_count());
        let expected: BTreeSet<_> = table.enumerate_routed_ipv4().collect();
        assert_eq!(sources, expected);
        // Histogram of answer-set sizes covers exactly the NoError outcomes.
        let hist: u64 = run.stats.answer_set_sizes.values().sum();
        assert_eq!(hist, run.stats.category(ResponseCategory::NoError));
        // Truncated answers were retried over TCP exactly once each.
        for rec in log.iter().filter(|r| r.outcome.transport == Transport::Tcp) {
            assert_eq!(r.transactions(&rec.outcome.name, RecordKind::Ptr, Transport::Tcp), 1);
        }

        let names = sweep::collect_names(&dir.path().join("ptr.jsonl")).unwrap();
        let aaaa = run_aaaa_sweep(&names, &e, &StagePaths::in_dir(dir.path(), "aaaa"), opts(37, None)).unwrap();
        assert_eq!(aaaa.stats.queries, names.len() as u64);
        let by_cat: u64 = ResponseCategory::ALL.iter().map(|c| aaaa.stats.category(*c)).sum();
        assert_eq!(by_cat, aaaa.stats.queries);
    }
}

#[test]
fn resume_from_every_checkpoint_loses_and_repeats_nothing() {
    let text = common::random_zone(42, 2);
    let s = Arc::new(Scenario::parse(&text).unwrap());
    let table = s.routing_table();
    let total = table.routed_ipv4_count();
    let chunk = 64;
    let chunks = total.div_ceil(chunk) as usize;

    let clean = tempfile::tempdir().unwrap();
    run_ptr_sweep(&table, &engine(Arc::new(SimResolver::new(s.clone()))), &StagePaths::in_dir(clean.path(), "ptr"), opts(chunk, None)).unwrap();
    let reference = std::fs::read(clean.path().join("ptr.jsonl")).unwrap();

    for stop in 1..chunks {
        let dir = tempfile::tempdir().unwrap();
        let paths = StagePaths::in_dir(dir.path(), "ptr");
        let r = Arc::new(SimResolver::new(s.clone()));
        let first = run_ptr_sweep(&table, &engine(r.clone()), &paths, opts(chunk, Some(stop))).unwrap();
        assert!(!first.complete);
        // Simulate a crash that left a partial line after the last checkpoint.
        let mut f = std::fs::OpenOptions::new().append(true).open(&paths.log).unwrap();
        std::io::Write::write_all(&mut f, b"{\"source\":\"46.0.").unwrap();
        let second = run_ptr_sweep(&table, &engine(r.clone()), &paths, opts(chunk, None)).unwrap();
        assert!(second.complete);
        assert_eq!(first.issued + second.issued, total, "stop {stop}");
        assert_eq!(second.stats.queries, total);
        assert_eq!(std::fs::read(&paths.log).unwrap(), reference, "stop {stop}");
        for a in table.enumerate_routed_ipv4() {
            let timeout = matches!(s.ptr_entry(a).data, ZoneData::Status(ZoneStatus::Timeout));
            let want = if timeout { 1 + u64::from(EngineConfig::default().retries) } else { 1 };
            assert_eq!(r.transactions(reverse_name(a).name(), RecordKind::Ptr, Transport::Udp), want, "{a} stop {stop}");
        }
    }
}

#[test]
fn a_candidates_match_brute_force_filter() {
    let s = Arc::new(Scenario::parse(&common::random_zone(9, 3)).unwrap());
    let table = s.routing_table();
    let reg = SpecialRegistry::bundled();
    let dir = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(SimResolver::new(s.clone())));
    run_ptr_sweep(&table, &e, &StagePaths::in_dir(dir.path(), "ptr"), StageOptions::ptr()).unwrap();
    let names = sweep::collect_names(&dir.path().join("ptr.jsonl")).unwrap();
    run_aaaa_sweep(&names, &e, &StagePaths::in_dir(dir.path(), "aaaa"), StageOptions::names()).unwrap();
    let aaaa: Vec<NameLogRecord> = read_records(&dir.path().join("aaaa.jsonl")).unwrap();

    // Oracle: a name qualifies iff some answer lies in 2a00::/32 (the one
    // routed v6 prefix) and outside every registry block, checked by masks.
    let routed = |a: Ipv6Addr| u128::from(a) >> 96 == 0x2a00_0000;
    let special = |a: Ipv6Addr| {
        reg.entries().iter().any(|(p, _)| match p.base() {
            IpAddr::V6(b) => {
                let len = u32::from(p.len());
                let mask = if len == 0 { 0 } else { u128::MAX << (128 - len) };
                u128::from(a) & mask == u128::from(b)
            }
            IpAddr::V4(_) => false,
        })
    };
    let expected: BTreeSet<String> = aaaa
        .iter()
        .filter(|r| r.outcome.answers.iter().any(|a| a.parse().map(|a| routed(a) && !special(a)).unwrap_or(false)))
        .map(|r| r.outcome.name.clone())
        .collect();
    let picked = select_a_candidates(&aaaa, &reg, &table);
    let got: BTreeSet<String> = picked.iter().map(|c| c.name.clone()).collect();
    assert_eq!(got, expected);
    assert!(!got.is_empty());

    let run = run_a_sweep(&picked, &e, &StagePaths::in_dir(dir.path(), "a"), StageOptions::names()).unwrap();
    assert_eq!(run.stats.queries, expected.len() as u64);
}

#[test]
fn invalid_names_are_counted_per_class() {
    let text = "route 192.0.2.0/28 64500\nptr 192.0.2.1 localhost\nptr 192.0.2.2 localhost.\nptr 192.0.2.3 127.0.0.1\nptr 192.0.2.4 0.0.0.0\nptr 192.0.2.5 192.0.2.5\nptr 192.0.2.6 host.example\nptr 192.0.2.7 .\naaaa localhost ::1\n";
    let s = Arc::new(Scenario::parse(text).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let e = engine(Arc::new(SimResolver::new(s.clone())));
    run_ptr_sweep(&s.routing_table(), &e, &StagePaths::in_dir(dir.path(), "ptr"), StageOptions::ptr()).unwrap();
    let names = sweep::collect_names(&dir.path().join("ptr.jsonl")).unwrap();
    let by: BTreeMap<String, (String, u64)> = names
        .iter()
        .map(|n| (n.name.clone(), (n.validity.as_str().to_string(), n.multiplicity)))
        .collect();
    assert_eq!(by["localhost"], ("localhost".into(), 2));
    assert_eq!(by["127.0.0.1"].0, "loopback-literal");
    assert_eq!(by["0.0.0.0"].0, "zero-literal");
    assert_eq!(by["192.0.2.5"].0, "ipv4-literal");
    assert_eq!(by["host.example"].0, "valid");
    assert_eq!(by[""].0, "empty-string");
    let run = run_aaaa_sweep(&names, &e, &StagePaths::in_dir(dir.path(), "aaaa"), StageOptions::names()).unwrap();
    assert_eq!(run.stats.notable.get("::1 from localhost"), Some(&1));
}
