use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use lru::LruCache;
use serde::{Deserialize, Serialize};

use super::wire::{decode_response, encode_query};
use super::{classify_response, DnsQuery, ExchangeError, QueryOutcome, RecordKind, Resolver, ResponseCategory, Transport};
use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub resolver: SocketAddr,
    pub max_in_flight: usize,
    pub timeout: Duration,
    /// Extra UDP attempts after a timeout.
    pub retries: u32,
    pub cache_capacity: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            resolver: "127.0.0.1:53".parse().expect("literal"),
            max_in_flight: 64,
            timeout: Duration::from_secs(5),
            retries: 1,
            cache_capacity: 100_000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max in-flight must be at least 1".into());
        }
        if self.timeout.is_zero() {
            return Err("timeout must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub queries: u64,
    pub outcomes: u64,
    pub categories: BTreeMap<ResponseCategory, u64>,
    pub udp_transactions: u64,
    pub tcp_transactions: u64,
    pub cache_hits: u64,
    /// Duplicates answered by a transaction already in flight.
    pub coalesced: u64,
    pub max_in_flight: usize,
}

impl BatchStats {
    fn record(&mut self, o: &QueryOutcome) {
        self.outcomes += 1;
        *self.categories.entry(o.category).or_default() += 1;
    }
}

struct Resolution {
    category: ResponseCategory,
    answers: Vec<String>,
    transport: Transport,
    rcode: Option<u16>,
    cname_chain: bool,
    udp_transactions: u64,
    tcp_transactions: u64,
}

impl Resolution {
    fn failed(category: ResponseCategory, transport: Transport, udp: u64, tcp: u64) -> Self {
        Resolution {
            category,
            answers: Vec::new(),
            transport,
            rcode: None,
            cname_chain: false,
            udp_transactions: udp,
            tcp_transactions: tcp,
        }
    }
}

type CacheKey = (String, RecordKind);

/// Bounded-concurrency DNS query executor with a per-run answer cache.
pub struct DnsEngine {
    resolver: Arc<dyn Resolver>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    cache: Mutex<LruCache<CacheKey, QueryOutcome>>,
    next_id: AtomicU16,
}

impl DnsEngine {
    pub fn new(resolver: Arc<dyn Resolver>, clock: Arc<dyn Clock>, config: EngineConfig) -> Result<Self, String> {
        config.validate()?;
        let cap = NonZeroUsize::new(config.cache_capacity.max(1)).expect("nonzero");
        Ok(DnsEngine {
            resolver,
            clock,
            cache: Mutex::new(LruCache::new(cap)),
            next_id: AtomicU16::new(1),
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn resolve(&self, query: &DnsQuery) -> Resolution {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = match encode_query(id, query) {
            Ok(r) => r,
            Err(_) => return Resolution::failed(ResponseCategory::Other, Transport::Udp, 0, 0),
        };
        let mut udp = 0;
        let mut last = ResponseCategory::Timeout;
        for _ in 0..=self.config.retries {
            udp += 1;
            match self.resolver.exchange(&request, Transport::Udp, self.config.timeout) {
                Ok(bytes) => {
                    let decoded = match decode_response(&bytes, id, query.kind) {
                        Ok(d) => d,
                        Err(_) => return Resolution::failed(ResponseCategory::Other, Transport::Udp, udp, 0),
                    };
                    if !decoded.truncated {
                        return self.finish(decoded, Transport::Udp, udp, 0);
                    }
                    return match self.resolver.exchange(&request, Transport::Tcp, self.config.timeout) {
                        Ok(bytes) => match decode_response(&bytes, id, query.kind) {
                            Ok(d) => self.finish(d, Transport::Tcp, udp, 1),
                            Err(_) => Resolution::failed(ResponseCategory::Other, Transport::Tcp, udp, 1),
                        },
                        Err(ExchangeError::Timeout) => Resolution::failed(ResponseCategory::Timeout, Transport::Tcp, udp, 1),
                        Err(ExchangeError::Io(_)) => Resolution::failed(ResponseCategory::Other, Transport::Tcp, udp, 1),
                    };
                }
                Err(ExchangeError::Timeout) => last = ResponseCategory::Timeout,
                Err(ExchangeError::Io(_)) => last = ResponseCategory::Other,
            }
        }
        Resolution::failed(last, Transport::Udp, udp, 0)
    }

    fn finish(&self, d: super::wire::DecodedResponse, transport: Transport, udp: u64, tcp: u64) -> Resolution {
        let category = classify_response(d.rcode, d.answers.len(), false);
        Resolution {
            category,
            answers: if category == ResponseCategory::NoError { d.answers } else { Vec::new() },
            transport,
            rcode: Some(d.rcode),
            cname_chain: d.cname_chain,
            udp_transactions: udp,
            tcp_transactions: tcp,
        }
    }

    /// Runs every query and hands exactly one outcome per query to `sink`,
    /// tagged with the query's position in the input. No more than
    /// `max_in_flight` resolver transactions are outstanding at once;
    /// duplicate (name, type) pairs are served from the cache or coalesced
    /// onto the transaction already in flight.
    pub fn execute_batch<I, F>(&self, queries: I, mut sink: F) -> BatchStats
    where
        I: IntoIterator<Item = DnsQuery>,
        F: FnMut(usize, QueryOutcome),
    {
        let workers = self.config.max_in_flight;
        let (job_tx, job_rx) = crossbeam_channel::bounded::<(usize, DnsQuery)>(workers);
        let (res_tx, res_rx) = crossbeam_channel::unbounded::<(usize, DnsQuery, Resolution)>();
        let mut stats = BatchStats::default();

        thread::scope(|scope| {
            for _ in 0..workers {
                let job_rx = job_rx.clone();
                let res_tx = res_tx.clone();
                scope.spawn(move || {
                    for (idx, q) in job_rx.iter() {
                        let r = self.resolve(&q);
                        if res_tx.send((idx, q, r)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(res_tx);

            let mut waiting: HashMap<CacheKey, Vec<usize>> = HashMap::new();
            let mut in_flight = 0usize;
            let mut input = queries.into_iter().enumerate();
            let mut cache = self.cache.lock().expect("cache lock");
            loop {
                while in_flight < workers {
                    let Some((idx, q)) = input.next() else { break };
                    stats.queries += 1;
                    let key = q.cache_key();
                    if let Some(hit) = cache.get(&key) {
                        let mut o = hit.clone();
                        o.name = q.name;
                        o.cached = true;
                        o.ts_us = self.clock.now_micros();
                        stats.cache_hits += 1;
                        stats.record(&o);
                        sink(idx, o);
                        continue;
                    }
                    if let Some(w) = waiting.get_mut(&key) {
                        w.push(idx);
                        stats.coalesced += 1;
                        continue;
                    }
                    waiting.insert(key, Vec::new());
                    job_tx.send((idx, q)).expect("workers alive");
                    in_flight += 1;
                    stats.max_in_flight = stats.max_in_flight.max(in_flight);
                }
                if in_flight == 0 {
                    break;
                }
                let (idx, q, r) = res_rx.recv().expect("workers alive");
                in_flight -= 1;
                stats.udp_transactions += r.udp_transactions;
                stats.tcp_transactions += r.tcp_transactions;
                let outcome = QueryOutcome {
                    name: q.name.clone(),
                    kind: q.kind,
                    category: r.category,
                    answers: r.answers,
                    transport: r.transport,
                    cached: false,
                    cname_chain: r.cname_chain,
                    rcode: r.rcode,
                    ts_us: self.clock.now_micros(),
                };
                let key = q.cache_key();
                let waiters = waiting.remove(&key).unwrap_or_default();
                for w in waiters {
                    let mut copy = outcome.clone();
                    copy.cached = true;
                    stats.record(&copy);
                    sink(w, copy);
                }
                // Timeouts may succeed on a later attempt, everything else is cached.
                if outcome.category != ResponseCategory::Timeout {
                    cache.put(key, outcome.clone());
                }
                stats.record(&outcome);
                sink(idx, outcome);
            }
            drop(job_tx);
        });
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::dns::wire::{decode_query, encode_response, AnswerData, UDP_PAYLOAD_LIMIT};
    use std::sync::atomic::AtomicUsize;

    /// Answers `nx*` names with NXDOMAIN, `slow*` names never, and
    /// everything else with `4n` PTR records where `n` is the leading digit
    /// of the name.
    #[derive(Default)]
    struct Fake {
        udp: AtomicUsize,
        tcp: AtomicUsize,
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Resolver for Fake {
        fn exchange(&self, request: &[u8], transport: Transport, _t: Duration) -> Result<Vec<u8>, ExchangeError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_micros(200));
            match transport {
                Transport::Udp => self.udp.fetch_add(1, Ordering::SeqCst),
                Transport::Tcp => self.tcp.fetch_add(1, Ordering::SeqCst),
            };
            let q = decode_query(request).unwrap();
            let result = if q.name.starts_with("slow") {
                Err(ExchangeError::Timeout)
            } else if q.name.starts_with("nx") {
                Ok(encode_response(&q, 3, &[], false).unwrap())
            } else {
                let n: usize = 4 * q.name[..1].parse().unwrap_or(1);
                let answers: Vec<_> = (0..n)
                    .map(|i| (q.name.clone(), AnswerData::Ptr(format!("host-{i:04}.some-long-label.example.net"))))
                    .collect();
                let full = encode_response(&q, 0, &answers, false).unwrap();
                if transport == Transport::Udp && full.len() > UDP_PAYLOAD_LIMIT {
                    Ok(encode_response(&q, 0, &[], true).unwrap())
                } else {
                    Ok(full)
                }
            };
            self.current.fetch_sub(1, Ordering::SeqCst);
            result
        }
    }

    fn engine(fake: Arc<Fake>, max_in_flight: usize) -> DnsEngine {
        let cfg = EngineConfig {
            max_in_flight,
            ..EngineConfig::default()
        };
        DnsEngine::new(fake, Arc::new(VirtualClock::new(Duration::ZERO)), cfg).unwrap()
    }

    #[test]
    fn every_query_gets_one_outcome() {
        let fake = Arc::new(Fake::default());
        let e = engine(fake.clone(), 4);
        let queries: Vec<_> = (0..1000)
            .map(|i| {
                let name = if i % 10 == 0 { format!("nx{i}.example") } else { format!("1-{i}.example") };
                DnsQuery::new(name, RecordKind::Ptr)
            })
            .collect();
        let mut seen = vec![0u32; queries.len()];
        let stats = e.execute_batch(queries, |idx, _| seen[idx] += 1);
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(stats.outcomes, 1000);
        assert_eq!(stats.categories[&ResponseCategory::NoDomain], 100);
        assert_eq!(stats.categories[&ResponseCategory::NoError], 900);
        assert!(stats.max_in_flight <= 4);
        assert!(fake.peak.load(Ordering::SeqCst) <= 4);
    }

    #[test]
    fn duplicates_cost_one_transaction() {
        let fake = Arc::new(Fake::default());
        let e = engine(fake.clone(), 8);
        let q = DnsQuery::new("1.example", RecordKind::Ptr);
        let mut outs = Vec::new();
        let stats = e.execute_batch(vec![q.clone(), q.clone()], |_, o| outs.push(o));
        assert_eq!(outs.len(), 2);
        assert_eq!(fake.udp.load(Ordering::SeqCst), 1);
        assert_eq!(stats.cache_hits + stats.coalesced, 1);
        assert_eq!(outs.iter().filter(|o| o.cached).count(), 1);
        // A later batch is served from the cache, case-insensitively.
        e.execute_batch(vec![DnsQuery::new("1.EXAMPLE.", RecordKind::Ptr)], |_, o| assert!(o.cached));
        assert_eq!(fake.udp.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn truncation_falls_back_to_tcp_once() {
        let fake = Arc::new(Fake::default());
        let e = engine(fake.clone(), 1);
        let mut outs = Vec::new();
        e.execute_batch(vec![DnsQuery::new("9.example", RecordKind::Ptr)], |_, o| outs.push(o));
        assert_eq!(outs[0].transport, Transport::Tcp);
        assert_eq!(outs[0].answers.len(), 36);
        assert_eq!(fake.tcp.load(Ordering::SeqCst), 1);
        assert_eq!(fake.udp.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn timeouts_retry_then_surface() {
        let fake = Arc::new(Fake::default());
        let e = engine(fake.clone(), 2);
        let mut outs = Vec::new();
        let stats = e.execute_batch(vec![DnsQuery::new("slow.example", RecordKind::Aaaa)], |_, o| outs.push(o));
        assert_eq!(outs[0].category, ResponseCategory::Timeout);
        assert!(outs[0].answers.is_empty());
        assert_eq!(stats.udp_transactions, 2);
    }

    #[test]
    fn unencodable_names_are_other() {
        let fake = Arc::new(Fake::default());
        let e = engine(fake, 1);
        let long = "a".repeat(70);
        let mut outs = Vec::new();
        e.execute_batch(vec![DnsQuery::new(long, RecordKind::Aaaa)], |_, o| outs.push(o));
        assert_eq!(outs[0].category, ResponseCategory::Other);
    }

    #[test]
    fn rejects_bad_config() {
        let fake: Arc<dyn Resolver> = Arc::new(Fake::default());
        let clock = Arc::new(VirtualClock::new(Duration::ZERO));
        let zero = EngineConfig { max_in_flight: 0, ..EngineConfig::default() };
        assert!(DnsEngine::new(fake.clone(), clock.clone(), zero).is_err());
        let no_timeout = EngineConfig { timeout: Duration::ZERO, ..EngineConfig::default() };
        assert!(DnsEngine::new(fake, clock, no_timeout).is_err());
    }
}
