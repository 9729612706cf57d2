//! Paced ICMP echo and TCP connection measurements.
//!
//! The campaign runs one ICMP pass over every target, then one full pass per
//! TCP port in configured order. Issuance is paced by a token bucket on the
//! injected clock, and results funnel through a single writer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::{IpAddr, Ipv6Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::jsonl::{Checkpoint, JsonlError, JsonlWriter};
use crate::pairing::AddressPair;
use crate::routing::RoutingTable;
use crate::sweep::StagePaths;
use crate::Asn;

mod pacer;
mod system;

pub use pacer::Pacer;
pub use system::SystemTransport;

pub const DEFAULT_PORTS: [u16; 6] = [21, 22, 53, 80, 443, 8080];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeConfig {
    pub attempts: u32,
    pub echo_timeout: Duration,
    pub tcp_timeout: Duration,
    /// Spacing between echo requests to one target.
    pub echo_gap: Duration,
    /// Stop sending echoes after the first reply.
    pub early_exit: bool,
    pub ports: Vec<u16>,
    /// Probe units per hour; an ICMP campaign against one target is one unit.
    pub pace_per_hour: u64,
    /// Units that may be issued back to back before pacing applies.
    pub burst: u64,
    pub seed: u64,
    pub excluded_asns: BTreeSet<Asn>,
    pub workers: u32,
    pub worker_index: u32,
    pub max_outstanding: usize,
    /// Units logged between checkpoints inside one phase.
    pub checkpoint_every: usize,
    pub local_retry_backoff: Duration,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            attempts: 3,
            echo_timeout: Duration::from_secs(3),
            tcp_timeout: Duration::from_secs(3),
            echo_gap: Duration::from_secs(1),
            early_exit: true,
            ports: DEFAULT_PORTS.to_vec(),
            pace_per_hour: 85_000,
            burst: 10,
            seed: 0,
            excluded_asns: BTreeSet::new(),
            workers: 1,
            worker_index: 0,
            max_outstanding: 256,
            checkpoint_every: 10_000,
            local_retry_backoff: Duration::from_millis(250),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.attempts == 0 {
            return Err("echo attempts must be at least 1".into());
        }
        if self.echo_timeout.is_zero() || self.tcp_timeout.is_zero() {
            return Err("probe timeouts must be positive".into());
        }
        if self.pace_per_hour == 0 {
            return Err("pace must be positive".into());
        }
        if self.burst == 0 {
            return Err("burst must be at least 1".into());
        }
        if self.workers == 0 || self.worker_index >= self.workers {
            return Err(format!("worker index {} out of range for {} workers", self.worker_index, self.workers));
        }
        if self.max_outstanding == 0 || self.checkpoint_every == 0 {
            return Err("max outstanding and checkpoint interval must be positive".into());
        }
        let mut seen = BTreeSet::new();
        if let Some(p) = self.ports.iter().find(|p| !seen.insert(**p)) {
            return Err(format!("port {p} listed twice"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EchoResult {
    Reply,
    NoReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectResult {
    /// Handshake completed; the connection was closed without payload.
    Accepted,
    /// Reset during the handshake.
    Refused,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Raw or ICMP sockets are not permitted; fatal for the campaign.
    #[error("permission denied: {0}")]
    Permission(String),
    /// Local exhaustion (descriptors, ports, buffers); no packet left the host.
    #[error("local resource exhausted: {0}")]
    LocalResource(String),
    #[error("{0}")]
    Other(String),
}

/// What the prober needs from the network.
pub trait ProbeTransport: Send + Sync {
    /// Sends one echo request and waits up to `timeout` for its reply.
    fn echo(&self, target: IpAddr, seq: u16, timeout: Duration) -> Result<EchoResult, TransportError>;
    /// One connection attempt; must not read or write payload.
    fn connect(&self, target: SocketAddr, timeout: Duration) -> Result<ConnectResult, TransportError>;
    /// Waits between echo requests. Simulated transports return at once.
    fn pause(&self, d: Duration);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcmpOutcome {
    pub target: IpAddr,
    pub responsive: bool,
    pub replies: u32,
    pub requests: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcpResult {
    Accepted,
    Refused,
    Dropped,
}

impl TcpResult {
    pub const ALL: [TcpResult; 3] = [TcpResult::Accepted, TcpResult::Refused, TcpResult::Dropped];

    pub fn as_str(&self) -> &'static str {
        match self {
            TcpResult::Accepted => "accepted",
            TcpResult::Refused => "refused",
            TcpResult::Dropped => "dropped",
        }
    }
}

impl fmt::Display for TcpResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcpOutcome {
    pub target: IpAddr,
    pub port: u16,
    pub result: TcpResult,
    pub payload_bytes: u64,
    /// Attempts repeated because of local resource exhaustion.
    pub local_retries: u32,
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("ICMP probing is not permitted ({0}); run with raw-socket privileges or enable unprivileged ICMP sockets")]
    Permission(String),
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Log(#[from] JsonlError),
}

pub fn icmp_probe(target: IpAddr, config: &ProbeConfig, transport: &dyn ProbeTransport) -> Result<IcmpOutcome, ProbeError> {
    let mut replies = 0;
    let mut requests = 0;
    for seq in 0..config.attempts {
        if seq > 0 {
            transport.pause(config.echo_gap);
        }
        requests += 1;
        match transport.echo(target, seq as u16, config.echo_timeout) {
            Ok(EchoResult::Reply) => replies += 1,
            Ok(EchoResult::NoReply) => {}
            Err(TransportError::Permission(e)) => return Err(ProbeError::Permission(e)),
            Err(e) => log::debug!("echo {target} seq {seq}: {e}"),
        }
        if replies > 0 && config.early_exit {
            break;
        }
    }
    Ok(IcmpOutcome {
        target,
        responsive: replies > 0,
        replies,
        requests,
    })
}

pub fn tcp_probe(target: IpAddr, port: u16, config: &ProbeConfig, transport: &dyn ProbeTransport) -> Result<TcpOutcome, ProbeError> {
    let addr = SocketAddr::new(target, port);
    let mut local_retries = 0;
    let result = loop {
        match transport.connect(addr, config.tcp_timeout) {
            Ok(ConnectResult::Accepted) => break TcpResult::Accepted,
            Ok(ConnectResult::Refused) => break TcpResult::Refused,
            Ok(ConnectResult::TimedOut) => break TcpResult::Dropped,
            Err(TransportError::LocalResource(e)) if local_retries == 0 => {
                log::debug!("connect {addr}: {e}; retrying once");
                local_retries += 1;
                transport.pause(config.local_retry_backoff);
            }
            Err(TransportError::Permission(e)) => return Err(ProbeError::Permission(e)),
            Err(e) => {
                log::debug!("connect {addr}: {e}");
                break TcpResult::Dropped;
            }
        }
    };
    Ok(TcpOutcome {
        target,
        port,
        result,
        payload_bytes: 0,
        local_retries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub addr: IpAddr,
    pub asn: Option<Asn>,
    /// For an IPv4 target, the IPv6 address it is paired with.
    pub paired_with: Option<Ipv6Addr>,
}

/// Seeded shuffle of the IPv6 set, each paired IPv4 address placed right
/// after its counterpart, excluded ASNs removed, then this worker's share.
pub fn plan_targets(v6set: &[Ipv6Addr], pairs: &[AddressPair], table: &RoutingTable, config: &ProbeConfig) -> Vec<Target> {
    let mut v6: Vec<Ipv6Addr> = v6set.iter().copied().chain(pairs.iter().map(|p| p.v6)).collect();
    v6.sort_unstable();
    v6.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    v6.shuffle(&mut rng);

    let partner: HashMap<Ipv6Addr, &AddressPair> = pairs.iter().map(|p| (p.v6, p)).collect();
    let excluded = |asn: Option<Asn>| asn.is_some_and(|a| config.excluded_asns.contains(&a));
    let workers = config.workers.max(1) as usize;
    let mut out = Vec::new();
    for (unit, a6) in v6.into_iter().enumerate() {
        if unit % workers != config.worker_index as usize {
            continue;
        }
        let asn = table.lookup_origin_asn(IpAddr::V6(a6));
        if !excluded(asn) {
            out.push(Target {
                addr: IpAddr::V6(a6),
                asn,
                paired_with: None,
            });
        }
        if let Some(p) = partner.get(&a6) {
            let asn4 = table.lookup_origin_asn(IpAddr::V4(p.v4));
            if !excluded(asn4) {
                out.push(Target {
                    addr: IpAddr::V4(p.v4),
                    asn: asn4,
                    paired_with: Some(a6),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Icmp,
    Tcp,
}

/// One probe log line. `ts_us` is the issue time on the campaign clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeLogRecord {
    pub ts_us: u64,
    pub family: String,
    pub target: IpAddr,
    pub kind: ProbeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    pub result: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replies: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<u32>,
    #[serde(default)]
    pub asn: Option<Asn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_with: Option<Ipv6Addr>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub local_retries: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

pub fn family(addr: IpAddr) -> &'static str {
    if addr.is_ipv4() {
        "ipv4"
    } else {
        "ipv6"
    }
}

impl ProbeLogRecord {
    fn icmp(ts_us: u64, t: &Target, o: &IcmpOutcome) -> Self {
        ProbeLogRecord {
            ts_us,
            family: family(t.addr).into(),
            target: t.addr,
            kind: ProbeKind::Icmp,
            port: None,
            result: if o.responsive { "responsive" } else { "unresponsive" }.into(),
            replies: Some(o.replies),
            requests: Some(o.requests),
            asn: t.asn,
            paired_with: t.paired_with,
            local_retries: 0,
        }
    }

    fn tcp(ts_us: u64, t: &Target, o: &TcpOutcome) -> Self {
        ProbeLogRecord {
            ts_us,
            family: family(t.addr).into(),
            target: t.addr,
            kind: ProbeKind::Tcp,
            port: Some(o.port),
            result: o.result.as_str().into(),
            replies: None,
            requests: None,
            asn: t.asn,
            paired_with: t.paired_with,
            local_retries: o.local_retries,
        }
    }

    pub fn responsive(&self) -> bool {
        self.result == "responsive"
    }

    pub fn tcp_result(&self) -> Option<TcpResult> {
        match self.result.as_str() {
            "accepted" => Some(TcpResult::Accepted),
            "refused" => Some(TcpResult::Refused),
            "dropped" => Some(TcpResult::Dropped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Icmp,
    Tcp(u16),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub targets: u64,
    pub complete: bool,
    /// Probes issued by this invocation.
    pub issued: u64,
    pub icmp_responsive: u64,
    pub echo_requests: u64,
    pub tcp: BTreeMap<u16, BTreeMap<TcpResult, u64>>,
    pub local_retries: u64,
    pub skipped_excluded: u64,
    pub elapsed_us: u64,
    pub max_outstanding: usize,
}

/// Options that only matter for tests and resumption drills.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CampaignControl {
    /// Stop (as if interrupted) after this many checkpoints.
    pub stop_after_chunks: Option<usize>,
}

enum Job {
    Icmp(IpAddr),
    Tcp(IpAddr, u16),
}

enum JobResult {
    Icmp(IcmpOutcome),
    Tcp(TcpOutcome),
}

pub fn run_campaign(
    targets: &[Target],
    config: &ProbeConfig,
    transport: Arc<dyn ProbeTransport>,
    clock: Arc<dyn Clock>,
    paths: &StagePaths,
    control: CampaignControl,
) -> Result<CampaignStats, ProbeError> {
    config.validate().map_err(ProbeError::Config)?;
    let phases: Vec<Phase> = std::iter::once(Phase::Icmp)
        .chain(config.ports.iter().map(|&p| Phase::Tcp(p)))
        .collect();
    let n = targets.len() as u64;
    let total = n * phases.len() as u64;

    let mut stats = CampaignStats {
        targets: n,
        ..Default::default()
    };
    let mut cp = Checkpoint::load(&paths.checkpoint, "probe")?;
    if cp.complete {
        stats.complete = true;
        return Ok(stats);
    }
    let mut log = JsonlWriter::open_at(&paths.log, cp.log_offset)?;
    let mut pacer = Pacer::new(config.pace_per_hour, config.burst);
    let started = clock.now_micros();
    let workers = config.max_outstanding.min(targets.len().max(1));
    let mut chunks = 0;

    let (job_tx, job_rx) = crossbeam_channel::unbounded::<(u64, Job)>();
    let (res_tx, res_rx) = crossbeam_channel::unbounded::<(u64, Result<JobResult, ProbeError>)>();

    let outcome = std::thread::scope(|scope| -> Result<(), ProbeError> {
        for _ in 0..workers {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let transport = transport.clone();
            scope.spawn(move || {
                for (seq, job) in job_rx.iter() {
                    let r = match job {
                        Job::Icmp(t) => icmp_probe(t, config, transport.as_ref()).map(JobResult::Icmp),
                        Job::Tcp(t, p) => tcp_probe(t, p, config, transport.as_ref()).map(JobResult::Tcp),
                    };
                    if res_tx.send((seq, r)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);
        let result = (|| {
            while cp.high_water < total {
                if control.stop_after_chunks.is_some_and(|c| chunks >= c) {
                    return Ok(());
                }
                let start = cp.high_water;
                let phase_idx = (start / n) as usize;
                let phase_end = (phase_idx as u64 + 1) * n;
                let end = phase_end.min(start + config.checkpoint_every as u64);
                let phase = phases[phase_idx];

                let mut issued_at: Vec<Option<u64>> = vec![None; (end - start) as usize];
                let mut results: Vec<Option<JobResult>> = (start..end).map(|_| None).collect();
                let mut outstanding = 0usize;
                let mut failure = None;
                let mut absorb = |(seq, r): (u64, Result<JobResult, ProbeError>), failure: &mut Option<ProbeError>| match r {
                    Ok(r) => results[(seq - start) as usize] = Some(r),
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                };
                for unit in start..end {
                    let t = &targets[(unit % n) as usize];
                    if t.asn.is_some_and(|a| config.excluded_asns.contains(&a)) {
                        // Counted once per target, in the first phase.
                        stats.skipped_excluded += u64::from(phase_idx == 0);
                        continue;
                    }
                    while outstanding >= config.max_outstanding {
                        absorb(res_rx.recv().expect("workers alive"), &mut failure);
                        outstanding -= 1;
                    }
                    if failure.is_some() {
                        break;
                    }
                    let now = clock.now_micros();
                    let at = pacer.admit(now);
                    if at > now {
                        clock.sleep(Duration::from_micros(at - now));
                    }
                    issued_at[(unit - start) as usize] = Some(at);
                    let job = match phase {
                        Phase::Icmp => Job::Icmp(t.addr),
                        Phase::Tcp(p) => Job::Tcp(t.addr, p),
                    };
                    job_tx.send((unit, job)).expect("workers alive");
                    outstanding += 1;
                    stats.max_outstanding = stats.max_outstanding.max(outstanding);
                    stats.issued += 1;
                }
                while outstanding > 0 {
                    absorb(res_rx.recv().expect("workers alive"), &mut failure);
                    outstanding -= 1;
                }
                if let Some(e) = failure {
                    return Err(e);
                }
                for (i, r) in results.into_iter().enumerate() {
                    let (Some(r), Some(ts)) = (r, issued_at[i]) else {
                        continue;
                    };
                    let t = &targets[((start + i as u64) % n) as usize];
                    let rec = match &r {
                        JobResult::Icmp(o) => ProbeLogRecord::icmp(ts, t, o),
                        JobResult::Tcp(o) => ProbeLogRecord::tcp(ts, t, o),
                    };
                    log.write(&rec)?;
                }
                cp.log_offset = log.commit()?;
                cp.high_water = end;
                cp.last_completed = Some(match phase {
                    Phase::Icmp => format!("icmp {}", end - phase_idx as u64 * n),
                    Phase::Tcp(p) => format!("tcp/{p} {}", end - phase_idx as u64 * n),
                });
                cp.store(&paths.checkpoint)?;
                chunks += 1;
            }
            cp.complete = true;
            cp.store(&paths.checkpoint)?;
            Ok(())
        })();
        drop(job_tx);
        result
    });
    stats.elapsed_us = clock.now_micros().saturating_sub(started);
    outcome?;
    stats.complete = cp.complete;
    tally_log(&paths.log, &mut stats)?;
    Ok(stats)
}

fn tally_log(path: &std::path::Path, stats: &mut CampaignStats) -> Result<(), JsonlError> {
    crate::jsonl::for_each_record(path, |r: ProbeLogRecord| match r.kind {
        ProbeKind::Icmp => {
            stats.icmp_responsive += u64::from(r.responsive());
            stats.echo_requests += u64::from(r.requests.unwrap_or(0));
        }
        ProbeKind::Tcp => {
            if let (Some(port), Some(res)) = (r.port, r.tcp_result()) {
                *stats.tcp.entry(port).or_default().entry(res).or_default() += 1;
            }
            stats.local_retries += u64::from(r.local_retries);
        }
    })
}

/// Parses an exclusion list: one ASN per line, `#` comments, optional `AS` prefix.
pub fn parse_exclusions(text: &str) -> Result<BTreeSet<Asn>, String> {
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let digits = line.trim_start_matches("AS").trim_start_matches("as");
        let asn: u32 = digits
            .parse()
            .map_err(|_| format!("exclusion line {}: {line:?} is not an ASN", i + 1))?;
        out.insert(Asn(asn));
    }
    Ok(out)
}
