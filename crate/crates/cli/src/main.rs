use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;

use ptrsweep_core::clock::SystemClock;
use ptrsweep_core::dns::{EngineConfig, NetworkResolver};
use ptrsweep_core::orchestrator::{
    parse_config_file, run_simnet, DnsStageOptions, Environment, Orchestrator, OrchestratorError, ProbeStageOptions, ReportOptions,
    SimnetRunOptions, StageOutcome, StageStatusReport,
};
use ptrsweep_core::pairing::ContradictionMode;
use ptrsweep_core::probe::{parse_exclusions, CampaignControl, ProbeConfig, SystemTransport};
use ptrsweep_core::simnet::{Scenario, SimResolver, SimServer};
use ptrsweep_core::sweep::DEFAULT_SENTINEL_THRESHOLD;

#[derive(Parser)]
#[command(name = "ptrsweep", version, about = "Discover IPv6 hosts through reverse DNS of routed IPv4 space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run directory holding every stage's inputs, outputs and manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Flat key=value file; keys are flag names, flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DnsArgs {
    /// Recursive resolver, host:port.
    #[arg(long)]
    resolver: Option<SocketAddr>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    dns_timeout_ms: Option<u64>,
    #[arg(long)]
    retries: Option<u32>,
    /// Queries per checkpoint.
    #[arg(long)]
    chunk_size: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Reverse-resolve every routed IPv4 address.
    SweepPtr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dns: DnsArgs,
        /// Routing table: prefix and origin ASN per line.
        #[arg(long)]
        routes: Option<PathBuf>,
    },
    /// Look up AAAA records for every name found by sweep-ptr.
    SweepAaaa {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dns: DnsArgs,
        #[arg(long)]
        sentinel_threshold: Option<u64>,
    },
    /// Look up A records for names with a routable AAAA answer.
    SweepA {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dns: DnsArgs,
        /// Special-purpose address registry (TSV); the bundled copy by default.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Classify every AAAA answer.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Derive IPv4/IPv6 pairs sharing a name and origin AS.
    Pair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Either `candidates` or `raw-sets`.
        #[arg(long)]
        contradictions: Option<String>,
    },
    /// Probe discovered addresses with ICMP echo and TCP connects.
    Probe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Aggregate probe results into tables and plot data.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
        /// RIR delegation file for ASN to country mapping.
        #[arg(long)]
        rir: Option<PathBuf>,
    },
    /// Offline runs against a scripted network.
    Simnet {
        #[command(subcommand)]
        command: SimnetCommand,
    },
}

#[derive(Args, Clone)]
struct ProbeArgs {
    /// Pairs CSV; the pair stage's output by default.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// File of AS numbers to skip.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Probes per hour.
    #[arg(long)]
    pace: Option<u64>,
    #[arg(long)]
    burst: Option<u64>,
    /// Comma-separated TCP ports.
    #[arg(long)]
    ports: Option<String>,
    #[arg(long)]
    workers: Option<u32>,
    #[arg(long)]
    worker_index: Option<u32>,
    #[arg(long)]
    attempts: Option<u32>,
    #[arg(long)]
    max_outstanding: Option<usize>,
}

#[derive(Subcommand)]
enum SimnetCommand {
    /// Run the whole pipeline against a scenario under virtual time.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pace: Option<u64>,
        #[arg(long)]
        ports: Option<String>,
    },
    /// Serve a scenario's zones over UDP and TCP until killed.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:5353")]
        listen: SocketAddr,
    },
}

enum Failure {
    Usage(String),
    Stage(OrchestratorError),
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        Failure::Stage(e)
    }
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn precondition(e: impl Display) -> Failure {
    Failure::Stage(OrchestratorError::Precondition(e.to_string()))
}

struct Config(HashMap<String, String>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Config(HashMap::new())),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                parse_config_file(&text).map(Config).map_err(usage)
            }
        }
    }

    /// The flag if given, else the config value.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            Some(v) => v.parse().map(Some).map_err(|e| usage(format!("config {key}={v}: {e}"))),
            None => Ok(None),
        }
    }
}

fn parse_ports(text: &str) -> Result<Vec<u16>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| p.parse().map_err(|_| usage(format!("bad port {p:?}"))))
        .collect()
}

fn dns_options(cfg: &Config, a: DnsArgs) -> Result<(DnsStageOptions, SocketAddr), Failure> {
    let mut engine = EngineConfig::default();
    let resolver = cfg.pick(a.resolver, "resolver")?.unwrap_or(engine.resolver);
    engine.resolver = resolver;
    if let Some(v) = cfg.pick(a.max_in_flight, "max-in-flight")? {
        engine.max_in_flight = v;
    }
    if let Some(v) = cfg.pick(a.dns_timeout_ms, "dns-timeout-ms")? {
        engine.timeout = Duration::from_millis(v);
    }
    if let Some(v) = cfg.pick(a.retries, "retries")? {
        engine.retries = v;
    }
    engine.validate().map_err(usage)?;
    let opts = DnsStageOptions {
        engine,
        chunk_size: cfg.pick(a.chunk_size, "chunk-size")?,
        stop_after_chunks: None,
    };
    Ok((opts, resolver))
}

fn probe_config(cfg: &Config, a: &ProbeArgs, base: ProbeConfig) -> Result<ProbeConfig, Failure> {
    let mut c = base;
    if let Some(v) = cfg.pick(a.seed, "seed")? {
        c.seed = v;
    }
    if let Some(v) = cfg.pick(a.pace, "pace")? {
        c.pace_per_hour = v;
    }
    if let Some(v) = cfg.pick(a.burst, "burst")? {
        c.burst = v;
    }
    if let Some(v) = cfg.pick(a.ports.clone(), "ports")? {
        c.ports = parse_ports(&v)?;
    }
    if let Some(v) = cfg.pick(a.workers, "workers")? {
        c.workers = v;
    }
    if let Some(v) = cfg.pick(a.worker_index, "worker-index")? {
        c.worker_index = v;
    }
    if let Some(v) = cfg.pick(a.attempts, "attempts")? {
        c.attempts = v;
    }
    if let Some(v) = cfg.pick(a.max_outstanding, "max-outstanding")? {
        c.max_outstanding = v;
    }
    if let Some(p) = cfg.pick(a.exclude.clone(), "exclude")? {
        let text = fs::read_to_string(&p).map_err(|e| precondition(format!("{}: {e}", p.display())))?;
        c.excluded_asns = parse_exclusions(&text).map_err(precondition)?;
    }
    c.validate().map_err(usage)?;
    Ok(c)
}

fn network_env(resolver: SocketAddr) -> Environment {
    Environment {
        clock: Arc::new(SystemClock),
        resolver: Arc::new(NetworkResolver::new(resolver)),
        transport: Arc::new(SystemTransport::new()),
    }
}

fn open(common: &Common, resolver: SocketAddr) -> Result<Orchestrator, Failure> {
    Ok(Orchestrator::open(&common.out, network_env(resolver))?)
}

fn report_outcome(o: &StageOutcome) {
    let status = match o.status {
        StageStatusReport::Ran => "complete",
        StageStatusReport::AlreadyComplete => "already complete",
        StageStatusReport::Interrupted => "interrupted",
    };
    println!("{}: {status}", o.stage);
    for (k, v) in &o.counters {
        println!("  {k} = {v}");
    }
}

fn run(cli: Cli) -> Result<Vec<StageOutcome>, Failure> {
    let default_resolver = EngineConfig::default().resolver;
    match cli.command {
        Command::SweepPtr { common, dns, routes } => {
            let cfg = Config::load(common.config.as_deref())?;
            let routes = cfg.pick(routes, "routes")?.ok_or_else(|| usage("sweep-ptr needs --routes"))?;
            let (opts, resolver) = dns_options(&cfg, dns)?;
            Ok(vec![open(&common, resolver)?.sweep_ptr(&routes, &opts)?])
        }
        Command::SweepAaaa { common, dns, sentinel_threshold } => {
            let cfg = Config::load(common.config.as_deref())?;
            let (opts, resolver) = dns_options(&cfg, dns)?;
            let threshold = cfg.pick(sentinel_threshold, "sentinel-threshold")?.unwrap_or(DEFAULT_SENTINEL_THRESHOLD);
            Ok(vec![open(&common, resolver)?.sweep_aaaa(&opts, threshold)?])
        }
        Command::SweepA { common, dns, registry } => {
            let cfg = Config::load(common.config.as_deref())?;
            let (opts, resolver) = dns_options(&cfg, dns)?;
            let registry = cfg.pick(registry, "registry")?;
            Ok(vec![open(&common, resolver)?.sweep_a(&opts, registry.as_deref())?])
        }
        Command::Classify { common, registry } => {
            let cfg = Config::load(common.config.as_deref())?;
            let registry = cfg.pick(registry, "registry")?;
            Ok(vec![open(&common, default_resolver)?.classify(registry.as_deref())?])
        }
        Command::Pair {
            common,
            registry,
            contradictions,
        } => {
            let cfg = Config::load(common.config.as_deref())?;
            let registry = cfg.pick(registry, "registry")?;
            let mode = match cfg.pick(contradictions, "contradictions")?.as_deref() {
                None | Some("candidates") => ContradictionMode::Candidates,
                Some("raw-sets") => ContradictionMode::RawSets,
                Some(other) => return Err(usage(format!("unknown contradiction mode {other:?}"))),
            };
            Ok(vec![open(&common, default_resolver)?.pair(mode, registry.as_deref())?])
        }
        Command::Probe { common, probe } => {
            let cfg = Config::load(common.config.as_deref())?;
            let config = probe_config(&cfg, &probe, ProbeConfig::default())?;
            let opts = ProbeStageOptions {
                config,
                pairs: cfg.pick(probe.pairs.clone(), "pairs")?,
                control: CampaignControl::default(),
            };
            Ok(vec![open(&common, default_resolver)?.probe(&opts)?])
        }
        Command::Report { common, bins, top, rir } => {
            let cfg = Config::load(common.config.as_deref())?;
            let d = ReportOptions::default();
            let opts = ReportOptions {
                bins: cfg.pick(bins, "bins")?.unwrap_or(d.bins),
                top_n: cfg.pick(top, "top")?.unwrap_or(d.top_n),
                rir: cfg.pick(rir, "rir")?,
            };
            if opts.bins == 0 {
                return Err(usage("--bins must be positive"));
            }
            Ok(vec![open(&common, default_resolver)?.report(&opts)?])
        }
        Command::Simnet {
            command:
                SimnetCommand::Run {
                    scenario,
                    out,
                    config,
                    pace,
                    ports,
                },
        } => {
            let cfg = Config::load(config.as_deref())?;
            let text = fs::read_to_string(&scenario).map_err(|e| precondition(format!("{}: {e}", scenario.display())))?;
            let mut opts = SimnetRunOptions::default();
            let args = ProbeArgs {
                pairs: None,
                exclude: None,
                seed: None,
                pace,
                burst: None,
                ports,
                workers: None,
                worker_index: None,
                attempts: None,
                max_outstanding: None,
            };
            opts.probe = probe_config(&cfg, &args, opts.probe)?;
            Ok(run_simnet(&text, &out, &opts)?)
        }
        Command::Simnet {
            command: SimnetCommand::Serve { scenario, listen },
        } => {
            let text = fs::read_to_string(&scenario).map_err(|e| precondition(format!("{}: {e}", scenario.display())))?;
            let s = Scenario::parse(&text).map_err(|e| precondition(format!("scenario: {e}")))?;
            let server = SimServer::bind(Arc::new(SimResolver::new(Arc::new(s))), listen)
                .map_err(|e| Failure::Stage(OrchestratorError::Runtime(format!("bind {listen}: {e}"))))?;
            println!("serving on {}", server.addr());
            info!("scenario {} loaded", scenario.display());
            loop {
                std::thread::park();
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(outcomes) => {
            for o in &outcomes {
                report_outcome(o);
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
