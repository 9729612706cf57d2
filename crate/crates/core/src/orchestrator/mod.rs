//! Stage wiring over a run directory.
//!
//! Each stage reads the outputs of earlier stages from the run directory,
//! writes its own files there, and records itself in `manifest.json` with a
//! digest of the configuration it ran under. Re-running a completed stage
//! with the same digest does nothing; with a different digest the stage runs
//! again and every stage downstream of it is discarded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::{self, ClassifiedAddress, SpecialRegistry};
use crate::clock::Clock;
use crate::dns::{DnsEngine, EngineConfig, Resolver, ResponseCategory};
use crate::jsonl::{read_records, JsonlError, JsonlWriter};
use crate::pairing::{self, ContradictionMode};
use crate::probe::{self, CampaignControl, ProbeConfig, ProbeError, ProbeLogRecord, ProbeTransport};
use crate::report::{self, ReportInputs};
use crate::routing::{parse_rir_delegations, parse_routing_table, AsnCountryMap, RoutingTable};
use crate::sweep::{self, NameLogRecord, StageOptions, StagePaths, SweepError};

mod manifest;
mod simnet_run;

pub use manifest::{ConfigDigest, RunManifest, StageEntry, StageStatus, MANIFEST_FILE};
pub use simnet_run::{run_simnet, SimnetRunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    SweepPtr,
    SweepAaaa,
    SweepA,
    Classify,
    Pair,
    Probe,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SweepPtr,
        Stage::SweepAaaa,
        Stage::SweepA,
        Stage::Classify,
        Stage::Pair,
        Stage::Probe,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::SweepPtr => "sweep-ptr",
            Stage::SweepAaaa => "sweep-aaaa",
            Stage::SweepA => "sweep-a",
            Stage::Classify => "classify",
            Stage::Pair => "pair",
            Stage::Probe => "probe",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this one reads.
    fn reads(&self) -> &'static [Stage] {
        match self {
            Stage::SweepPtr => &[],
            Stage::SweepAaaa => &[Stage::SweepPtr],
            Stage::SweepA => &[Stage::SweepAaaa, Stage::SweepPtr],
            Stage::Classify => &[Stage::SweepAaaa, Stage::SweepPtr],
            Stage::Pair => &[Stage::SweepA, Stage::SweepAaaa, Stage::SweepPtr],
            Stage::Probe => &[Stage::Classify, Stage::Pair, Stage::SweepPtr],
            Stage::Report => &[Stage::Probe, Stage::Classify],
        }
    }

    fn depends_on(&self, other: Stage) -> bool {
        self.reads().iter().any(|s| *s == other || s.depends_on(other))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Runtime(String),
}

impl OrchestratorError {
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestratorError::Precondition(_) => 2,
            OrchestratorError::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl fmt::Display) -> OrchestratorError {
    OrchestratorError::Runtime(e.to_string())
}

impl From<io::Error> for OrchestratorError {
    fn from(e: io::Error) -> Self {
        runtime(e)
    }
}

impl From<JsonlError> for OrchestratorError {
    fn from(e: JsonlError) -> Self {
        runtime(e)
    }
}

impl From<SweepError> for OrchestratorError {
    fn from(e: SweepError) -> Self {
        runtime(e)
    }
}

impl From<csv::Error> for OrchestratorError {
    fn from(e: csv::Error) -> Self {
        runtime(e)
    }
}

impl From<ProbeError> for OrchestratorError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Config(m) => OrchestratorError::Precondition(m),
            other => runtime(other),
        }
    }
}

/// Network-facing services and time, real or simulated.
#[derive(Clone)]
pub struct Environment {
    pub clock: Arc<dyn Clock>,
    pub resolver: Arc<dyn Resolver>,
    pub transport: Arc<dyn ProbeTransport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatusReport {
    Ran,
    AlreadyComplete,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatusReport,
    pub counters: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsStageOptions {
    pub engine: EngineConfig,
    pub chunk_size: Option<u64>,
    pub stop_after_chunks: Option<usize>,
}

impl Default for DnsStageOptions {
    fn default() -> Self {
        DnsStageOptions {
            engine: EngineConfig::default(),
            chunk_size: None,
            stop_after_chunks: None,
        }
    }
}

impl DnsStageOptions {
    fn stage_options(&self, base: StageOptions) -> StageOptions {
        StageOptions {
            chunk_size: self.chunk_size.unwrap_or(base.chunk_size),
            stop_after_chunks: self.stop_after_chunks,
        }
    }

    fn digest_into(&self, d: &mut ConfigDigest) {
        let e = &self.engine;
        d.set("resolver", e.resolver)
            .set("max_in_flight", e.max_in_flight)
            .set("timeout_ms", e.timeout.as_millis())
            .set("retries", e.retries)
            .set("cache", e.cache_capacity);
        if let Some(c) = self.chunk_size {
            d.set("chunk", c);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeStageOptions {
    pub config: ProbeConfig,
    /// Pairs file to use instead of the pair stage's output.
    pub pairs: Option<PathBuf>,
    pub control: CampaignControl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportOptions {
    pub bins: usize,
    pub top_n: usize,
    pub rir: Option<PathBuf>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            bins: report::DEFAULT_BINS,
            top_n: 10,
            rir: None,
        }
    }
}

pub const ROUTES_FILE: &str = "routes.txt";
pub const REGISTRY_FILE: &str = "registry.tsv";
pub const CLASSIFIED_FILE: &str = "classified.jsonl";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const PROBE_PAIRS_FILE: &str = "probe_pairs.csv";

/// Serialized record in `classified.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClassifiedRecord {
    #[serde(flatten)]
    pub address: ClassifiedAddress,
    /// Distinct names that resolved to this address.
    pub names: u64,
}

enum Begin {
    Fresh,
    Resume,
    Done,
}

pub struct Orchestrator {
    dir: PathBuf,
    env: Environment,
    manifest: Option<RunManifest>,
}

impl Orchestrator {
    pub fn open(dir: &Path, env: Environment) -> Result<Self, OrchestratorError> {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        let manifest = RunManifest::load(dir)?;
        Ok(Orchestrator {
            dir: dir.to_path_buf(),
            env,
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> Option<&RunManifest> {
        self.manifest.as_ref()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Input paths as recorded in the manifest: relative when inside the run directory.
    fn input_name(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir).unwrap_or(p).display().to_string()
    }

    fn require(&self, stage: Stage, needed: Stage) -> Result<(), OrchestratorError> {
        if self.manifest.as_ref().is_some_and(|m| m.is_complete(needed.name())) {
            Ok(())
        } else {
            Err(OrchestratorError::Precondition(format!(
                "{stage} requires {needed} to have completed in {}; run `{needed}` first",
                self.dir.display()
            )))
        }
    }

    fn begin(&mut self, stage: Stage, digest: &str, inputs: Vec<String>) -> Result<Begin, OrchestratorError> {
        let now = self.env.clock.now_micros();
        let manifest = self.manifest.get_or_insert_with(|| {
            let id = Sha256::digest(format!("{stage}\n{digest}").as_bytes());
            RunManifest::new(hex::encode(&id[..8]), now)
        });
        if let Some(e) = manifest.stages.get(stage.name()) {
            match (e.status, e.config_digest == digest) {
                (StageStatus::Complete, true) => return Ok(Begin::Done),
                (StageStatus::Running, true) => return Ok(Begin::Resume),
                (StageStatus::Running, false) => {
                    return Err(OrchestratorError::Precondition(format!(
                        "{stage} is in progress under a different configuration; rerun with the original settings or use a new run directory"
                    )))
                }
                (StageStatus::Complete, false) => {}
            }
        }
        // Fresh start: drop this stage and everything downstream of it.
        let doomed: Vec<Stage> = Stage::ALL
            .into_iter()
            .filter(|s| *s == stage || s.depends_on(stage))
            .collect();
        for s in doomed {
            if let Some(e) = manifest.stages.remove(s.name()) {
                for o in e.outputs {
                    let _ = fs::remove_file(self.dir.join(o));
                }
            }
        }
        manifest.stages.insert(
            stage.name().to_string(),
            StageEntry {
                config_digest: digest.to_string(),
                status: StageStatus::Running,
                inputs,
                outputs: Vec::new(),
                started_us: now,
                finished_us: None,
                counters: BTreeMap::new(),
            },
        );
        manifest.store(&self.dir)?;
        Ok(Begin::Fresh)
    }

    fn record(&mut self, stage: Stage, outputs: &[&str], counters: BTreeMap<String, u64>, complete: bool) -> Result<StageOutcome, OrchestratorError> {
        let now = self.env.clock.now_micros();
        let manifest = self.manifest.as_mut().expect("begun");
        let entry = manifest.stages.get_mut(stage.name()).expect("begun");
        entry.outputs = outputs.iter().map(|s| s.to_string()).collect();
        entry.counters = counters.clone();
        if complete {
            entry.status = StageStatus::Complete;
            entry.finished_us = Some(now);
        }
        manifest.store(&self.dir)?;
        Ok(StageOutcome {
            stage,
            status: if complete {
                StageStatusReport::Ran
            } else {
                StageStatusReport::Interrupted
            },
            counters,
        })
    }

    fn done(&self, stage: Stage) -> StageOutcome {
        let counters = self
            .manifest
            .as_ref()
            .and_then(|m| m.stages.get(stage.name()))
            .map(|e| e.counters.clone())
            .unwrap_or_default();
        StageOutcome {
            stage,
            status: StageStatusReport::AlreadyComplete,
            counters,
        }
    }

    fn engine(&self, opts: &DnsStageOptions) -> Result<DnsEngine, OrchestratorError> {
        DnsEngine::new(self.env.resolver.clone(), self.env.clock.clone(), opts.engine.clone()).map_err(OrchestratorError::Precondition)
    }

    fn routing_table(&self) -> Result<RoutingTable, OrchestratorError> {
        let text = fs::read_to_string(self.path(ROUTES_FILE))?;
        Ok(parse_routing_table(&text).0)
    }

    fn registry(path: Option<&Path>) -> Result<(SpecialRegistry, String), OrchestratorError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| OrchestratorError::Precondition(format!("{}: {e}", p.display())))?,
            None => classify::DEFAULT_REGISTRY.to_string(),
        };
        let reg = SpecialRegistry::parse(&text).map_err(|e| OrchestratorError::Precondition(e.to_string()))?;
        Ok((reg, text))
    }

    pub fn sweep_ptr(&mut self, routes: &Path, opts: &DnsStageOptions) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::SweepPtr;
        let text = fs::read_to_string(routes).map_err(|e| OrchestratorError::Precondition(format!("{}: {e}", routes.display())))?;
        let mut d = ConfigDigest::new();
        d.set_bytes("routes", text.as_bytes());
        opts.digest_into(&mut d);
        match self.begin(stage, &d.finish(), vec![self.input_name(routes)])? {
            Begin::Done => return Ok(self.done(stage)),
            Begin::Fresh => fs::write(self.path(ROUTES_FILE), &text)?,
            Begin::Resume => {}
        }
        let (table, load) = parse_routing_table(&text);
        if table.is_empty() {
            return Err(OrchestratorError::Precondition(format!("{} holds no usable routes", routes.display())));
        }
        let engine = self.engine(opts)?;
        let paths = StagePaths::in_dir(&self.dir, "ptr");
        let run = sweep::run_ptr_sweep(&table, &engine, &paths, opts.stage_options(StageOptions::ptr()))?;
        let mut counters = category_counters(&run.stats);
        counters.insert("routed_ipv4".into(), table.routed_ipv4_count());
        counters.insert("table_entries".into(), load.entries);
        counters.insert("table_skipped_malformed".into(), load.skipped_malformed);
        counters.insert("table_skipped_default_route".into(), load.skipped_default_route);
        counters.insert("table_origin_conflicts".into(), load.origin_conflicts);
        counters.insert("issued".into(), run.issued);
        counters.insert("names_logged".into(), run.stats.answers);
        let mut outputs = vec![ROUTES_FILE, "ptr.jsonl", "ptr.checkpoint.json"];
        if run.complete {
            write_json(&self.path("ptr_stats.json"), &run.stats)?;
            let rows = run.stats.answer_set_sizes.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect();
            write_csv(&self.path("ptr_set_sizes.csv"), &["answers", "addresses"], rows)?;
            outputs.extend(["ptr_stats.json", "ptr_set_sizes.csv"]);
        }
        self.record(stage, &outputs, counters, run.complete)
    }

    pub fn sweep_aaaa(&mut self, opts: &DnsStageOptions, sentinel_threshold: u64) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::SweepAaaa;
        self.require(stage, Stage::SweepPtr)?;
        let mut d = ConfigDigest::new();
        opts.digest_into(&mut d);
        d.set("sentinel_threshold", sentinel_threshold);
        if let Begin::Done = self.begin(stage, &d.finish(), vec!["ptr.jsonl".into()])? {
            return Ok(self.done(stage));
        }
        let names = sweep::collect_names(&self.path("ptr.jsonl"))?;
        let engine = self.engine(opts)?;
        let paths = StagePaths::in_dir(&self.dir, "aaaa");
        let run = sweep::run_aaaa_sweep(&names, &engine, &paths, opts.stage_options(StageOptions::names()))?;
        let mut counters = category_counters(&run.stats);
        counters.insert("distinct_names".into(), names.len() as u64);
        counters.insert(
            "invalid_names".into(),
            names.iter().filter(|n| n.validity != sweep::NameValidity::Valid).count() as u64,
        );
        counters.insert("issued".into(), run.issued);
        counters.insert("answers".into(), run.stats.answers);
        let mut outputs = vec!["aaaa.jsonl", "aaaa.checkpoint.json"];
        if run.complete {
            write_json(&self.path("aaaa_stats.json"), &run.stats)?;
            let records = sweep::load_name_records(&self.path("aaaa.jsonl"), None)?;
            let sentinels = sweep::detect_sentinels(&records, sentinel_threshold);
            counters.insert("sentinels".into(), sentinels.len() as u64);
            let rows = sentinels.iter().map(|(a, n)| vec![a.to_string(), n.to_string()]).collect();
            write_csv(&self.path("sentinels.csv"), &["address", "names"], rows)?;
            outputs.extend(["aaaa_stats.json", "sentinels.csv"]);
        }
        self.record(stage, &outputs, counters, run.complete)
    }

    pub fn sweep_a(&mut self, opts: &DnsStageOptions, registry: Option<&Path>) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::SweepA;
        self.require(stage, Stage::SweepAaaa)?;
        let (reg, reg_text) = Self::registry(registry)?;
        let mut d = ConfigDigest::new();
        opts.digest_into(&mut d);
        d.set_bytes("registry", reg_text.as_bytes());
        let mut inputs = vec!["aaaa.jsonl".to_string(), ROUTES_FILE.to_string()];
        inputs.extend(registry.map(|p| self.input_name(p)));
        if let Begin::Done = self.begin(stage, &d.finish(), inputs)? {
            return Ok(self.done(stage));
        }
        let aaaa: Vec<NameLogRecord> = read_records(&self.path("aaaa.jsonl"))?;
        let table = self.routing_table()?;
        let candidates = sweep::select_a_candidates(&aaaa, &reg, &table);
        let engine = self.engine(opts)?;
        let paths = StagePaths::in_dir(&self.dir, "a");
        let run = sweep::run_a_sweep(&candidates, &engine, &paths, opts.stage_options(StageOptions::names()))?;
        let mut counters = category_counters(&run.stats);
        counters.insert("candidates".into(), candidates.len() as u64);
        counters.insert("issued".into(), run.issued);
        counters.insert("answers".into(), run.stats.answers);
        let mut outputs = vec!["a.jsonl", "a.checkpoint.json"];
        if run.complete {
            write_json(&self.path("a_stats.json"), &run.stats)?;
            outputs.push("a_stats.json");
        }
        self.record(stage, &outputs, counters, run.complete)
    }

    pub fn classify(&mut self, registry: Option<&Path>) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::Classify;
        self.require(stage, Stage::SweepAaaa)?;
        let (reg, reg_text) = Self::registry(registry)?;
        let mut d = ConfigDigest::new();
        d.set_bytes("registry", reg_text.as_bytes());
        let mut inputs = vec!["aaaa.jsonl".to_string(), ROUTES_FILE.to_string()];
        inputs.extend(registry.map(|p| self.input_name(p)));
        if let Begin::Done = self.begin(stage, &d.finish(), inputs)? {
            return Ok(self.done(stage));
        }
        let table = self.routing_table()?;
        let aaaa: Vec<NameLogRecord> = read_records(&self.path("aaaa.jsonl"))?;
        let mut per_addr: BTreeMap<Ipv6Addr, (BTreeSet<Ipv4Addr>, u64)> = BTreeMap::new();
        for r in &aaaa {
            let distinct: BTreeSet<Ipv6Addr> = r.outcome.answers.iter().filter_map(|a| a.parse().ok()).collect();
            for a in distinct {
                let e = per_addr.entry(a).or_default();
                e.0.extend(r.sources.iter().copied());
                e.1 += 1;
            }
        }
        let mut out = JsonlWriter::create(&self.path(CLASSIFIED_FILE))?;
        let mut classified = Vec::with_capacity(per_addr.len());
        for (addr, (sources, names)) in per_addr {
            let mut c = classify::classify_address(addr, &reg, &table, None);
            c.matches_source_v4 = sources.contains(&c.embedded_v4);
            out.write(&ClassifiedRecord {
                address: c.clone(),
                names,
            })?;
            classified.push(c);
        }
        out.commit()?;
        fs::write(self.path(REGISTRY_FILE), &reg_text)?;

        let summary = classify::summarize(&classified);
        write_json(&self.path("classify_summary.json"), &summary)?;
        let bits = classify::bit_pattern_stats(classified.iter().filter(|c| c.globally_routable));
        let rows = bits.rows().into_iter().map(|(b, n, c)| vec![b.to_string(), n.to_string(), format!("{c:.6}")]).collect();
        write_csv(&self.path("bit_patterns.csv"), &["bit", "count", "cdf"], rows)?;
        let mut dat = format!("# first set IID bit over {} routable addresses, {} with zero IID\n# bit count cdf\n", bits.analyzed, bits.zero_iid);
        for (b, n, c) in bits.rows() {
            let _ = writeln!(dat, "{b} {n} {c:.6}");
        }
        fs::write(self.path("bit_patterns.dat"), dat)?;
        let rows = summary.special_classes.iter().map(|(l, n)| vec![l.clone(), n.to_string()]).collect();
        write_csv(&self.path("special_classes.csv"), &["class", "addresses"], rows)?;

        let mut counters = BTreeMap::new();
        counters.insert("addresses".into(), summary.addresses);
        for (b, n) in &summary.buckets {
            counters.insert(format!("bucket_{b}"), *n);
        }
        counters.insert("slaac_eui64".into(), summary.slaac_eui64);
        counters.insert("zero_iid".into(), summary.zero_iid);
        counters.insert("embedded_v4_matches".into(), summary.embedded_v4_matches);
        counters.insert("origin_asns".into(), summary.origin_asns);
        self.record(
            stage,
            &[CLASSIFIED_FILE, REGISTRY_FILE, "classify_summary.json", "bit_patterns.csv", "bit_patterns.dat", "special_classes.csv"],
            counters,
            true,
        )
    }

    pub fn pair(&mut self, mode: ContradictionMode, registry: Option<&Path>) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::Pair;
        self.require(stage, Stage::SweepA)?;
        let (reg, reg_text) = Self::registry(registry)?;
        let mut d = ConfigDigest::new();
        d.set("mode", format!("{mode:?}")).set_bytes("registry", reg_text.as_bytes());
        if let Begin::Done = self.begin(stage, &d.finish(), vec!["aaaa.jsonl".into(), "a.jsonl".into(), ROUTES_FILE.into()])? {
            return Ok(self.done(stage));
        }
        let table = self.routing_table()?;
        let records = sweep::load_name_records(&self.path("aaaa.jsonl"), Some(&self.path("a.jsonl")))?;
        let graph = pairing::build_resolution_graph(&records, &reg, &table);
        let pairs = pairing::derive_pairs(&graph, &table, mode);
        pairing::write_pairs_csv(&self.path(PAIRS_FILE), &pairs)?;
        let candidates = graph.names().filter(|(_, a, b)| a.len() == 1 && b.len() == 1).count();
        let counters = BTreeMap::from([
            ("names".to_string(), graph.len() as u64),
            ("single_answer_candidates".to_string(), candidates as u64),
            ("pairs".to_string(), pairs.len() as u64),
            ("dropped_v4".to_string(), graph.dropped_v4),
            ("dropped_v6".to_string(), graph.dropped_v6),
        ]);
        self.record(stage, &[PAIRS_FILE], counters, true)
    }

    pub fn probe(&mut self, opts: &ProbeStageOptions) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::Probe;
        self.require(stage, Stage::Classify)?;
        let pairs_path = match &opts.pairs {
            Some(p) => p.clone(),
            None => {
                self.require(stage, Stage::Pair)?;
                self.path(PAIRS_FILE)
            }
        };
        opts.config.validate().map_err(OrchestratorError::Precondition)?;
        let pairs_bytes = fs::read(&pairs_path).map_err(|e| OrchestratorError::Precondition(format!("{}: {e}", pairs_path.display())))?;
        let c = &opts.config;
        let mut d = ConfigDigest::new();
        d.set_bytes("pairs", &pairs_bytes)
            .set("attempts", c.attempts)
            .set("echo_timeout_ms", c.echo_timeout.as_millis())
            .set("tcp_timeout_ms", c.tcp_timeout.as_millis())
            .set("echo_gap_ms", c.echo_gap.as_millis())
            .set("early_exit", c.early_exit)
            .set("ports", format!("{:?}", c.ports))
            .set("pace", c.pace_per_hour)
            .set("burst", c.burst)
            .set("seed", c.seed)
            .set("exclude", format!("{:?}", c.excluded_asns))
            .set("workers", c.workers)
            .set("worker_index", c.worker_index)
            .set("max_outstanding", c.max_outstanding)
            .set("checkpoint_every", c.checkpoint_every);
        let inputs = vec![CLASSIFIED_FILE.to_string(), self.input_name(&pairs_path)];
        match self.begin(stage, &d.finish(), inputs)? {
            Begin::Done => return Ok(self.done(stage)),
            Begin::Fresh => fs::write(self.path(PROBE_PAIRS_FILE), &pairs_bytes)?,
            Begin::Resume => {}
        }
        let pairs = pairing::read_pairs_csv(&self.path(PROBE_PAIRS_FILE))?;
        let classified: Vec<ClassifiedRecord> = read_records(&self.path(CLASSIFIED_FILE))?;
        let v6: Vec<Ipv6Addr> = classified
            .iter()
            .filter(|c| c.address.globally_routable)
            .map(|c| c.address.address)
            .collect();
        let table = self.routing_table()?;
        let targets = probe::plan_targets(&v6, &pairs, &table, c);
        let unfiltered = ProbeConfig {
            excluded_asns: Default::default(),
            ..c.clone()
        };
        let excluded = probe::plan_targets(&v6, &pairs, &table, &unfiltered).len() - targets.len();
        let mut plan = JsonlWriter::create(&self.path("targets.jsonl"))?;
        for t in &targets {
            plan.write(t)?;
        }
        plan.commit()?;
        let paths = StagePaths::in_dir(&self.dir, "probe");
        let stats = probe::run_campaign(&targets, c, self.env.transport.clone(), self.env.clock.clone(), &paths, opts.control)?;
        let mut counters = BTreeMap::from([
            ("targets".to_string(), stats.targets),
            ("issued".to_string(), stats.issued),
            ("icmp_responsive".to_string(), stats.icmp_responsive),
            ("echo_requests".to_string(), stats.echo_requests),
            ("local_retries".to_string(), stats.local_retries),
            ("skipped_excluded".to_string(), stats.skipped_excluded + excluded as u64),
            ("elapsed_us".to_string(), stats.elapsed_us),
        ]);
        for (port, by) in &stats.tcp {
            for (r, n) in by {
                counters.insert(format!("tcp_{port}_{r}"), *n);
            }
        }
        let mut outputs = vec![PROBE_PAIRS_FILE, "targets.jsonl", "probe.jsonl", "probe.checkpoint.json"];
        if stats.complete {
            write_json(&self.path("probe_stats.json"), &stats)?;
            outputs.push("probe_stats.json");
        }
        self.record(stage, &outputs, counters, stats.complete)
    }

    pub fn report(&mut self, opts: &ReportOptions) -> Result<StageOutcome, OrchestratorError> {
        let stage = Stage::Report;
        self.require(stage, Stage::Probe)?;
        let countries = match &opts.rir {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| OrchestratorError::Precondition(format!("{}: {e}", p.display())))?;
                Some(text)
            }
            None => None,
        };
        let mut d = ConfigDigest::new();
        d.set("bins", opts.bins).set("top", opts.top_n);
        if let Some(t) = &countries {
            d.set_bytes("rir", t.as_bytes());
        }
        let mut inputs = vec!["probe.jsonl".to_string(), PROBE_PAIRS_FILE.to_string(), CLASSIFIED_FILE.to_string()];
        inputs.extend(opts.rir.as_deref().map(|p| self.input_name(p)));
        if let Begin::Done = self.begin(stage, &d.finish(), inputs)? {
            return Ok(self.done(stage));
        }
        let cc = countries.map(|t| parse_rir_delegations(&t).0).unwrap_or_else(AsnCountryMap::new);
        let probes: Vec<ProbeLogRecord> = read_records(&self.path("probe.jsonl"))?;
        let pairs = pairing::read_pairs_csv(&self.path(PROBE_PAIRS_FILE))?;
        let classified: Vec<ClassifiedAddress> = read_records::<ClassifiedRecord>(&self.path(CLASSIFIED_FILE))?
            .into_iter()
            .map(|c| c.address)
            .collect();
        let rep = report::build_report(&ReportInputs {
            probes: &probes,
            pairs: &pairs,
            classified: &classified,
            countries: &cc,
            bins: opts.bins.max(1),
            top_n: opts.top_n,
        });
        let written = rep.write(&self.dir)?;
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let s = &rep.summary;
        let mut counters = BTreeMap::from([
            ("icmp_targets".to_string(), s.icmp_targets),
            ("icmp_responsive".to_string(), s.icmp_responsive),
            ("tcp_without_icmp".to_string(), s.tcp_without_icmp),
            ("asns".to_string(), rep.asn_stats().len() as u64),
            ("disparity_records".to_string(), rep.disparity.records.len() as u64),
        ]);
        for (port, p) in &s.ports {
            counters.insert(format!("tcp_{port}_accepted"), p.accepted);
            counters.insert(format!("tcp_{port}_refused"), p.refused);
            counters.insert(format!("tcp_{port}_dropped"), p.dropped);
        }
        self.record(stage, &refs, counters, true)
    }
}

fn category_counters(stats: &sweep::SweepStats) -> BTreeMap<String, u64> {
    let mut c = BTreeMap::new();
    c.insert("queries".into(), stats.queries);
    for cat in ResponseCategory::ALL {
        c.insert(format!("category_{}", cat.as_str().to_ascii_lowercase()), stats.category(cat));
    }
    c
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), OrchestratorError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), OrchestratorError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key = value` configuration text. `#` starts a comment; later keys win.
pub fn parse_config_file(text: &str) -> Result<HashMap<String, String>, String> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        out.insert(k.replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}
