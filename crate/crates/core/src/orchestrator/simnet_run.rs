use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::*;
use crate::clock::VirtualClock;
use crate::simnet::{Scenario, SimResolver, SimTransport};

/// Settings for a full pipeline run against a simulated network.
#[derive(Debug, Clone, PartialEq)]
pub struct SimnetRunOptions {
    pub dns: DnsStageOptions,
    /// Probe settings; the seed is taken from the scenario.
    pub probe: ProbeConfig,
    pub contradiction: ContradictionMode,
    pub sentinel_threshold: u64,
    pub bins: usize,
    pub top_n: usize,
}

impl Default for SimnetRunOptions {
    fn default() -> Self {
        SimnetRunOptions {
            dns: DnsStageOptions::default(),
            probe: ProbeConfig {
                pace_per_hour: 3_600_000,
                ..ProbeConfig::default()
            },
            contradiction: ContradictionMode::default(),
            sentinel_threshold: sweep::DEFAULT_SENTINEL_THRESHOLD,
            bins: report::DEFAULT_BINS,
            top_n: 10,
        }
    }
}

pub const SCENARIO_FILE: &str = "scenario.txt";
pub const SCENARIO_ROUTES_FILE: &str = "scenario_routes.txt";
pub const SCENARIO_DELEGATIONS_FILE: &str = "scenario_delegations.txt";

/// Runs every stage against the scenario under virtual time.
///
/// Two runs of the same scenario text and options produce byte-identical
/// run directories.
pub fn run_simnet(scenario_text: &str, out: &Path, opts: &SimnetRunOptions) -> Result<Vec<StageOutcome>, OrchestratorError> {
    let scenario = Scenario::parse(scenario_text).map_err(|e| OrchestratorError::Precondition(format!("scenario: {e}")))?;
    let scenario = Arc::new(scenario);
    let clock = Arc::new(VirtualClock::new(scenario.epoch));
    let env = Environment {
        clock: clock.clone(),
        resolver: Arc::new(SimResolver::new(scenario.clone())),
        transport: Arc::new(SimTransport::new(scenario.clone())),
    };
    let mut orch = Orchestrator::open(out, env)?;

    let mut d = ConfigDigest::new();
    d.set("scenario", scenario.digest());
    let digest = d.finish();
    let now = clock.now_micros();
    let manifest = orch.manifest.get_or_insert_with(|| {
        let id = Sha256::digest(format!("simnet\n{digest}").as_bytes());
        RunManifest::new(hex::encode(&id[..8]), now)
    });
    match manifest.stages.get("simnet") {
        Some(e) if e.config_digest != digest => {
            return Err(OrchestratorError::Precondition(format!(
                "{} holds a run of a different scenario; use a new output directory",
                out.display()
            )))
        }
        Some(_) => {}
        None => {
            fs::write(out.join(SCENARIO_FILE), scenario_text)?;
            fs::write(out.join(SCENARIO_ROUTES_FILE), scenario.routes_text())?;
            fs::write(out.join(SCENARIO_DELEGATIONS_FILE), scenario.delegations_text())?;
            manifest.stages.insert(
                "simnet".to_string(),
                StageEntry {
                    config_digest: digest,
                    status: StageStatus::Complete,
                    inputs: Vec::new(),
                    outputs: vec![SCENARIO_FILE.into(), SCENARIO_ROUTES_FILE.into(), SCENARIO_DELEGATIONS_FILE.into()],
                    started_us: now,
                    finished_us: Some(now),
                    counters: BTreeMap::from([("seed".to_string(), scenario.seed)]),
                },
            );
            manifest.store(out)?;
        }
    }

    let probe = ProbeStageOptions {
        config: ProbeConfig {
            seed: scenario.seed,
            ..opts.probe.clone()
        },
        pairs: None,
        control: CampaignControl::default(),
    };
    let report = ReportOptions {
        bins: opts.bins,
        top_n: opts.top_n,
        rir: Some(out.join(SCENARIO_DELEGATIONS_FILE)),
    };
    let mut outcomes = Vec::new();
    outcomes.push(orch.sweep_ptr(&out.join(SCENARIO_ROUTES_FILE), &opts.dns)?);
    outcomes.push(orch.sweep_aaaa(&opts.dns, opts.sentinel_threshold)?);
    outcomes.push(orch.sweep_a(&opts.dns, None)?);
    outcomes.push(orch.classify(None)?);
    outcomes.push(orch.pair(opts.contradiction, None)?);
    outcomes.push(orch.probe(&probe)?);
    outcomes.push(orch.report(&report)?);
    Ok(outcomes)
}
