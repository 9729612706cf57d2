use std::net::{Ipv4Addr, Ipv6Addr};
use std::ops::RangeInclusive;

use serde::Serialize;

use super::{NameCandidate, NameLogRecord, PtrLogRecord, StagePaths, SweepError, SweepStats};
use crate::classify::{is_globally_routable, SpecialRegistry};
use crate::dns::{DnsEngine, DnsQuery, QueryOutcome, RecordKind};
use crate::jsonl::{Checkpoint, JsonlWriter};
use crate::routing::RoutingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOptions {
    /// Largest number of units logged between checkpoints.
    pub chunk_size: u64,
    /// Stop (as if interrupted) after this many chunks in this invocation.
    pub stop_after_chunks: Option<usize>,
}

impl StageOptions {
    pub fn ptr() -> Self {
        StageOptions {
            chunk_size: 65_536,
            stop_after_chunks: None,
        }
    }

    pub fn names() -> Self {
        StageOptions {
            chunk_size: 10_000,
            stop_after_chunks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRun {
    pub complete: bool,
    /// Queries handed to the engine by this invocation.
    pub issued: u64,
    /// Units covered by the log so far, across invocations.
    pub high_water: u64,
    pub stats: SweepStats,
}

struct Driver<'a> {
    stage: &'a str,
    engine: &'a DnsEngine,
    paths: &'a StagePaths,
    opts: StageOptions,
}

impl Driver<'_> {
    /// Runs units `[checkpoint, total)` chunk by chunk. `chunk_end` picks
    /// where the chunk starting at a unit ends.
    fn drive<R, C, Q, M, L>(&self, total: u64, chunk_end: C, query: Q, make: M, label: L) -> Result<(bool, u64, u64), SweepError>
    where
        R: Serialize,
        C: Fn(u64) -> u64,
        Q: Fn(u64) -> DnsQuery,
        M: Fn(u64, QueryOutcome) -> R,
        L: Fn(u64) -> String,
    {
        let mut cp = Checkpoint::load(&self.paths.checkpoint, self.stage)?;
        if cp.complete {
            return Ok((true, 0, cp.high_water));
        }
        let mut log = JsonlWriter::open_at(&self.paths.log, cp.log_offset)?;
        let mut issued = 0;
        let mut chunks = 0;
        while cp.high_water < total {
            if self.opts.stop_after_chunks.is_some_and(|n| chunks >= n) {
                return Ok((false, issued, cp.high_water));
            }
            let start = cp.high_water;
            let end = chunk_end(start).min(total);
            debug_assert!(end > start);
            let mut slots: Vec<Option<QueryOutcome>> = vec![None; (end - start) as usize];
            self.engine
                .execute_batch((start..end).map(&query), |i, o| slots[i] = Some(o));
            issued += end - start;
            for (off, slot) in slots.into_iter().enumerate() {
                let o = slot.expect("engine yields one outcome per query");
                log.write(&make(start + off as u64, o))?;
            }
            cp.log_offset = log.commit()?;
            cp.high_water = end;
            cp.last_completed = Some(label(end - 1));
            cp.store(&self.paths.checkpoint)?;
            chunks += 1;
            log::debug!("{}: {}/{} units logged", self.stage, end, total);
        }
        cp.complete = true;
        cp.store(&self.paths.checkpoint)?;
        Ok((true, issued, cp.high_water))
    }
}

/// Routed IPv4 space laid out as consecutive ordinals.
struct AddressSpace {
    /// (first ordinal, range)
    ranges: Vec<(u64, RangeInclusive<u32>)>,
    total: u64,
}

impl AddressSpace {
    fn new(table: &RoutingTable) -> Self {
        let mut next = 0u64;
        let ranges = table
            .routed_ipv4_ranges()
            .into_iter()
            .map(|r| {
                let first = next;
                next += u64::from(r.end() - r.start()) + 1;
                (first, r)
            })
            .collect();
        AddressSpace { ranges, total: next }
    }

    fn locate(&self, ordinal: u64) -> usize {
        self.ranges.partition_point(|(first, _)| *first <= ordinal) - 1
    }

    fn address(&self, ordinal: u64) -> Ipv4Addr {
        let (first, r) = &self.ranges[self.locate(ordinal)];
        Ipv4Addr::from(r.start() + (ordinal - first) as u32)
    }

    /// Chunks never straddle two merged ranges.
    fn range_end(&self, ordinal: u64) -> u64 {
        let (first, r) = &self.ranges[self.locate(ordinal)];
        first + u64::from(r.end() - r.start()) + 1
    }
}

/// One PTR query per routed IPv4 address, ascending.
pub fn run_ptr_sweep(table: &RoutingTable, engine: &DnsEngine, paths: &StagePaths, opts: StageOptions) -> Result<StageRun, SweepError> {
    let space = AddressSpace::new(table);
    let driver = Driver {
        stage: "sweep-ptr",
        engine,
        paths,
        opts,
    };
    let (complete, issued, high_water) = driver.drive(
        space.total,
        |start| space.range_end(start).min(start + opts.chunk_size.max(1)),
        |i| DnsQuery::ptr(space.address(i)),
        |i, outcome| PtrLogRecord {
            source: space.address(i),
            outcome,
        },
        |i| space.address(i).to_string(),
    )?;
    Ok(StageRun {
        complete,
        issued,
        high_water,
        stats: SweepStats::from_ptr_log(&paths.log)?,
    })
}

fn name_stage(
    stage: &str,
    kind: RecordKind,
    names: &[NameCandidate],
    engine: &DnsEngine,
    paths: &StagePaths,
    opts: StageOptions,
) -> Result<(bool, u64, u64), SweepError> {
    let driver = Driver {
        stage,
        engine,
        paths,
        opts,
    };
    driver.drive(
        names.len() as u64,
        |start| start + opts.chunk_size.max(1),
        |i| DnsQuery::new(names[i as usize].name.clone(), kind),
        |i, mut outcome| {
            let c = &names[i as usize];
            outcome.name = c.name.clone();
            NameLogRecord {
                validity: c.validity,
                sources: c.sources.iter().copied().collect(),
                multiplicity: c.multiplicity,
                outcome,
            }
        },
        |i| names[i as usize].name.clone(),
    )
}

/// One AAAA query per distinct name, invalid names included.
pub fn run_aaaa_sweep(names: &[NameCandidate], engine: &DnsEngine, paths: &StagePaths, opts: StageOptions) -> Result<StageRun, SweepError> {
    let (complete, issued, high_water) = name_stage("sweep-aaaa", RecordKind::Aaaa, names, engine, paths, opts)?;
    Ok(StageRun {
        complete,
        issued,
        high_water,
        stats: SweepStats::from_aaaa_log(&paths.log)?,
    })
}

/// Names with at least one globally routable AAAA answer, in log order.
pub fn select_a_candidates(aaaa: &[NameLogRecord], registry: &SpecialRegistry, table: &RoutingTable) -> Vec<NameCandidate> {
    aaaa.iter()
        .filter(|r| {
            r.outcome
                .answers
                .iter()
                .filter_map(|a| a.parse::<Ipv6Addr>().ok())
                .any(|a| is_globally_routable(a, registry, table))
        })
        .map(|r| NameCandidate {
            name: r.outcome.name.clone(),
            sources: r.sources.iter().copied().collect(),
            multiplicity: r.multiplicity,
            validity: r.validity,
        })
        .collect()
}

/// A queries for the names chosen by [`select_a_candidates`].
pub fn run_a_sweep(candidates: &[NameCandidate], engine: &DnsEngine, paths: &StagePaths, opts: StageOptions) -> Result<StageRun, SweepError> {
    let (complete, issued, high_water) = name_stage("sweep-a", RecordKind::A, candidates, engine, paths, opts)?;
    Ok(StageRun {
        complete,
        issued,
        high_water,
        stats: SweepStats::from_a_log(&paths.log)?,
    })
}
