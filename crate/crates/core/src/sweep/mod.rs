//! The three DNS sweep stages and their result logs.
//!
//! Each stage writes one JSON Lines record per query outcome and keeps a
//! checkpoint next to the log. A checkpoint names the number of input units
//! already logged and the byte offset where that prefix of the log ends, so
//! an interrupted run resumes without re-issuing or duplicating queries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{Ipv4Addr, Ipv6Addr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns::{normalize_name, QueryOutcome, ResponseCategory};
use crate::jsonl::{for_each_record, JsonlError};

mod stages;

pub use stages::{run_a_sweep, run_aaaa_sweep, run_ptr_sweep, select_a_candidates, StageOptions, StageRun};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Log(#[from] JsonlError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NameValidity {
    Valid,
    Localhost,
    EmptyString,
    Ipv4Literal,
    LoopbackLiteral,
    ZeroLiteral,
}

impl NameValidity {
    pub fn as_str(&self) -> &'static str {
        match self {
            NameValidity::Valid => "valid",
            NameValidity::Localhost => "localhost",
            NameValidity::EmptyString => "empty-string",
            NameValidity::Ipv4Literal => "ipv4-literal",
            NameValidity::LoopbackLiteral => "loopback-literal",
            NameValidity::ZeroLiteral => "zero-literal",
        }
    }
}

pub fn sanitize_name(name: &str) -> NameValidity {
    let stripped = name.strip_suffix('.').unwrap_or(name);
    if stripped.is_empty() {
        return NameValidity::EmptyString;
    }
    if stripped.eq_ignore_ascii_case("localhost") {
        return NameValidity::Localhost;
    }
    match stripped.parse::<Ipv4Addr>() {
        Ok(a) if a == Ipv4Addr::LOCALHOST => NameValidity::LoopbackLiteral,
        Ok(a) if a == Ipv4Addr::UNSPECIFIED => NameValidity::ZeroLiteral,
        Ok(_) => NameValidity::Ipv4Literal,
        Err(_) => NameValidity::Valid,
    }
}

/// PTR log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtrLogRecord {
    pub source: Ipv4Addr,
    #[serde(flatten)]
    pub outcome: QueryOutcome,
}

/// AAAA and A log line. `outcome.name` is the normalized name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameLogRecord {
    pub validity: NameValidity,
    pub sources: Vec<Ipv4Addr>,
    /// How many PTR answers normalized to this name.
    pub multiplicity: u64,
    #[serde(flatten)]
    pub outcome: QueryOutcome,
}

impl NameLogRecord {
    pub fn name(&self) -> &str {
        &self.outcome.name
    }
}

/// A distinct name harvested from the PTR log, before any forward lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameCandidate {
    pub name: String,
    pub sources: BTreeSet<Ipv4Addr>,
    pub multiplicity: u64,
    pub validity: NameValidity,
}

/// A name with everything the sweeps learned about it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameRecord {
    pub name: String,
    pub sources: BTreeSet<Ipv4Addr>,
    pub multiplicity: u64,
    pub validity: NameValidity,
    pub aaaa: Option<QueryOutcome>,
    pub a: Option<QueryOutcome>,
}

impl NameRecord {
    pub fn aaaa_addresses(&self) -> impl Iterator<Item = Ipv6Addr> + '_ {
        self.aaaa.iter().flat_map(|o| o.answers.iter().filter_map(|a| a.parse().ok()))
    }

    pub fn a_addresses(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.a.iter().flat_map(|o| o.answers.iter().filter_map(|a| a.parse().ok()))
    }
}

/// Log and checkpoint locations for one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePaths {
    pub log: PathBuf,
    pub checkpoint: PathBuf,
}

impl StagePaths {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        StagePaths {
            log: dir.join(format!("{stem}.jsonl")),
            checkpoint: dir.join(format!("{stem}.checkpoint.json")),
        }
    }
}

/// Distinct names in PTR answers, sorted by normalized name.
pub fn collect_names(ptr_log: &Path) -> Result<Vec<NameCandidate>, SweepError> {
    let mut by_name: BTreeMap<String, NameCandidate> = BTreeMap::new();
    for_each_record(ptr_log, |r: PtrLogRecord| {
        for answer in &r.outcome.answers {
            let name = normalize_name(answer);
            let entry = by_name.entry(name.clone()).or_insert_with(|| NameCandidate {
                validity: sanitize_name(&name),
                name,
                sources: BTreeSet::new(),
                multiplicity: 0,
            });
            entry.sources.insert(r.source);
            entry.multiplicity += 1;
        }
    })?;
    Ok(by_name.into_values().collect())
}

/// Joins the AAAA log with the (optional) A log.
pub fn load_name_records(aaaa_log: &Path, a_log: Option<&Path>) -> Result<Vec<NameRecord>, SweepError> {
    let mut records = Vec::new();
    let mut index = HashMap::new();
    for_each_record(aaaa_log, |r: NameLogRecord| {
        index.insert(r.outcome.name.clone(), records.len());
        records.push(NameRecord {
            name: r.outcome.name.clone(),
            sources: r.sources.into_iter().collect(),
            multiplicity: r.multiplicity,
            validity: r.validity,
            aaaa: Some(r.outcome),
            a: None,
        });
    })?;
    if let Some(a_log) = a_log {
        let mut orphan = None;
        for_each_record(a_log, |r: NameLogRecord| match index.get(&r.outcome.name) {
            Some(&i) => records[i].a = Some(r.outcome),
            None => orphan = Some(r.outcome.name),
        })?;
        if let Some(name) = orphan {
            return Err(SweepError::Input(format!("A log names {name:?}, which the AAAA log lacks")));
        }
    }
    Ok(records)
}

/// Histogram of answer-set sizes over NoError outcomes.
pub fn answer_set_size_distribution<'a, I>(outcomes: I) -> BTreeMap<usize, u64>
where
    I: IntoIterator<Item = &'a QueryOutcome>,
{
    let mut hist = BTreeMap::new();
    for o in outcomes {
        if o.category == ResponseCategory::NoError {
            *hist.entry(o.answers.len()).or_default() += 1;
        }
    }
    hist
}

pub const DEFAULT_SENTINEL_THRESHOLD: u64 = 1000;

/// Addresses returned for at least `threshold` distinct names, most common first.
pub fn detect_sentinels(records: &[NameRecord], threshold: u64) -> Vec<(Ipv6Addr, u64)> {
    let mut names_per_addr: HashMap<Ipv6Addr, u64> = HashMap::new();
    for r in records {
        let distinct: BTreeSet<Ipv6Addr> = r.aaaa_addresses().collect();
        for a in distinct {
            *names_per_addr.entry(a).or_default() += 1;
        }
    }
    let mut out: Vec<_> = names_per_addr.into_iter().filter(|&(_, n)| n >= threshold).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Per-stage totals, always recomputed from the log itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepStats {
    pub stage: String,
    pub queries: u64,
    pub categories: BTreeMap<ResponseCategory, u64>,
    pub answers: u64,
    pub answer_set_sizes: BTreeMap<usize, u64>,
    /// Counts of odd answers: bad names for PTR, odd addresses for AAAA.
    pub notable: BTreeMap<String, u64>,
    /// The same counts weighted by how often the PTR sweep returned the name.
    pub notable_weighted: BTreeMap<String, u64>,
    pub tcp: u64,
    pub cached: u64,
}

impl SweepStats {
    fn new(stage: &str) -> Self {
        SweepStats {
            stage: stage.to_string(),
            queries: 0,
            categories: ResponseCategory::ALL.iter().map(|&c| (c, 0)).collect(),
            answers: 0,
            answer_set_sizes: BTreeMap::new(),
            notable: BTreeMap::new(),
            notable_weighted: BTreeMap::new(),
            tcp: 0,
            cached: 0,
        }
    }

    fn count(&mut self, o: &QueryOutcome) {
        self.queries += 1;
        *self.categories.entry(o.category).or_default() += 1;
        self.answers += o.answers.len() as u64;
        if o.category == ResponseCategory::NoError {
            *self.answer_set_sizes.entry(o.answers.len()).or_default() += 1;
        }
        self.tcp += u64::from(o.transport == crate::dns::Transport::Tcp);
        self.cached += u64::from(o.cached);
    }

    fn note(&mut self, key: &str, weight: u64) {
        *self.notable.entry(key.to_string()).or_default() += 1;
        *self.notable_weighted.entry(key.to_string()).or_default() += weight;
    }

    pub fn category(&self, c: ResponseCategory) -> u64 {
        self.categories.get(&c).copied().unwrap_or(0)
    }

    pub fn from_ptr_log(path: &Path) -> Result<Self, SweepError> {
        let mut s = SweepStats::new("sweep-ptr");
        for_each_record(path, |r: PtrLogRecord| {
            s.count(&r.outcome);
            for a in &r.outcome.answers {
                let v = sanitize_name(a);
                if v != NameValidity::Valid {
                    s.note(v.as_str(), 1);
                }
            }
        })?;
        Ok(s)
    }

    pub fn from_aaaa_log(path: &Path) -> Result<Self, SweepError> {
        let mut s = SweepStats::new("sweep-aaaa");
        for_each_record(path, |r: NameLogRecord| {
            s.count(&r.outcome);
            if r.validity != NameValidity::Valid {
                s.note(&format!("name:{}", r.validity.as_str()), r.multiplicity);
            }
            for a in r.outcome.answers.iter().filter_map(|a| a.parse::<Ipv6Addr>().ok()) {
                if a == Ipv6Addr::LOCALHOST {
                    s.note("::1", r.multiplicity);
                    if r.validity == NameValidity::Localhost {
                        s.note("::1 from localhost", r.multiplicity);
                    }
                } else if a == Ipv6Addr::UNSPECIFIED {
                    s.note("::", r.multiplicity);
                } else if u128::from(a) as u64 == 0 {
                    s.note("zero-iid", r.multiplicity);
                }
            }
        })?;
        Ok(s)
    }

    pub fn from_a_log(path: &Path) -> Result<Self, SweepError> {
        let mut s = SweepStats::new("sweep-a");
        for_each_record(path, |r: NameLogRecord| s.count(&r.outcome))?;
        Ok(s)
    }
}
