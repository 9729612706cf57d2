//! Discovery of IPv6 addresses by sweeping the reverse DNS of routed IPv4
//! space, resolving the returned names to AAAA records, and measuring what
//! comes back.
//!
//! Stages, in order:
//!
//! 1. [`sweep::run_ptr_sweep`]: one PTR query per routed IPv4 address.
//! 2. [`sweep::run_aaaa_sweep`]: one AAAA query per distinct returned name.
//! 3. [`sweep::run_a_sweep`]: A queries for names with routable AAAA answers.
//! 4. [`classify`]: special-purpose, routability, SLAAC and IID structure.
//! 5. [`pairing`]: conservative IPv4/IPv6 pairs sharing a name and origin ASN.
//! 6. [`probe`]: paced ICMP echo and TCP connection measurements.
//! 7. [`report`]: aggregate tables and plot-ready data.
//!
//! [`simnet`] provides a scripted resolver and probe transport so the whole
//! pipeline can run offline and deterministically; [`orchestrator`] wires the
//! stages to a run directory with a manifest.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod classify;
pub mod clock;
pub mod dns;
pub mod jsonl;
pub mod orchestrator;
pub mod pairing;
pub mod probe;
pub mod report;
pub mod routing;
pub mod simnet;
pub mod sweep;

/// Autonomous system number.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Asn(pub u32);

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AS{}", self.0)
    }
}
