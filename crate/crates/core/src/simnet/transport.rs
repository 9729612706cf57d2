use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{Scenario, TcpBehavior};
use crate::probe::{ConnectResult, EchoResult, ProbeTransport, TransportError};

/// Scripted probe backend that records every request it sees.
pub struct SimTransport {
    scenario: Arc<Scenario>,
    deny_icmp: AtomicBool,
    echoes: Mutex<HashMap<IpAddr, u32>>,
    connects: Mutex<HashMap<SocketAddr, u32>>,
    exhausted: Mutex<HashMap<SocketAddr, u32>>,
}

impl SimTransport {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        SimTransport {
            scenario,
            deny_icmp: AtomicBool::new(false),
            echoes: Mutex::new(HashMap::new()),
            connects: Mutex::new(HashMap::new()),
            exhausted: Mutex::new(HashMap::new()),
        }
    }

    /// Makes every echo fail as if ICMP sockets were forbidden.
    pub fn deny_icmp(&self) {
        self.deny_icmp.store(true, Ordering::SeqCst);
    }

    /// The next `times` connects to `addr` fail locally before any packet is sent.
    pub fn exhaust_locally(&self, addr: SocketAddr, times: u32) {
        self.exhausted.lock().expect("lock").insert(addr, times);
    }

    pub fn echo_requests(&self, target: IpAddr) -> u32 {
        self.echoes.lock().expect("lock").get(&target).copied().unwrap_or(0)
    }

    pub fn connect_attempts(&self, target: SocketAddr) -> u32 {
        self.connects.lock().expect("lock").get(&target).copied().unwrap_or(0)
    }

    pub fn echo_counts(&self) -> HashMap<IpAddr, u32> {
        self.echoes.lock().expect("lock").clone()
    }

    pub fn connect_counts(&self) -> HashMap<SocketAddr, u32> {
        self.connects.lock().expect("lock").clone()
    }

    /// Payload bytes written or read; scripted connections carry none.
    pub fn payload_bytes(&self) -> u64 {
        0
    }
}

impl ProbeTransport for SimTransport {
    fn echo(&self, target: IpAddr, seq: u16, _timeout: Duration) -> Result<EchoResult, TransportError> {
        if self.deny_icmp.load(Ordering::SeqCst) {
            return Err(TransportError::Permission("scripted denial".into()));
        }
        *self.echoes.lock().expect("lock").entry(target).or_default() += 1;
        Ok(if self.scenario.echo_script(target).replies_to(seq) {
            EchoResult::Reply
        } else {
            EchoResult::NoReply
        })
    }

    fn connect(&self, target: SocketAddr, _timeout: Duration) -> Result<ConnectResult, TransportError> {
        if let Some(left) = self.exhausted.lock().expect("lock").get_mut(&target) {
            if *left > 0 {
                *left -= 1;
                return Err(TransportError::LocalResource("scripted exhaustion".into()));
            }
        }
        *self.connects.lock().expect("lock").entry(target).or_default() += 1;
        Ok(match self.scenario.tcp_behavior(target.ip(), target.port()) {
            TcpBehavior::Accept => ConnectResult::Accepted,
            TcpBehavior::Refuse => ConnectResult::Refused,
            TcpBehavior::Drop => ConnectResult::TimedOut,
        })
    }

    fn pause(&self, _d: Duration) {}
}
