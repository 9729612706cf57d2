//! Wall and virtual clocks.
//!
//! Everything that reads time or waits goes through [`Clock`], so pacing and
//! timestamps can run on virtual time in the simulation harness.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Time since the Unix epoch.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);

    fn now_micros(&self) -> u64 {
        self.now().as_micros() as u64
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Clock that only moves when slept on. Optionally sleeps for real at
/// `1/speedup` of the virtual duration.
#[derive(Debug)]
pub struct VirtualClock {
    nanos: AtomicU64,
    speedup: Option<f64>,
}

impl VirtualClock {
    pub fn new(start: Duration) -> Self {
        VirtualClock {
            nanos: AtomicU64::new(start.as_nanos() as u64),
            speedup: None,
        }
    }

    pub fn scaled(start: Duration, speedup: f64) -> Self {
        assert!(speedup > 0.0, "speedup must be positive");
        VirtualClock {
            nanos: AtomicU64::new(start.as_nanos() as u64),
            speedup: Some(speedup),
        }
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn sleep(&self, d: Duration) {
        if let Some(k) = self.speedup {
            std::thread::sleep(d.div_f64(k));
        }
        self.advance(d);
    }
}
