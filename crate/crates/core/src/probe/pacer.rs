/// Token bucket in GCRA form over integer microseconds.
///
/// With emission interval `T` and burst `b`, any window of length `W`
/// admits at most `floor(W / T) + b` units.
#[derive(Debug, Clone)]
pub struct Pacer {
    interval_us: u64,
    tolerance_us: u64,
    /// Theoretical arrival time of the next unit.
    tat: Option<u64>,
}

impl Pacer {
    pub fn new(per_hour: u64, burst: u64) -> Self {
        let interval_us = 3_600_000_000u64.div_ceil(per_hour.max(1));
        Pacer {
            interval_us,
            tolerance_us: interval_us * (burst.max(1) - 1),
            tat: None,
        }
    }

    pub fn interval_us(&self) -> u64 {
        self.interval_us
    }

    /// Reserves the next slot at or after `now` and returns its time.
    pub fn admit(&mut self, now: u64) -> u64 {
        let tat = self.tat.unwrap_or(now);
        let at = now.max(tat.saturating_sub(self.tolerance_us));
        self.tat = Some(tat.max(at) + self.interval_us);
        at
    }
}
