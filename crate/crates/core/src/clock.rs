// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// Elapsed-time source for budgets.
pub trait Clock: Send + Sync {
    fn elapsed(&self) -> Duration;
}

#[derive(Clone, Copy, Debug)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn start() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

/// Advances by a fixed step on every reading.
#[derive(Debug)]
pub struct TickClock {
    step: Duration,
    ticks: AtomicU64,
}

impl TickClock {
    pub fn new(step: Duration) -> Self {
        TickClock { step, ticks: AtomicU64::new(0) }
    }
}

impl Clock for TickClock {
    fn elapsed(&self) -> Duration {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.step * n as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_clock_steps() {
        let c = TickClock::new(Duration::from_millis(5));
        assert_eq!(c.elapsed(), Duration::ZERO);
        assert_eq!(c.elapsed(), Duration::from_millis(5));
        assert_eq!(c.elapsed(), Duration::from_millis(10));
    }
}
