//! Time sources for latency accounting.
//!
//! Scripted runs use [`SimulatedClock`], which only moves when a backend
//! reports a simulated latency, so step logs are bit-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary fixed origin.
    fn now_ms(&self) -> u64;

    /// Move simulated time forward. Wall clocks ignore this.
    fn advance(&self, _ms: u64) {}
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

#[derive(Debug, Default)]
pub struct SimulatedClock {
    now: AtomicU64,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for SimulatedClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_clock_moves_only_on_advance() {
        let c = SimulatedClock::new();
        assert_eq!(c.now_ms(), 0);
        c.advance(40);
        c.advance(2);
        assert_eq!(c.now_ms(), 42);
    }

    #[test]
    fn system_clock_ignores_advance() {
        let c = SystemClock::new();
        c.advance(1_000_000);
        assert!(c.now_ms() < 1_000_000);
    }
}
