//! Request rate limiting over a sliding 60-second window.
//!
//! The limiter records grant times and admits a request only when fewer
//! than the configured number of grants fall inside the trailing window,
//! so the count of issued requests in any 60-second interval never exceeds
//! the limit. Time is injected through [`Clock`] to keep the behavior
//! testable without real sleeps.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

const WINDOW: Duration = Duration::from_secs(60);

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

#[derive(Debug)]
pub struct RateLimiter {
    per_minute: u32,
    grants: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        Self {
            per_minute: per_minute.max(1),
            grants: Mutex::new(VecDeque::new()),
        }
    }

    /// Block until a request slot is free, then claim it. Returns the
    /// total time spent waiting.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let mut waited = Duration::ZERO;
        loop {
            let now = clock.now();
            let mut grants = self.grants.lock().expect("limiter lock");
            while let Some(front) = grants.front() {
                if now.duration_since(*front) >= WINDOW {
                    grants.pop_front();
                } else {
                    break;
                }
            }
            if (grants.len() as u32) < self.per_minute {
                grants.push_back(now);
                return waited;
            }
            let oldest = *grants.front().expect("non-empty at capacity");
            let wait = WINDOW.saturating_sub(now.duration_since(oldest));
            drop(grants);
            let wait = wait.max(Duration::from_millis(1));
            clock.sleep(wait);
            waited += wait;
        }
    }
}
