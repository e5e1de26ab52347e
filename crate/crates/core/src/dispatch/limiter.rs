//! Per-provider dispatch rate limiting.
//!
//! A bucket of `capacity` tokens where each spent token is returned exactly
//! one window after it was spent. Bursts up to `capacity` go out immediately,
//! and any half-open interval of one window length contains at most
//! `capacity` grants. For integer rates the window is one second and the
//! capacity equals the rate.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use tokio::time::Instant;

#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    grants: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        assert!(rate_per_sec > 0.0 && rate_per_sec.is_finite());
        let capacity = rate_per_sec.floor().max(1.0) as usize;
        let window = Duration::from_secs_f64(capacity as f64 / rate_per_sec);
        RateLimiter {
            capacity,
            window,
            grants: Mutex::new(VecDeque::with_capacity(capacity)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> Duration {
        self.window
    }

    /// Wait for a token; returns the instant the grant was recorded.
    pub async fn acquire(&self) -> Instant {
        loop {
            let wait_until = {
                let mut grants = self.grants.lock().unwrap();
                let now = Instant::now();
                while grants.front().is_some_and(|&t| now.duration_since(t) >= self.window) {
                    grants.pop_front();
                }
                if grants.len() < self.capacity {
                    grants.push_back(now);
                    return now;
                }
                *grants.front().unwrap() + self.window
            };
            tokio::time::sleep_until(wait_until).await;
        }
    }
}
