//! Retry backoff and request-rate limiting.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;

/// Time source; tests substitute a manual clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Exponential backoff with full jitter: attempt `i` waits a uniform draw
/// from `[0, min(cap, base * factor^i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32) -> Self {
        Self {
            max_retries,
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
        }
    }

    pub fn ceiling(&self, attempt: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }

    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        self.ceiling(attempt).mul_f64(rng.random::<f64>())
    }

    pub fn is_retryable(status: u16) -> bool {
        status == 429 || (500..600).contains(&status)
    }
}

/// Token bucket refilled at `per_minute / 60` tokens per second.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    rate_per_sec: f64,
    state: Mutex<(f64, Duration)>,
}

impl TokenBucket {
    /// Starts full. `burst` is clamped to at least 1.
    pub fn new(per_minute: u32, burst: u32, now: Duration) -> Self {
        let capacity = burst.max(1) as f64;
        Self {
            capacity,
            rate_per_sec: per_minute.max(1) as f64 / 60.0,
            state: Mutex::new((capacity, now)),
        }
    }

    /// Takes a token if one is available at `now`; otherwise returns how long
    /// to wait before trying again.
    pub fn try_acquire(&self, now: Duration) -> Result<(), Duration> {
        let mut st = self.state.lock().unwrap();
        let elapsed = now.saturating_sub(st.1).as_secs_f64();
        st.0 = (st.0 + elapsed * self.rate_per_sec).min(self.capacity);
        st.1 = now.max(st.1);
        if st.0 >= 1.0 {
            st.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - st.0) / self.rate_per_sec))
        }
    }

    pub fn acquire(&self, clock: &dyn Clock) {
        while let Err(wait) = self.try_acquire(clock.now()) {
            clock.sleep(wait);
        }
    }
}
