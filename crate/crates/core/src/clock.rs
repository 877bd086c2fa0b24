//! Wall-clock abstraction so schedulers, rate budgets and the daemon loop can
//! run against a simulated clock in tests.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;

    /// Block (or pretend to block) for `dur`.
    fn sleep(&self, dur: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, dur: Duration) {
        std::thread::sleep(dur);
    }
}

/// Millisecond-resolution clock that only moves when told to. `sleep`
/// advances it instantly, so backoff and pacing logic is exercised without
/// real waiting.
#[derive(Debug, Clone)]
pub struct SimClock {
    millis: Arc<AtomicI64>,
}

impl SimClock {
    pub fn at(start: DateTime<Utc>) -> Self {
        Self {
            millis: Arc::new(AtomicI64::new(start.timestamp_millis())),
        }
    }

    pub fn epoch() -> Self {
        Self::at(Utc.timestamp_opt(1_557_878_400, 0).unwrap()) // 2019-05-15T00:00:00Z
    }

    pub fn advance(&self, dur: Duration) {
        self.millis.fetch_add(dur.as_millis() as i64, Ordering::SeqCst);
    }

    pub fn set(&self, t: DateTime<Utc>) {
        self.millis.store(t.timestamp_millis(), Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.millis.load(Ordering::SeqCst))
            .single()
            .expect("simulated clock in range")
    }

    fn sleep(&self, dur: Duration) {
        self.advance(dur);
    }
}

pub type SharedClock = Arc<dyn Clock>;
