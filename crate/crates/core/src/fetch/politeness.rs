use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};

use crate::clock::SharedClock;

/// End time of the host's last request, held while a request is in flight.
type Gate = Arc<Mutex<Option<DateTime<Utc>>>>;

/// Per-host request gate: one request in flight per host, and at least
/// `min_delay` between the end of one request and the start of the next.
pub struct HostGates {
    clock: SharedClock,
    min_delay: Duration,
    hosts: Mutex<HashMap<String, Gate>>,
}

impl HostGates {
    pub fn new(clock: SharedClock, min_delay: Duration) -> Self {
        Self {
            clock,
            min_delay,
            hosts: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_host<T>(&self, host: &str, f: impl FnOnce() -> T) -> T {
        let gate = {
            let mut hosts = self.hosts.lock().expect("host gate map poisoned");
            hosts.entry(host.to_ascii_lowercase()).or_default().clone()
        };
        let mut last = gate.lock().expect("host gate poisoned");
        if let Some(prev) = *last {
            let ready = prev + chrono::Duration::from_std(self.min_delay).unwrap_or_default();
            let now = self.clock.now();
            if ready > now {
                self.clock.sleep((ready - now).to_std().unwrap_or_default());
            }
        }
        let out = f();
        *last = Some(self.clock.now());
        out
    }
}
