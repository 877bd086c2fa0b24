use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

/// Fixed-window request budget. Windows are aligned to the first
/// `window_start`, so window k covers `[start + k·w, start + (k+1)·w)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateBudget {
    pub requests_per_window: u32,
    pub window_secs: u32,
    pub spent: u32,
    pub window_start: DateTime<Utc>,
}

impl RateBudget {
    pub fn new(requests_per_window: u32, window_secs: u32, now: DateTime<Utc>) -> Self {
        Self {
            requests_per_window,
            window_secs: window_secs.max(1),
            spent: 0,
            window_start: now,
        }
    }

    fn window(&self) -> Duration {
        Duration::seconds(i64::from(self.window_secs))
    }

    fn roll(&mut self, now: DateTime<Utc>) {
        if now >= self.window_start + self.window() {
            let elapsed = (now - self.window_start).num_milliseconds();
            let w = self.window().num_milliseconds();
            self.window_start += Duration::milliseconds(elapsed / w * w);
            self.spent = 0;
        }
    }

    pub fn window_end(&self) -> DateTime<Utc> {
        self.window_start + self.window()
    }

    pub fn remaining(&mut self, now: DateTime<Utc>) -> u32 {
        self.roll(now);
        self.requests_per_window.saturating_sub(self.spent)
    }

    /// Spend one request, or report when the next window opens.
    pub fn try_acquire(&mut self, now: DateTime<Utc>) -> Result<(), DateTime<Utc>> {
        self.roll(now);
        if self.spent >= self.requests_per_window {
            return Err(self.window_end());
        }
        self.spent += 1;
        Ok(())
    }
}
