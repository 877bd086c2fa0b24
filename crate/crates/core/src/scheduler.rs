//! Chooses which tracked users get a timeline top-off in each scheduling
//! window.
//!
//! Two policies:
//!
//! * `epoch` — the tracked set is shuffled into a permutation and served in
//!   order, `budget` users per window. A batch never spans two permutations,
//!   so with `N` users every user is served exactly once per `ceil(N/budget)`
//!   windows and no inter-service gap exceeds twice that. Users registered
//!   mid-epoch wait for the next shuffle.
//! * `priority` — users are drawn without replacement, weighted by
//!   `activity_priority(rate) * windows_waiting`. The additive floor keeps
//!   idle users drawable; the waiting factor makes the gap for any user
//!   finite in practice even when most of the population is very active.
//!
//! All randomness is a ChaCha stream derived from the configured seed, and
//! the full state round-trips through `meta/scheduler.json`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveError};

const STATE_META: &str = "scheduler.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    #[default]
    Epoch,
    Priority,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epoch" => Ok(Self::Epoch),
            "priority" => Ok(Self::Priority),
            other => Err(format!("unknown scheduler policy {other:?} (epoch|priority)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub window_secs: u32,
    pub seed: u64,
    /// Upper bound on users topped off per window, before the rate budget.
    pub batch_size: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Epoch,
            window_secs: 900,
            seed: 0x6e74_5f73_6368_6564,
            batch_size: 50,
        }
    }
}

/// One shuffled pass over the tracked set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoch {
    pub index: u64,
    pub seed: u64,
    pub permutation: Vec<String>,
    pub cursor: usize,
}

impl Epoch {
    pub fn remaining(&self) -> usize {
        self.permutation.len() - self.cursor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    policy: Policy,
    base_seed: u64,
    tracked: BTreeSet<String>,
    epoch: Option<Epoch>,
    /// Windows handed out so far; the priority policy ages users by it.
    window: u64,
    rates: BTreeMap<String, f64>,
    last_served: BTreeMap<String, u64>,
}

/// Priority of a user with `recent_rate` tweets/day. Strictly increasing in
/// the rate and never below `floor`.
pub fn activity_priority(recent_rate: f64, floor: f64) -> f64 {
    recent_rate.max(0.0) + floor
}

/// The additive floor: 1% of the mean recent rate, or 0.01 when everyone is
/// idle.
pub fn priority_floor<'a>(rates: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (sum, n) = rates
        .into_iter()
        .fold((0.0, 0usize), |(s, n), r| (s + r.max(0.0), n + 1));
    let mean = if n == 0 { 0.0 } else { sum / n as f64 };
    if mean > 0.0 {
        0.01 * mean
    } else {
        0.01
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Scheduler {
    pub fn new(policy: Policy, seed: u64) -> Self {
        Self {
            policy,
            base_seed: seed,
            tracked: BTreeSet::new(),
            epoch: None,
            window: 0,
            rates: BTreeMap::new(),
            last_served: BTreeMap::new(),
        }
    }

    /// Restores persisted state, or starts fresh. A stored schedule keeps its
    /// own seed; the policy follows the current config.
    pub fn load_or_new(archive: &Archive, config: &SchedulerConfig) -> Result<Self, ArchiveError> {
        match archive.read_meta(STATE_META)? {
            Some(bytes) => {
                let mut s: Self = serde_json::from_slice(&bytes)?;
                s.policy = config.policy;
                Ok(s)
            }
            None => Ok(Self::new(config.policy, config.seed)),
        }
    }

    pub fn save(&self, archive: &Archive) -> Result<(), ArchiveError> {
        archive.write_meta(STATE_META, &serde_json::to_vec_pretty(self)?)
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn seed(&self) -> u64 {
        self.base_seed
    }

    pub fn tracked(&self) -> &BTreeSet<String> {
        &self.tracked
    }

    pub fn epoch(&self) -> Option<&Epoch> {
        self.epoch.as_ref()
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    /// Adds a user to the tracked set. Returns false if already tracked.
    pub fn register_user(&mut self, user_id: &str) -> bool {
        if !self.tracked.insert(user_id.to_string()) {
            return false;
        }
        self.last_served.insert(user_id.to_string(), self.window);
        true
    }

    pub fn set_recent_rate(&mut self, user_id: &str, tweets_per_day: f64) {
        if self.tracked.contains(user_id) {
            self.rates.insert(user_id.to_string(), tweets_per_day.max(0.0));
        }
    }

    pub fn recent_rate(&self, user_id: &str) -> f64 {
        self.rates.get(user_id).copied().unwrap_or(0.0)
    }

    /// Users to serve in the next window, at most `budget_slots` of them.
    pub fn next_batch(&mut self, budget_slots: usize) -> Vec<String> {
        if budget_slots == 0 || self.tracked.is_empty() {
            return Vec::new();
        }
        self.window += 1;
        let batch = match self.policy {
            Policy::Epoch => self.next_epoch_batch(budget_slots),
            Policy::Priority => self.next_priority_batch(budget_slots),
        };
        for u in &batch {
            self.last_served.insert(u.clone(), self.window);
        }
        batch
    }

    fn next_epoch_batch(&mut self, slots: usize) -> Vec<String> {
        if self.epoch.as_ref().is_none_or(|e| e.remaining() == 0) {
            self.start_epoch();
        }
        let epoch = self.epoch.as_mut().expect("epoch started");
        let take = slots.min(epoch.remaining());
        let batch = epoch.permutation[epoch.cursor..epoch.cursor + take].to_vec();
        epoch.cursor += take;
        batch
    }

    fn start_epoch(&mut self) {
        let (index, seed) = match &self.epoch {
            None => (0, self.base_seed),
            Some(prev) => (prev.index + 1, splitmix64(prev.seed)),
        };
        let mut permutation: Vec<String> = self.tracked.iter().cloned().collect();
        permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        tracing::debug!(index, users = permutation.len(), "new scheduling epoch");
        self.epoch = Some(Epoch {
            index,
            seed,
            permutation,
            cursor: 0,
        });
    }

    fn next_priority_batch(&mut self, slots: usize) -> Vec<String> {
        let floor = priority_floor(self.tracked.iter().map(|u| self.rates.get(u).unwrap_or(&0.0)));
        let weighted: Vec<(&String, f64)> = self
            .tracked
            .iter()
            .map(|u| {
                let waited = self.window - self.last_served.get(u).copied().unwrap_or(0);
                (u, activity_priority(self.recent_rate(u), floor) * waited as f64)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.base_seed ^ self.window));
        weighted
            .choose_multiple_weighted(&mut rng, slots.min(weighted.len()), |(_, w)| *w)
            .expect("weights are finite and positive")
            .map(|(u, _)| (*u).clone())
            .collect()
    }
}
