//! Tweet hydration and author-timeline acquisition against a pluggable
//! backend.

pub mod backend;
pub mod budget;
pub mod mock;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::archive::{Archive, ArchiveError, Merge, Record, RecordKind};
use crate::clock::SharedClock;
use crate::digest::sha256_hex;

pub use backend::{obtain_bearer, Backend, BackendError, HttpBackend, TimelineQuery};
pub use budget::RateBudget;
pub use mock::{MockBackend, MockServer, MockTweet, MockUser, MockUsers};
pub use wire::Geo;

/// Most recent tweets reachable on any user timeline.
pub const TIMELINE_CAP: usize = 3200;
pub const TIMELINE_PAGE: usize = 200;
pub const LOOKUP_BATCH: usize = 100;

/// Numeric value of a decimal tweet/user id; non-numeric ids sort first.
pub fn id_num(id: &str) -> u64 {
    id.parse().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub user_id: String,
    pub handle: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub is_retweet: bool,
    pub geo: Option<Geo>,
    /// Digest of the raw wire object in the blob store.
    pub raw_ref: String,
}

impl Tweet {
    /// Decode a raw wire object; `raw_ref` is the digest of `raw`.
    pub fn from_raw(raw: &[u8]) -> Result<Self, String> {
        let wire: wire::WireTweet = serde_json::from_slice(raw).map_err(|e| e.to_string())?;
        let created_at = wire
            .created_at()
            .map_err(|e| format!("bad created_at {:?}: {e}", wire.created_at))?;
        Ok(Self {
            created_at,
            text: wire.full_text.or(wire.text).unwrap_or_default(),
            is_retweet: wire.retweeted_status.is_some(),
            geo: wire.coordinates.map(|c| Geo {
                lon: c.coordinates[0],
                lat: c.coordinates[1],
            }),
            user_id: wire.user.id_str,
            handle: wire.user.screen_name,
            id: wire.id_str,
            raw_ref: sha256_hex(raw),
        })
    }
}

/// Archive entry for a tweet id: a hydrated tweet, or a tombstone for an
/// id the backend did not return (deleted or protected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TweetRecord {
    Hydrated(Tweet),
    Tombstone { id: String, observed_at: DateTime<Utc> },
}

impl TweetRecord {
    pub fn id(&self) -> &str {
        match self {
            TweetRecord::Hydrated(t) => &t.id,
            TweetRecord::Tombstone { id, .. } => id,
        }
    }

    pub fn tweet(&self) -> Option<&Tweet> {
        match self {
            TweetRecord::Hydrated(t) => Some(t),
            TweetRecord::Tombstone { .. } => None,
        }
    }
}

impl Record for TweetRecord {
    const KIND: RecordKind = RecordKind::Tweet;

    fn key(&self) -> String {
        self.id().to_string()
    }

    fn validate(&self) -> Result<(), String> {
        let id = self.id();
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("tweet id {id:?} is not decimal"));
        }
        if let TweetRecord::Hydrated(t) = self {
            if t.raw_ref.is_empty() {
                return Err("missing raw_ref".into());
            }
        }
        Ok(())
    }

    /// A hydrated tweet is immutable: re-observing the same tweet keeps the
    /// first raw payload, a different author or timestamp is a conflict.
    /// Tombstones yield to hydrated objects, never the reverse.
    fn merge(stored: &Self, incoming: &Self) -> Merge {
        match (stored, incoming) {
            (TweetRecord::Hydrated(a), TweetRecord::Hydrated(b)) => {
                if a.user_id == b.user_id && a.created_at == b.created_at {
                    Merge::Keep
                } else {
                    Merge::Conflict
                }
            }
            (TweetRecord::Tombstone { .. }, TweetRecord::Hydrated(_)) => Merge::Replace,
            (_, TweetRecord::Tombstone { .. }) => Merge::Keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FullFetch {
    #[default]
    NotStarted,
    /// Interrupted by the budget; resume below `max_id` with `fetched`
    /// tweets already collected.
    InProgress {
        max_id: String,
        fetched: usize,
    },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub handle: String,
    pub first_embedded_at: DateTime<Utc>,
    pub newest_tweet_id: Option<String>,
    pub oldest_tweet_id: Option<String>,
    pub last_topoff_at: Option<DateTime<Utc>>,
    pub tracked: bool,
    #[serde(default)]
    pub full_fetch: FullFetch,
}

impl UserRecord {
    pub fn new(user_id: &str, handle: &str, first_embedded_at: DateTime<Utc>) -> Self {
        Self {
            user_id: user_id.into(),
            handle: handle.into(),
            first_embedded_at,
            newest_tweet_id: None,
            oldest_tweet_id: None,
            last_topoff_at: None,
            tracked: true,
            full_fetch: FullFetch::NotStarted,
        }
    }

    fn absorb_ids<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) {
        for id in ids {
            let n = id_num(id);
            if self.newest_tweet_id.as_deref().is_none_or(|cur| n > id_num(cur)) {
                self.newest_tweet_id = Some(id.to_string());
            }
            if self.oldest_tweet_id.as_deref().is_none_or(|cur| n < id_num(cur)) {
                self.oldest_tweet_id = Some(id.to_string());
            }
        }
    }
}

impl Record for UserRecord {
    const KIND: RecordKind = RecordKind::User;

    fn key(&self) -> String {
        self.user_id.clone()
    }

    fn validate(&self) -> Result<(), String> {
        if let (Some(n), Some(o)) = (&self.newest_tweet_id, &self.oldest_tweet_id) {
            if id_num(n) < id_num(o) {
                return Err(format!("newest_tweet_id {n} < oldest_tweet_id {o}"));
            }
        }
        if !self.tracked {
            return Err("embedded users are always tracked".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SocialError {
    #[error("request budget exhausted until {retry_at}")]
    BudgetExhausted { retry_at: DateTime<Utc> },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("user {0} unavailable")]
    UserUnavailable(String),
    #[error("user {0} is already being processed")]
    UserBusy(String),
    #[error("user {0} has no newest_tweet_id; run a full fetch first")]
    NotFetched(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Hydration {
    pub tweets: Vec<Tweet>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimelineFetch {
    /// Newest first, strictly descending by numeric id.
    pub tweets: Vec<Tweet>,
    /// Set when the budget ran out before the timeline was exhausted.
    pub resume: Option<TimelineCursor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineCursor {
    pub max_id: String,
    pub fetched: usize,
}

/// Releases a per-user lease on drop.
struct UserLease<'a> {
    set: &'a Mutex<HashSet<String>>,
    user_id: String,
}

impl Drop for UserLease<'_> {
    fn drop(&mut self) {
        self.set.lock().expect("lease set poisoned").remove(&self.user_id);
    }
}

pub struct SocialClient {
    backend: Arc<dyn Backend>,
    budget: Mutex<RateBudget>,
    clock: SharedClock,
    retry: RetryPolicy,
    busy_users: Mutex<HashSet<String>>,
}

impl SocialClient {
    pub fn new(backend: Arc<dyn Backend>, clock: SharedClock, budget: RateBudget, retry: RetryPolicy) -> Self {
        Self {
            backend,
            budget: Mutex::new(budget),
            clock,
            retry,
            busy_users: Mutex::new(HashSet::new()),
        }
    }

    pub fn budget(&self) -> RateBudget {
        self.budget.lock().expect("budget poisoned").clone()
    }

    pub fn remaining_budget(&self) -> u32 {
        let now = self.clock.now();
        self.budget.lock().expect("budget poisoned").remaining(now)
    }

    fn lease(&self, user_id: &str) -> Result<UserLease<'_>, SocialError> {
        let mut set = self.busy_users.lock().expect("lease set poisoned");
        if !set.insert(user_id.to_string()) {
            return Err(SocialError::UserBusy(user_id.to_string()));
        }
        Ok(UserLease {
            set: &self.busy_users,
            user_id: user_id.to_string(),
        })
    }

    /// One backend call under the budget, retried with exponential backoff
    /// on transient errors. Every attempt spends budget.
    fn call<T>(&self, f: impl Fn(&dyn Backend) -> Result<T, BackendError>) -> Result<T, SocialError> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = Duration::from_millis(self.retry.initial_backoff_ms);
        for attempt in 1..=attempts {
            {
                let now = self.clock.now();
                let mut budget = self.budget.lock().expect("budget poisoned");
                budget
                    .try_acquire(now)
                    .map_err(|retry_at| SocialError::BudgetExhausted { retry_at })?;
            }
            match f(self.backend.as_ref()) {
                Ok(v) => return Ok(v),
                Err(BackendError::Transient(msg)) if attempt < attempts => {
                    tracing::debug!(attempt, %msg, ?backoff, "transient backend error, backing off");
                    self.clock.sleep(backoff);
                    backoff *= 2;
                }
                Err(BackendError::Transient(msg)) | Err(BackendError::Fatal(msg)) => {
                    return Err(SocialError::BackendUnavailable(msg))
                }
                Err(BackendError::UserUnavailable(u)) => return Err(SocialError::UserUnavailable(u)),
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    fn decode(item: &Value) -> Result<(Vec<u8>, Tweet), SocialError> {
        let raw = serde_json::to_vec(item).map_err(|e| SocialError::BadResponse(e.to_string()))?;
        let tweet = Tweet::from_raw(&raw).map_err(SocialError::BadResponse)?;
        Ok((raw, tweet))
    }

    fn store(archive: &Archive, raw: &[u8], tweet: &Tweet) -> Result<(), SocialError> {
        archive.put_blob_at(&tweet.raw_ref, raw)?;
        archive.upsert(&TweetRecord::Hydrated(tweet.clone()))?;
        Ok(())
    }

    /// Resolve tweet ids in batches of [`LOOKUP_BATCH`]. Ids the backend does
    /// not return are reported in `missing` and tombstoned.
    pub fn hydrate_tweets(&self, archive: &Archive, ids: &[String]) -> Result<Hydration, SocialError> {
        let mut seen = HashSet::new();
        let unique: Vec<String> = ids.iter().filter(|id| seen.insert(id.as_str())).cloned().collect();
        let mut result = Hydration::default();
        for batch in unique.chunks(LOOKUP_BATCH) {
            let items = self.call(|b| b.lookup(batch))?;
            let mut tweets = Vec::with_capacity(items.len());
            for item in &items {
                let (raw, tweet) = Self::decode(item)?;
                if batch.contains(&tweet.id) {
                    Self::store(archive, &raw, &tweet)?;
                    tweets.push(tweet);
                }
            }
            let returned: HashSet<&str> = tweets.iter().map(|t| t.id.as_str()).collect();
            for id in batch.iter().filter(|id| !returned.contains(id.as_str())) {
                archive.upsert(&TweetRecord::Tombstone {
                    id: id.clone(),
                    observed_at: self.clock.now(),
                })?;
                result.missing.push(id.clone());
            }
            result.tweets.extend(tweets);
        }
        Ok(result)
    }

    /// Page backwards through a timeline from `max_id` (inclusive), stopping
    /// after `limit` tweets, at `since_id`, or at a short page.
    fn page_back(
        &self,
        archive: &Archive,
        user_id: &str,
        mut max_id: Option<String>,
        since_id: Option<&str>,
        limit: usize,
    ) -> Result<(Vec<Tweet>, Option<SocialError>), SocialError> {
        let mut collected: BTreeMap<u64, Tweet> = BTreeMap::new();
        let floor = since_id.map(id_num);
        while collected.len() < limit {
            let count = TIMELINE_PAGE.min(limit - collected.len());
            let query = TimelineQuery {
                user_id: user_id.to_string(),
                count,
                max_id: max_id.clone(),
                since_id: since_id.map(str::to_string),
            };
            let page = match self.call(|b| b.user_timeline(&query)) {
                Ok(page) => page,
                Err(e @ SocialError::BudgetExhausted { .. }) => {
                    return Ok((collected.into_values().rev().collect(), Some(e)));
                }
                Err(e) => return Err(e),
            };
            let short = page.len() < count;
            let ceiling = max_id.as_deref().map(id_num);
            let mut oldest: Option<u64> = None;
            for item in &page {
                let (raw, tweet) = Self::decode(item)?;
                let n = id_num(&tweet.id);
                if floor.is_some_and(|f| n <= f) || ceiling.is_some_and(|c| n > c) || collected.contains_key(&n) {
                    continue;
                }
                if collected.len() >= limit {
                    break;
                }
                oldest = Some(oldest.map_or(n, |o| o.min(n)));
                Self::store(archive, &raw, &tweet)?;
                collected.insert(n, tweet);
            }
            match oldest {
                Some(o) if !short && o > 0 => max_id = Some((o - 1).to_string()),
                _ => break,
            }
        }
        Ok((collected.into_values().rev().collect(), None))
    }

    /// The newest [`TIMELINE_CAP`] tweets of `user_id`, newest first. When
    /// the budget runs out midway the partial result comes back with a
    /// resume cursor; pass it back in to continue.
    pub fn fetch_full_timeline(
        &self,
        archive: &Archive,
        user_id: &str,
        resume: Option<&TimelineCursor>,
    ) -> Result<TimelineFetch, SocialError> {
        let _lease = self.lease(user_id)?;
        let already = resume.map_or(0, |c| c.fetched);
        let limit = TIMELINE_CAP.saturating_sub(already);
        let (tweets, interrupted) = self.page_back(archive, user_id, resume.map(|c| c.max_id.clone()), None, limit)?;
        let resume = match interrupted {
            Some(SocialError::BudgetExhausted { retry_at }) => {
                let next_max = match tweets.last() {
                    Some(t) => id_num(&t.id).saturating_sub(1).to_string(),
                    None => match resume {
                        Some(c) => c.max_id.clone(),
                        // nothing fetched yet: report exhaustion to the caller
                        None => return Err(SocialError::BudgetExhausted { retry_at }),
                    },
                };
                Some(TimelineCursor {
                    max_id: next_max,
                    fetched: already + tweets.len(),
                })
            }
            Some(other) => return Err(other),
            None => None,
        };
        Ok(TimelineFetch { tweets, resume })
    }

    /// Tweets newer than `user.newest_tweet_id`, newest first. On success the
    /// record's `newest_tweet_id` and `last_topoff_at` are updated (the
    /// caller persists it); on error the record is untouched.
    pub fn topoff_timeline(&self, archive: &Archive, user: &mut UserRecord) -> Result<Vec<Tweet>, SocialError> {
        let since = user
            .newest_tweet_id
            .clone()
            .ok_or_else(|| SocialError::NotFetched(user.user_id.clone()))?;
        let _lease = self.lease(&user.user_id)?;
        let (tweets, interrupted) = self.page_back(archive, &user.user_id, None, Some(&since), TIMELINE_CAP)?;
        if let Some(e) = interrupted {
            return Err(e);
        }
        user.absorb_ids(tweets.iter().map(|t| t.id.as_str()));
        user.last_topoff_at = Some(self.clock.now());
        Ok(tweets)
    }

    /// Run (or resume) the initial timeline fetch for `user`, updating its
    /// bookkeeping. Returns the number of tweets fetched in this call.
    pub fn initial_fetch(&self, archive: &Archive, user: &mut UserRecord) -> Result<usize, SocialError> {
        let cursor = match &user.full_fetch {
            FullFetch::Done => return Ok(0),
            FullFetch::NotStarted => None,
            FullFetch::InProgress { max_id, fetched } => Some(TimelineCursor {
                max_id: max_id.clone(),
                fetched: *fetched,
            }),
        };
        let fetch = self.fetch_full_timeline(archive, &user.user_id, cursor.as_ref())?;
        user.absorb_ids(fetch.tweets.iter().map(|t| t.id.as_str()));
        user.full_fetch = match fetch.resume {
            Some(c) => FullFetch::InProgress {
                max_id: c.max_id,
                fetched: c.fetched,
            },
            None => FullFetch::Done,
        };
        if user.full_fetch == FullFetch::Done {
            user.last_topoff_at = Some(self.clock.now());
        }
        Ok(fetch.tweets.len())
    }
}

/// Ids of every hydrated tweet by `user_id` in the archive.
pub fn archived_ids_for(archive: &Archive, user_id: &str) -> BTreeSet<String> {
    archive
        .scan(|r: &TweetRecord| r.tweet().is_some_and(|t| t.user_id == user_id))
        .map(|r| r.id().to_string())
        .collect()
}
