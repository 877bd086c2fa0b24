//! Stage orchestration: poll → fetch → extract → hydrate → register →
//! top-off → stats, once (`run_once`) or continuously (`run_daemon`).
//!
//! Every stage reads only what earlier stages committed to the archive, so
//! any stage can also be run on its own and an interrupted run resumes from
//! the archive contents.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;
use serde_json::json;
use url::Url;

use crate::analytics::{self, Dataset, Report};
use crate::archive::{Archive, ArchiveError, RecordKind, UpsertOutcome};
use crate::clock::SharedClock;
use crate::config::{BackendKind, ConfigError, Mode, PipelineConfig, BEARER_ENV, KEY_ENV, SECRET_ENV};
use crate::embed::{self, Embed, ExtractReport};
use crate::feed::{self, parse_feed, FeedError, Section};
use crate::fetch::{Article, Classification, FetchResult, Fetcher, FixtureTransport, LiveTransport, Transport};
use crate::par::{self, Execution};
use crate::scheduler::Scheduler;
use crate::social::{
    obtain_bearer, Backend, FullFetch, HttpBackend, MockBackend, RateBudget, RetryPolicy, SocialClient, SocialError,
    TweetRecord, UserRecord,
};

const BUDGET_META: &str = "budget.json";
const SEED_META: &str = "seed";
const STATS_META: &str = "stats.json";
const JOURNAL: &str = "journal.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Poll,
    Fetch,
    Extract,
    Hydrate,
    Register,
    Topoff,
    Stats,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("stage is a string"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Social(#[from] SocialError),
    #[error(transparent)]
    Feed(#[from] FeedError),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data directory {path} is not writable: {source}")]
    DataDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot open archive: {0}")]
    Archive(#[source] ArchiveError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    /// Process exit code: 1 for configuration/startup problems, 2 for a
    /// failed stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Stage { .. } => 2,
            _ => 1,
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(StageError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

/// Where pages and social data come from.
pub struct Sources {
    pub transport: Arc<dyn Transport>,
    pub backend: Arc<dyn Backend>,
}

impl Sources {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, ConfigError> {
        let transport: Arc<dyn Transport> = match config.mode {
            Mode::Fixture => Arc::new(FixtureTransport::new(config.http_fixture_dir())),
            Mode::Live => Arc::new(LiveTransport::new(&config.fetch.user_agent, config.fetch.timeout())),
        };
        let backend: Arc<dyn Backend> = match config.social.backend {
            BackendKind::Mock => {
                let path = config.mock_users_path();
                Arc::new(MockBackend::from_file(&path).map_err(|e| {
                    ConfigError::Invalid(format!("cannot load mock users from {}: {e}", path.display()))
                })?)
            }
            BackendKind::Http => {
                let timeout = StdDuration::from_secs(config.social.timeout_secs);
                let bearer = match (
                    std::env::var(BEARER_ENV),
                    std::env::var(KEY_ENV),
                    std::env::var(SECRET_ENV),
                ) {
                    (Ok(token), _, _) => Some(token),
                    (_, Ok(key), Ok(secret)) => Some(
                        obtain_bearer(&config.social.base_url, &key, &secret, timeout)
                            .map_err(|e| ConfigError::Invalid(format!("credential exchange failed: {e}")))?,
                    ),
                    _ if config.mode == Mode::Live => {
                        return Err(ConfigError::Invalid(format!(
                            "live mode with the http backend needs {BEARER_ENV}, or {KEY_ENV} and {SECRET_ENV}"
                        )))
                    }
                    _ => None,
                };
                Arc::new(HttpBackend::new(&config.social.base_url, bearer, timeout))
            }
        };
        Ok(Self { transport, backend })
    }
}

/// Create `dir` if needed and prove it accepts writes.
pub fn ensure_writable(dir: &Path) -> Result<(), PipelineError> {
    let err = |source| PipelineError::DataDir {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".nt-write-probe");
    fs::write(&probe, b"ok").map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

// ------------------------------------------------------------------ reports

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PollReport {
    pub feeds_polled: usize,
    pub feed_errors: Vec<String>,
    pub items_seen: usize,
    pub items_skipped: usize,
    pub items_new: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    pub attempted: usize,
    pub publisher_pages: usize,
    pub youtube_pages: usize,
    pub failed: usize,
    pub articles_new: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HydrateReport {
    pub requested: usize,
    pub hydrated: usize,
    pub missing: usize,
    pub users_new: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RegisterReport {
    pub tracked_users: usize,
    pub full_fetches_completed: usize,
    pub full_fetches_pending: usize,
    pub tweets_fetched: usize,
    pub unavailable: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TopoffReport {
    pub batch: usize,
    pub users_topped_off: usize,
    pub tweets_new: usize,
    pub deferred: usize,
    pub failed: usize,
    /// No request budget was left, so the window was skipped.
    pub skipped_budget: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StatsSummary {
    pub articles: u64,
    pub embedded_articles: u64,
    pub embedded_pct: u64,
    pub total_embeds: u64,
    pub unique_tweets: u64,
    pub unique_users: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub poll: PollReport,
    pub fetch: FetchReport,
    pub extract: ExtractReport,
    pub hydrate: HydrateReport,
    pub register: RegisterReport,
    pub topoff: TopoffReport,
    pub stats: StatsSummary,
    /// Records added by this run, per kind.
    pub new_records: BTreeMap<String, usize>,
}

impl RunReport {
    pub fn total_new_records(&self) -> usize {
        self.new_records.values().sum()
    }
}

// ----------------------------------------------------------------- pipeline

pub struct Pipeline {
    config: PipelineConfig,
    archive: Archive,
    clock: SharedClock,
    fetcher: Fetcher,
    client: SocialClient,
    scheduler: Mutex<Scheduler>,
    exec: Execution,
}

impl Pipeline {
    /// Check the data directory, then build sources from the config.
    pub fn open(config: PipelineConfig, clock: SharedClock, exec: Execution) -> Result<Self, PipelineError> {
        config.validate()?;
        ensure_writable(&config.data_dir)?;
        let sources = Sources::from_config(&config)?;
        Self::with_sources(config, clock, sources, exec)
    }

    pub fn with_sources(
        config: PipelineConfig,
        clock: SharedClock,
        sources: Sources,
        exec: Execution,
    ) -> Result<Self, PipelineError> {
        ensure_writable(&config.data_dir)?;
        let archive = Archive::open(&config.data_dir).map_err(PipelineError::Archive)?;
        let now = clock.now();
        let mut budget = match archive.read_meta(BUDGET_META).map_err(PipelineError::Archive)? {
            Some(bytes) => serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| RateBudget::new(config.social.requests_per_window, config.social.window_secs, now)),
            None => RateBudget::new(config.social.requests_per_window, config.social.window_secs, now),
        };
        budget.requests_per_window = config.social.requests_per_window;
        budget.window_secs = config.social.window_secs.max(1);
        if budget.window_start > now {
            // clock moved backwards (e.g. a replay); start afresh
            budget = RateBudget::new(config.social.requests_per_window, config.social.window_secs, now);
        }
        let client = SocialClient::new(
            sources.backend,
            clock.clone(),
            budget,
            RetryPolicy {
                attempts: config.social.retry_attempts,
                initial_backoff_ms: config.social.retry_initial_backoff_ms,
            },
        );
        let scheduler = Scheduler::load_or_new(&archive, &config.scheduler).map_err(PipelineError::Archive)?;
        if archive.read_meta(SEED_META).map_err(PipelineError::Archive)?.is_none() {
            archive
                .write_meta(SEED_META, format!("{}\n", scheduler.seed()).as_bytes())
                .map_err(PipelineError::Archive)?;
        }
        let fetcher = Fetcher::new(sources.transport, clock.clone(), config.fetch.clone());
        Ok(Self {
            config,
            archive,
            clock,
            fetcher,
            client,
            scheduler: Mutex::new(scheduler),
            exec,
        })
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn client(&self) -> &SocialClient {
        &self.client
    }

    pub fn scheduler(&self) -> std::sync::MutexGuard<'_, Scheduler> {
        self.scheduler.lock().expect("scheduler poisoned")
    }

    /// Persist scheduler and budget state and flush the logs.
    pub fn checkpoint(&self) -> Result<(), ArchiveError> {
        self.scheduler().save(&self.archive)?;
        self.archive
            .write_meta(BUDGET_META, &serde_json::to_vec_pretty(&self.client.budget())?)?;
        self.archive.sync()
    }

    // ---------------------------------------------------------------- poll

    pub fn poll(&self) -> Result<PollReport, PipelineError> {
        let now = self.clock.now();
        let sections: Vec<Section> = self.config.feeds.sections.keys().copied().collect();
        let responses = par::map_bounded(self.exec, self.config.fetch.parallelism, &sections, |s| {
            let url = self.config.feeds.build_feed_url(*s);
            let parsed = Url::parse(&url).map_err(|e| e.to_string())?;
            let res = self.fetcher_transport_get(&parsed)?;
            if !res.is_success() {
                return Err(format!("HTTP {}", res.status));
            }
            parse_feed(&res.body, *s, now).map_err(|e| e.to_string())
        });
        let mut report = PollReport::default();
        for (section, parsed) in sections.iter().zip(responses) {
            report.feeds_polled += 1;
            match parsed {
                Ok(feed) => {
                    report.items_seen += feed.items.len();
                    report.items_skipped += feed.skipped;
                    let fresh = feed::ingest_items(&self.archive, &feed.items, &self.config.fetch.tracker_blocklist)
                        .map_err(|e| stage_err(Stage::Poll)(e.into()))?;
                    report.items_new += fresh.len();
                }
                Err(e) => {
                    tracing::warn!(section = %section, error = %e, "feed poll failed");
                    report.feed_errors.push(format!("{}: {e}", section.code()));
                }
            }
        }
        tracing::info!(new = report.items_new, seen = report.items_seen, "poll done");
        Ok(report)
    }

    fn fetcher_transport_get(&self, url: &Url) -> Result<crate::fetch::HttpResponse, String> {
        self.fetcher.transport().get(url).map_err(|e| e.to_string())
    }

    // --------------------------------------------------------------- fetch

    pub fn fetch(&self) -> Result<FetchReport, PipelineError> {
        let items: Vec<feed::FeedItem> = feed::pending_items(&self.archive).into_iter().map(|q| q.item).collect();
        let results: Vec<FetchResult> = self
            .fetcher
            .fetch_all(&self.archive, &items, self.exec)
            .map_err(|e| stage_err(Stage::Fetch)(e.into()))?;
        let mut report = FetchReport {
            attempted: items.len(),
            ..Default::default()
        };
        for r in &results {
            match r.article.classification {
                Classification::PublisherPage => report.publisher_pages += 1,
                Classification::YoutubePage => report.youtube_pages += 1,
                Classification::FetchFailed => report.failed += 1,
            }
            if r.outcome == UpsertOutcome::Inserted {
                report.articles_new += 1;
            }
        }
        tracing::info!(attempted = report.attempted, new = report.articles_new, "fetch done");
        Ok(report)
    }

    // ------------------------------------------------------------- extract

    pub fn extract(&self) -> Result<ExtractReport, PipelineError> {
        let report = embed::extract_all(&self.archive, self.exec).map_err(|e| stage_err(Stage::Extract)(e.into()))?;
        tracing::info!(found = report.embeds_found, new = report.embeds_new, "extract done");
        Ok(report)
    }

    // ------------------------------------------------------------- hydrate

    /// Hydrate every embedded tweet id not yet in the archive, then make
    /// sure each embedded author has a user record.
    pub fn hydrate(&self) -> Result<HydrateReport, PipelineError> {
        let err = stage_err(Stage::Hydrate);
        let embeds: Vec<Embed> = self.archive.scan(|e: &Embed| e.tweet_id.is_some()).collect();
        let wanted: Vec<String> = embeds
            .iter()
            .filter_map(|e| e.tweet_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|id| !self.archive.contains(RecordKind::Tweet, id))
            .collect();
        let mut report = HydrateReport {
            requested: wanted.len(),
            ..Default::default()
        };
        match self.client.hydrate_tweets(&self.archive, &wanted) {
            Ok(h) => {
                report.hydrated = h.tweets.len();
                report.missing = h.missing.len();
            }
            Err(SocialError::BudgetExhausted { retry_at }) => {
                tracing::warn!(%retry_at, "hydration paused: request budget exhausted");
                report.budget_exhausted = true;
            }
            Err(e) => return Err(err(e.into())),
        }
        report.users_new = self.ensure_users(&embeds).map_err(|e| err(e.into()))?;
        tracing::info!(hydrated = report.hydrated, users_new = report.users_new, "hydrate done");
        Ok(report)
    }

    fn ensure_users(&self, embeds: &[Embed]) -> Result<usize, ArchiveError> {
        let published: HashMap<String, DateTime<Utc>> = self
            .archive
            .scan_all::<Article>()
            .map(|a| (a.id, a.published_at))
            .collect();
        let mut first_seen: BTreeMap<String, (String, DateTime<Utc>)> = BTreeMap::new();
        for e in embeds {
            let Some(record) = e.tweet_id.as_ref().and_then(|id| self.archive.get::<TweetRecord>(id)) else {
                continue;
            };
            let Some(tweet) = record.tweet() else { continue };
            let Some(at) = published.get(&e.article_id).copied() else {
                continue;
            };
            let entry = first_seen
                .entry(tweet.user_id.clone())
                .or_insert_with(|| (tweet.handle.clone(), at));
            entry.1 = entry.1.min(at);
        }
        let mut created = 0;
        for (user_id, (handle, at)) in first_seen {
            if !self.archive.contains(RecordKind::User, &user_id) {
                self.archive.upsert(&UserRecord::new(&user_id, &handle, at))?;
                created += 1;
            }
        }
        Ok(created)
    }

    // ------------------------------------------------------------ register

    /// Track every known user and run (or resume) their initial full
    /// timeline fetch.
    pub fn register(&self) -> Result<RegisterReport, PipelineError> {
        let err = stage_err(Stage::Register);
        let users: Vec<UserRecord> = self.archive.scan_all().collect();
        {
            let mut sched = self.scheduler();
            for u in &users {
                sched.register_user(&u.user_id);
            }
        }
        let mut report = RegisterReport {
            tracked_users: users.len(),
            ..Default::default()
        };
        for mut user in users.into_iter().filter(|u| u.full_fetch != FullFetch::Done) {
            if report.budget_exhausted {
                report.full_fetches_pending += 1;
                continue;
            }
            match self.client.initial_fetch(&self.archive, &mut user) {
                Ok(n) => {
                    report.tweets_fetched += n;
                    self.archive.upsert(&user).map_err(|e| err(e.into()))?;
                    if user.full_fetch == FullFetch::Done {
                        report.full_fetches_completed += 1;
                    } else {
                        report.full_fetches_pending += 1;
                        report.budget_exhausted = true;
                    }
                }
                Err(SocialError::BudgetExhausted { .. }) => {
                    report.full_fetches_pending += 1;
                    report.budget_exhausted = true;
                }
                Err(SocialError::UserUnavailable(id)) => {
                    tracing::warn!(user = %id, "timeline unavailable");
                    report.unavailable += 1;
                }
                Err(e @ (SocialError::Archive(_) | SocialError::BadResponse(_))) => return Err(err(e.into())),
                Err(e) => {
                    tracing::warn!(user = %user.user_id, error = %e, "initial fetch failed; will retry");
                    report.full_fetches_pending += 1;
                }
            }
        }
        tracing::info!(
            completed = report.full_fetches_completed,
            pending = report.full_fetches_pending,
            "register done"
        );
        Ok(report)
    }

    // -------------------------------------------------------------- topoff

    /// Top off one scheduling window's batch of users.
    pub fn topoff(&self) -> Result<TopoffReport, PipelineError> {
        let err = stage_err(Stage::Topoff);
        let mut report = TopoffReport::default();
        let remaining = self.client.remaining_budget() as usize;
        if remaining == 0 {
            tracing::info!("top-off skipped: request budget exhausted");
            report.skipped_budget = true;
            return Ok(report);
        }
        let batch = self
            .scheduler()
            .next_batch(self.config.scheduler.batch_size.min(remaining));
        report.batch = batch.len();
        let users: Vec<UserRecord> = batch
            .iter()
            .filter_map(|id| self.archive.get::<UserRecord>(id))
            .filter(|u| u.full_fetch == FullFetch::Done)
            .collect();
        let results = par::map_bounded(self.exec, self.config.fetch.parallelism, &users, |u| {
            let mut u = u.clone();
            let r = self.client.topoff_timeline(&self.archive, &mut u);
            (u, r)
        });
        for (user, result) in results {
            match result {
                Ok(tweets) => {
                    report.users_topped_off += 1;
                    report.tweets_new += tweets.len();
                    self.archive.upsert(&user).map_err(|e| err(e.into()))?;
                }
                Err(SocialError::BudgetExhausted { .. } | SocialError::UserBusy(_)) => report.deferred += 1,
                Err(e @ SocialError::Archive(_)) => return Err(err(e.into())),
                Err(e) => {
                    tracing::warn!(user = %user.user_id, error = %e, "top-off failed");
                    report.failed += 1;
                }
            }
        }
        self.refresh_rates();
        self.scheduler().save(&self.archive).map_err(|e| err(e.into()))?;
        tracing::info!(
            users = report.users_topped_off,
            tweets = report.tweets_new,
            "top-off done"
        );
        Ok(report)
    }

    /// Recent activity (tweets/day over the last week) for the priority policy.
    fn refresh_rates(&self) {
        let now = self.clock.now();
        let since = now - Duration::days(7);
        let mut counts: HashMap<String, u64> = HashMap::new();
        for r in self.archive.scan_all::<TweetRecord>() {
            if let Some(t) = r.tweet() {
                if t.created_at > since && t.created_at <= now {
                    *counts.entry(t.user_id.clone()).or_default() += 1;
                }
            }
        }
        let mut sched = self.scheduler();
        let tracked: Vec<String> = sched.tracked().iter().cloned().collect();
        for u in tracked {
            let n = counts.get(&u).copied().unwrap_or(0);
            sched.set_recent_rate(&u, n as f64 / 7.0);
        }
    }

    // --------------------------------------------------------------- stats

    pub fn report(&self) -> Report {
        analytics::compute(&Dataset::load(&self.archive), &self.config.analytics, self.exec)
    }

    pub fn stats(&self) -> Result<StatsSummary, PipelineError> {
        let report = self.report();
        self.archive
            .write_meta(
                STATS_META,
                &serde_json::to_vec_pretty(&report)
                    .map_err(|e| stage_err(Stage::Stats)(ArchiveError::from(e).into()))?,
            )
            .map_err(|e| stage_err(Stage::Stats)(e.into()))?;
        let all = report
            .sections
            .last()
            .cloned()
            .unwrap_or_else(|| analytics::SectionStats::from_counts("A", 0, 0, 0, 0, 0));
        Ok(StatsSummary {
            articles: all.articles,
            embedded_articles: all.embedded_articles,
            embedded_pct: all.embedded_pct,
            total_embeds: all.total_embeds,
            unique_tweets: all.unique_tweets,
            unique_users: all.unique_users,
        })
    }

    // ------------------------------------------------------------ run once

    pub fn run_once(&self) -> Result<RunReport, PipelineError> {
        let started_at = self.clock.now();
        let before = self.archive.counts();
        let poll = self.poll()?;
        let fetch = self.fetch()?;
        let extract = self.extract()?;
        let hydrate = self.hydrate()?;
        let register = self.register()?;
        let topoff = self.topoff()?;
        let stats = self.stats()?;
        self.checkpoint().map_err(|e| stage_err(Stage::Stats)(e.into()))?;
        let after = self.archive.counts();
        let new_records = after
            .iter()
            .map(|(k, n)| {
                (
                    k.name().to_string(),
                    n.saturating_sub(before.get(k).copied().unwrap_or(0)),
                )
            })
            .collect();
        Ok(RunReport {
            started_at,
            finished_at: self.clock.now(),
            poll,
            fetch,
            extract,
            hydrate,
            register,
            topoff,
            stats,
            new_records,
        })
    }

    /// The ingest half of a cycle: everything up to the top-off batch.
    fn ingest_cycle(&self) -> Result<serde_json::Value, PipelineError> {
        let poll = self.poll()?;
        let fetch = self.fetch()?;
        let extract = self.extract()?;
        let hydrate = self.hydrate()?;
        let register = self.register()?;
        let stats = self.stats()?;
        Ok(json!({
            "poll": poll, "fetch": fetch, "extract": extract,
            "hydrate": hydrate, "register": register, "stats": stats,
        }))
    }

    // -------------------------------------------------------------- daemon

    fn journal(&self, event: &str, detail: serde_json::Value) {
        let line = json!({"at": self.clock.now(), "event": event, "detail": detail});
        let path = self.archive.root().join("meta").join(JOURNAL);
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            tracing::warn!(error = %e, "cannot append to journal");
        }
    }

    /// Journal entries written so far, oldest first.
    pub fn journal_entries(&self) -> Vec<serde_json::Value> {
        let path = self.archive.root().join("meta").join(JOURNAL);
        fs::read_to_string(path)
            .unwrap_or_default()
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect()
    }

    /// Loop the ingest cycle every `feeds.poll_interval_secs` and a top-off
    /// batch every `scheduler.window_secs` until `stop` is raised or the
    /// clock reaches `until`. Stage failures are journaled and retried on
    /// the next interval.
    pub fn run_daemon(&self, stop: &AtomicBool, until: Option<DateTime<Utc>>) -> Result<DaemonSummary, PipelineError> {
        let poll_every = Duration::seconds(self.config.feeds.poll_interval_secs as i64);
        let window_every = Duration::seconds(i64::from(self.config.scheduler.window_secs));
        let start = self.clock.now();
        let mut next_cycle = start;
        let mut next_window = start;
        let mut summary = DaemonSummary::default();
        self.journal("start", json!({"pid": std::process::id()}));
        loop {
            let now = self.clock.now();
            if stop.load(Ordering::SeqCst) || until.is_some_and(|u| now >= u) {
                break;
            }
            if now >= next_cycle {
                match self.ingest_cycle() {
                    Ok(detail) => {
                        summary.poll_cycles += 1;
                        self.journal("poll_cycle", detail);
                    }
                    Err(e) => {
                        summary.failures += 1;
                        tracing::error!(error = %e, "cycle failed; retrying next interval");
                        self.journal("stage_failed", json!({"error": e.to_string()}));
                    }
                }
                while next_cycle <= now {
                    next_cycle += poll_every;
                }
            }
            if stop.load(Ordering::SeqCst) {
                break;
            }
            if now >= next_window {
                match self.topoff() {
                    Ok(r) if r.skipped_budget => {
                        summary.topoff_skipped += 1;
                        self.journal("topoff_skipped", json!({"reason": "budget"}));
                    }
                    Ok(r) => {
                        summary.topoff_windows += 1;
                        self.journal("topoff_window", serde_json::to_value(r).unwrap_or_default());
                    }
                    Err(e) => {
                        summary.failures += 1;
                        tracing::error!(error = %e, "top-off failed; retrying next window");
                        self.journal("stage_failed", json!({"error": e.to_string()}));
                    }
                }
                while next_window <= now {
                    next_window += window_every;
                }
            }
            if let Err(e) = self.checkpoint() {
                tracing::error!(error = %e, "checkpoint failed");
            }
            let mut wake = next_cycle.min(next_window);
            if let Some(u) = until {
                wake = wake.min(u);
            }
            self.sleep_until(wake, stop);
        }
        self.checkpoint().map_err(PipelineError::Archive)?;
        self.journal("stop", serde_json::to_value(summary).unwrap_or_default());
        Ok(summary)
    }

    fn sleep_until(&self, deadline: DateTime<Utc>, stop: &AtomicBool) {
        const SLICE: StdDuration = StdDuration::from_millis(250);
        while !stop.load(Ordering::SeqCst) {
            let left = deadline - self.clock.now();
            let Ok(left) = left.to_std() else { break };
            if left.is_zero() {
                break;
            }
            self.clock.sleep(left.min(SLICE));
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DaemonSummary {
    pub poll_cycles: u64,
    pub topoff_windows: u64,
    pub topoff_skipped: u64,
    pub failures: u64,
}
