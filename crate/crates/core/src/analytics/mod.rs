//! Descriptive statistics over an archive snapshot: embeds by platform,
//! embed rates by section, most-embedded users and top domains.
//!
//! Counting conventions:
//! * Only articles classified as publisher pages are counted. Video pages
//!   and failed fetches never had publisher markup to embed anything in.
//! * Section, user and domain figures count tweet embeds; the platform
//!   table counts every platform.
//! * Section percentages are integers, halves rounded up; the platform and
//!   domain tables use two decimals.
//! * A user's embedding period runs from the earliest to the latest publish
//!   time of the in-scope articles embedding them, widened to 24 h when it
//!   is a single instant. Tweets produced in the period (retweets included)
//!   are counted from the archived timeline, so effectiveness is only
//!   reported for users whose full timeline fetch has completed.
//! * Every ranking breaks ties by handle, ascending.

mod ratio;
mod render;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::archive::Archive;
use crate::embed::{Embed, Platform};
use crate::feed::Section;
use crate::fetch::{Article, Classification};
use crate::par::{self, Execution};
use crate::social::{FullFetch, Tweet, TweetRecord, UserRecord};

pub use ratio::{percent, percent_2dp, thousands, Hundredths, Ratio};
pub use render::{render, Format, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    pub top_users: usize,
    pub top_domains: usize,
    /// Domains with fewer articles are left out of the average-embeds ranking.
    pub min_domain_articles: u64,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            top_users: 5,
            top_domains: 10,
            min_domain_articles: 10,
        }
    }
}

/// Which articles a statistic ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Section(Section),
    All,
}

impl Scope {
    /// The column order of the per-user table.
    pub const USER_TABLE: [Scope; 9] = [
        Scope::Section(Section::World),
        Scope::Section(Section::Business),
        Scope::Section(Section::Headlines),
        Scope::Section(Section::Health),
        Scope::Section(Section::Technology),
        Scope::Section(Section::Sports),
        Scope::Section(Section::Nation),
        Scope::Section(Section::Entertainment),
        Scope::All,
    ];

    pub fn code(self) -> String {
        match self {
            Scope::Section(s) => s.code().to_string(),
            Scope::All => "A".into(),
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scope::Section(s) => s.token(),
            Scope::All => "ALL",
        }
    }

    pub fn contains(self, article: &Article) -> bool {
        match self {
            Scope::Section(s) => article.section == s,
            Scope::All => true,
        }
    }
}

/// Everything analytics reads, loaded once from a snapshot.
#[derive(Debug, Default)]
pub struct Dataset {
    articles: Vec<Article>,
    embeds: HashMap<String, Vec<Embed>>,
    tweets: HashMap<String, Tweet>,
    users: HashMap<String, UserRecord>,
    /// Sorted creation times of each user's archived tweets.
    timelines: HashMap<String, Vec<DateTime<Utc>>>,
}

impl Dataset {
    pub fn load(archive: &Archive) -> Self {
        Self::from_parts(
            archive.scan_all::<Article>().collect(),
            archive.scan_all::<Embed>().collect(),
            archive
                .scan_all::<TweetRecord>()
                .filter_map(|r| r.tweet().cloned())
                .collect(),
            archive.scan_all::<UserRecord>().collect(),
        )
    }

    pub fn from_parts(articles: Vec<Article>, embeds: Vec<Embed>, tweets: Vec<Tweet>, users: Vec<UserRecord>) -> Self {
        let mut articles: Vec<Article> = articles
            .into_iter()
            .filter(|a| a.classification == Classification::PublisherPage)
            .collect();
        articles.sort_by(|a, b| a.id.cmp(&b.id));
        let kept: BTreeSet<&str> = articles.iter().map(|a| a.id.as_str()).collect();
        let mut by_article: HashMap<String, Vec<Embed>> = HashMap::new();
        for e in embeds.into_iter().filter(|e| kept.contains(e.article_id.as_str())) {
            by_article.entry(e.article_id.clone()).or_default().push(e);
        }
        for list in by_article.values_mut() {
            list.sort_by_key(|e| e.position);
        }
        let mut timelines: HashMap<String, Vec<DateTime<Utc>>> = HashMap::new();
        for t in &tweets {
            timelines.entry(t.user_id.clone()).or_default().push(t.created_at);
        }
        for times in timelines.values_mut() {
            times.sort();
        }
        Self {
            articles,
            embeds: by_article,
            tweets: tweets.into_iter().map(|t| (t.id.clone(), t)).collect(),
            users: users.into_iter().map(|u| (u.user_id.clone(), u)).collect(),
            timelines,
        }
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    fn embeds_of(&self, article: &Article) -> &[Embed] {
        self.embeds.get(&article.id).map(Vec::as_slice).unwrap_or(&[])
    }

    fn tweet_embeds<'a>(&'a self, article: &Article) -> impl Iterator<Item = &'a Embed> + 'a {
        self.embeds_of(article)
            .iter()
            .filter(|e| e.platform == Platform::Twitter)
    }

    fn in_scope(&self, scope: Scope) -> impl Iterator<Item = &Article> {
        self.articles.iter().filter(move |a| scope.contains(a))
    }

    fn produced_between(&self, user_id: &str, start: DateTime<Utc>, end: DateTime<Utc>) -> u64 {
        let Some(times) = self.timelines.get(user_id) else {
            return 0;
        };
        let lo = times.partition_point(|t| *t < start);
        let hi = times.partition_point(|t| *t <= end);
        (hi - lo) as u64
    }
}

// ---------------------------------------------------------------- sections

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SectionStats {
    pub section: String,
    pub articles: u64,
    pub embedded_articles: u64,
    pub embedded_pct: u64,
    pub total_embeds: u64,
    pub unique_tweets: u64,
    pub unique_tweet_pct: u64,
    pub unique_users: u64,
}

impl SectionStats {
    pub fn from_counts(
        section: &str,
        articles: u64,
        embedded_articles: u64,
        total_embeds: u64,
        unique_tweets: u64,
        unique_users: u64,
    ) -> Self {
        Self {
            section: section.to_string(),
            articles,
            embedded_articles,
            embedded_pct: percent(embedded_articles, articles),
            total_embeds,
            unique_tweets,
            unique_tweet_pct: percent(unique_tweets, total_embeds),
            unique_users,
        }
    }
}

pub fn section_row(ds: &Dataset, scope: Scope) -> SectionStats {
    let (mut articles, mut embedded, mut embeds) = (0, 0, 0);
    let mut tweets = BTreeSet::new();
    let mut users = BTreeSet::new();
    for a in ds.in_scope(scope) {
        articles += 1;
        let mut any = false;
        for e in ds.tweet_embeds(a) {
            any = true;
            embeds += 1;
            if let Some(id) = &e.tweet_id {
                tweets.insert(id.as_str());
                if let Some(t) = ds.tweets.get(id) {
                    users.insert(t.user_id.as_str());
                }
            }
        }
        embedded += u64::from(any);
    }
    SectionStats::from_counts(
        &scope.code(),
        articles,
        embedded,
        embeds,
        tweets.len() as u64,
        users.len() as u64,
    )
}

/// One row per section, then the all-sections row.
pub fn section_stats(ds: &Dataset, exec: Execution) -> Vec<SectionStats> {
    let scopes: Vec<Scope> = Section::ALL
        .into_iter()
        .map(Scope::Section)
        .chain([Scope::All])
        .collect();
    par::map(exec, &scopes, |s| section_row(ds, *s))
}

// --------------------------------------------------------------- platforms

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlatformStats {
    pub platform: String,
    pub articles_with: u64,
    pub pct_articles: Hundredths,
    pub embeddings: u64,
    pub pct_embeddings: Hundredths,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlatformTable {
    pub rows: Vec<PlatformStats>,
    pub total: PlatformStats,
}

impl PlatformTable {
    /// Builds the table from `(platform, articles_with, embeddings)`. The total
    /// row is the column sum, so an article embedding two platforms counts
    /// twice in it.
    pub fn from_counts(counts: &[(Platform, u64, u64)]) -> Self {
        let articles: u64 = counts.iter().map(|c| c.1).sum();
        let embeddings: u64 = counts.iter().map(|c| c.2).sum();
        let row = |name: &str, a: u64, e: u64| PlatformStats {
            platform: name.to_string(),
            articles_with: a,
            pct_articles: percent_2dp(a, articles),
            embeddings: e,
            pct_embeddings: percent_2dp(e, embeddings),
        };
        Self {
            rows: counts.iter().map(|&(p, a, e)| row(p.display_name(), a, e)).collect(),
            total: row("Total", articles, embeddings),
        }
    }
}

pub fn platform_stats(ds: &Dataset) -> PlatformTable {
    let mut counts: BTreeMap<Platform, (u64, u64)> = BTreeMap::new();
    for a in &ds.articles {
        let mut seen = BTreeSet::new();
        for e in ds.embeds_of(a) {
            let c = counts.entry(e.platform).or_default();
            c.1 += 1;
            if seen.insert(e.platform) {
                c.0 += 1;
            }
        }
    }
    let rows: Vec<(Platform, u64, u64)> = Platform::ALL
        .into_iter()
        .map(|p| {
            let (a, e) = counts.get(&p).copied().unwrap_or_default();
            (p, a, e)
        })
        .collect();
    PlatformTable::from_counts(&rows)
}

// ------------------------------------------------------------------- users

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub handle: String,
    pub total_embeds: u64,
    pub unique_embedded_tweets: u64,
    pub unique_fraction: Ratio,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    /// `None` until the user's timeline has been fully fetched.
    pub tweets_produced_in_window: Option<u64>,
    pub effectiveness: Option<Ratio>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserRankings {
    pub scope: String,
    pub by_total_embeds: Vec<UserMetrics>,
    pub by_unique_fraction: Vec<UserMetrics>,
    pub by_effectiveness: Vec<UserMetrics>,
}

/// Metrics for every embedded (and hydrated) user in scope, sorted by user id.
pub fn user_metrics(ds: &Dataset, scope: Scope) -> Vec<UserMetrics> {
    struct Acc<'a> {
        embeds: u64,
        tweets: BTreeSet<&'a str>,
        first: DateTime<Utc>,
        last: DateTime<Utc>,
    }
    let mut by_user: BTreeMap<&str, Acc> = BTreeMap::new();
    for a in ds.in_scope(scope) {
        for e in ds.tweet_embeds(a) {
            let Some(tweet) = e.tweet_id.as_ref().and_then(|id| ds.tweets.get(id)) else {
                continue;
            };
            let acc = by_user.entry(tweet.user_id.as_str()).or_insert(Acc {
                embeds: 0,
                tweets: BTreeSet::new(),
                first: a.published_at,
                last: a.published_at,
            });
            acc.embeds += 1;
            acc.tweets.insert(tweet.id.as_str());
            acc.first = acc.first.min(a.published_at);
            acc.last = acc.last.max(a.published_at);
        }
    }
    by_user
        .into_iter()
        .map(|(user_id, acc)| {
            let record = ds.users.get(user_id);
            let handle = match record {
                Some(u) => u.handle.clone(),
                None => ds.tweets[*acc.tweets.first().expect("at least one tweet")]
                    .handle
                    .clone(),
            };
            let end = if acc.last == acc.first {
                acc.first + Duration::hours(24)
            } else {
                acc.last
            };
            let unique = acc.tweets.len() as u64;
            let produced = record
                .filter(|u| u.full_fetch == FullFetch::Done)
                .map(|_| ds.produced_between(user_id, acc.first, end));
            UserMetrics {
                user_id: user_id.to_string(),
                handle,
                total_embeds: acc.embeds,
                unique_embedded_tweets: unique,
                unique_fraction: Ratio::new(unique, acc.embeds),
                window_start: acc.first,
                window_end: end,
                tweets_produced_in_window: produced,
                effectiveness: produced.map(|p| Ratio::new(unique, p.max(1))),
            }
        })
        .collect()
}

fn by_handle(a: &UserMetrics, b: &UserMetrics) -> std::cmp::Ordering {
    a.handle.cmp(&b.handle).then_with(|| a.user_id.cmp(&b.user_id))
}

pub fn rank_users(scope: Scope, metrics: &[UserMetrics], k: usize) -> UserRankings {
    let mut by_total = metrics.to_vec();
    by_total.sort_by(|a, b| b.total_embeds.cmp(&a.total_embeds).then_with(|| by_handle(a, b)));
    by_total.truncate(k);

    let mut by_fraction: Vec<UserMetrics> = metrics.iter().filter(|m| m.total_embeds >= 2).cloned().collect();
    by_fraction.sort_by(|a, b| a.unique_fraction.cmp(&b.unique_fraction).then_with(|| by_handle(a, b)));
    by_fraction.truncate(k);

    let mut by_eff: Vec<UserMetrics> = metrics.iter().filter(|m| m.effectiveness.is_some()).cloned().collect();
    by_eff.sort_by(|a, b| b.effectiveness.cmp(&a.effectiveness).then_with(|| by_handle(a, b)));
    by_eff.truncate(k);

    UserRankings {
        scope: scope.title().to_string(),
        by_total_embeds: by_total,
        by_unique_fraction: by_fraction,
        by_effectiveness: by_eff,
    }
}

/// Top-`k` users per section and overall, in the user table's column order.
pub fn user_rankings(ds: &Dataset, k: usize, exec: Execution) -> Vec<UserRankings> {
    par::map(exec, &Scope::USER_TABLE, |s| rank_users(*s, &user_metrics(ds, *s), k))
}

// ----------------------------------------------------------------- domains

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainStats {
    pub domain: String,
    pub article_count: u64,
    pub tweet_embeds: u64,
    pub avg_embeds_per_article: Hundredths,
    #[serde(skip)]
    avg: Ratio,
}

impl DomainStats {
    pub fn new(domain: &str, article_count: u64, tweet_embeds: u64) -> Self {
        let avg = Ratio::new(tweet_embeds, article_count);
        Self {
            domain: domain.to_string(),
            article_count,
            tweet_embeds,
            avg_embeds_per_article: avg.hundredths(),
            avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainRankings {
    pub by_count: Vec<DomainStats>,
    pub by_avg: Vec<DomainStats>,
}

pub fn rank_domains(stats: Vec<DomainStats>, min_articles: u64, k: usize) -> DomainRankings {
    let mut by_count = stats.clone();
    by_count.sort_by(|a, b| {
        b.article_count
            .cmp(&a.article_count)
            .then_with(|| a.domain.cmp(&b.domain))
    });
    by_count.truncate(k);
    let mut by_avg: Vec<DomainStats> = stats.into_iter().filter(|d| d.article_count >= min_articles).collect();
    by_avg.sort_by(|a, b| b.avg.cmp(&a.avg).then_with(|| a.domain.cmp(&b.domain)));
    by_avg.truncate(k);
    DomainRankings { by_count, by_avg }
}

pub fn domain_stats(ds: &Dataset, min_articles: u64, k: usize) -> DomainRankings {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for a in &ds.articles {
        let c = counts.entry(a.domain.as_str()).or_default();
        c.0 += 1;
        c.1 += ds.tweet_embeds(a).count() as u64;
    }
    let stats = counts
        .into_iter()
        .map(|(d, (n, e))| DomainStats::new(d, n, e))
        .collect();
    rank_domains(stats, min_articles, k)
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub platforms: PlatformTable,
    pub sections: Vec<SectionStats>,
    pub users: Vec<UserRankings>,
    pub domains: DomainRankings,
}

pub fn compute(ds: &Dataset, config: &AnalyticsConfig, exec: Execution) -> Report {
    let ((platforms, sections), (users, domains)) = par::join(
        exec,
        || par::join(exec, || platform_stats(ds), || section_stats(ds, exec)),
        || {
            par::join(
                exec,
                || user_rankings(ds, config.top_users, exec),
                || domain_stats(ds, config.min_domain_articles, config.top_domains),
            )
        },
    );
    Report {
        platforms,
        sections,
        users,
        domains,
    }
}

#[cfg(test)]
mod tests;
