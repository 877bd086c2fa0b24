//! Article download: redirect resolution, YouTube classification and raw
//! HTML archival.

pub mod canonical;
mod politeness;
pub mod transport;

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::archive::{Archive, ArchiveError, Merge, Record, RecordKind, UpsertOutcome};
use crate::clock::SharedClock;
use crate::digest::short_id;
use crate::feed::{FeedItem, QueueItem, QueueState, Section};
use crate::par::{self, Execution};

pub use canonical::{canonicalize_url, domain_of, InvalidUrl, TrackerBlocklist};
pub use politeness::HostGates;
pub use transport::{FixtureTransport, HttpResponse, LiveTransport, Transport, TransportError};

/// Hosts whose pages are video pages rather than publisher articles.
pub const YOUTUBE_HOSTS: [&str; 4] = ["youtube.com", "www.youtube.com", "youtu.be", "m.youtube.com"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    PublisherPage,
    YoutubePage,
    FetchFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub canonical_url: String,
    pub domain: String,
    pub section: Section,
    /// Publish time reported by the feed item.
    pub published_at: DateTime<Utc>,
    pub fetched_at: DateTime<Utc>,
    /// 0 when no response was received.
    pub http_status: u16,
    pub html_ref: Option<String>,
    pub classification: Classification,
    /// The feed link this article was reached from.
    pub feed_link: String,
}

impl Article {
    pub fn id_for(canonical_url: &str) -> String {
        short_id(canonical_url)
    }
}

impl Record for Article {
    const KIND: RecordKind = RecordKind::Article;

    fn key(&self) -> String {
        self.id.clone()
    }

    fn validate(&self) -> Result<(), String> {
        if self.id != Article::id_for(&self.canonical_url) {
            return Err("id is not the hash of canonical_url".into());
        }
        let ok_status = (200..300).contains(&self.http_status);
        if self.html_ref.is_some() != ok_status {
            return Err(format!("html_ref presence disagrees with status {}", self.http_status));
        }
        if (self.classification == Classification::FetchFailed) == ok_status {
            return Err("fetch_failed must coincide with a non-2xx status".into());
        }
        if self.classification != Classification::FetchFailed {
            let url = Url::parse(&self.canonical_url).map_err(|e| e.to_string())?;
            let yt = classify_article(&url) == Classification::YoutubePage;
            if yt != (self.classification == Classification::YoutubePage) {
                return Err("classification disagrees with final host".into());
            }
        }
        if self.domain != self.domain.to_ascii_lowercase()
            || self.domain.starts_with("www.")
            || self.domain.contains(':')
        {
            return Err(format!("domain {:?} is not normalized", self.domain));
        }
        Ok(())
    }

    /// First write wins: a later item resolving to the same final URL does
    /// not overwrite the section or fetch metadata.
    fn merge(_: &Self, _: &Self) -> Merge {
        Merge::Keep
    }
}

pub fn classify_article(final_url: &Url) -> Classification {
    let host = final_url.host_str().unwrap_or("").to_ascii_lowercase();
    if YOUTUBE_HOSTS.contains(&host.as_str()) {
        Classification::YoutubePage
    } else {
        Classification::PublisherPage
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FetchConfig {
    pub max_redirects: usize,
    pub timeout_secs: u64,
    pub per_host_delay_ms: u64,
    pub parallelism: usize,
    pub user_agent: String,
    pub tracker_blocklist: TrackerBlocklist,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            max_redirects: 10,
            timeout_secs: 30,
            per_host_delay_ms: 1000,
            parallelism: 8,
            user_agent: concat!("newstweet-crawler/", env!("CARGO_PKG_VERSION"), " (research crawler)").into(),
            tracker_blocklist: TrackerBlocklist::default(),
        }
    }
}

impl FetchConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// Network-side result of following a link, before anything is archived.
#[derive(Debug, Clone)]
pub struct Resolution {
    pub final_url: Url,
    pub status: u16,
    pub body: Option<Vec<u8>>,
    pub hops: usize,
}

#[derive(Debug, Clone)]
pub struct FetchResult {
    pub article: Article,
    pub outcome: UpsertOutcome,
}

pub struct Fetcher {
    transport: Arc<dyn Transport>,
    gates: HostGates,
    clock: SharedClock,
    config: FetchConfig,
}

impl Fetcher {
    pub fn new(transport: Arc<dyn Transport>, clock: SharedClock, config: FetchConfig) -> Self {
        Self {
            gates: HostGates::new(clock.clone(), Duration::from_millis(config.per_host_delay_ms)),
            transport,
            clock,
            config,
        }
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn config(&self) -> &FetchConfig {
        &self.config
    }

    /// Follow `link` through up to `max_redirects` redirects. Every URL
    /// requested, including redirect targets, is canonicalized first.
    pub fn resolve(&self, link: &str) -> Resolution {
        let start = canonicalize_url(link, &self.config.tracker_blocklist)
            .ok()
            .or_else(|| Url::parse(link).ok());
        let Some(mut url) = start else {
            return Resolution {
                final_url: Url::parse("invalid:").expect("static url"),
                status: 0,
                body: None,
                hops: 0,
            };
        };
        let mut hops = 0;
        loop {
            let host = url.host_str().unwrap_or("").to_string();
            let response = self.gates.with_host(&host, || self.transport.get(&url));
            let response = match response {
                Ok(r) => r,
                Err(e) => {
                    tracing::debug!(%url, error = %e, "fetch failed");
                    return Resolution {
                        final_url: url,
                        status: 0,
                        body: None,
                        hops,
                    };
                }
            };
            if response.is_redirect() {
                let next = response.header("location").and_then(|loc| url.join(loc).ok());
                if let Some(next) = next.filter(|_| hops < self.config.max_redirects) {
                    hops += 1;
                    url = canonicalize_url(next.as_str(), &self.config.tracker_blocklist).unwrap_or(next);
                    continue;
                }
            }
            let status = response.status;
            let ok = response.is_success();
            return Resolution {
                final_url: url,
                status,
                body: ok.then_some(response.body),
                hops,
            };
        }
    }

    /// Archive the outcome of `resolution` for `item` and mark its queue
    /// entry done.
    pub fn commit(
        &self,
        archive: &Archive,
        item: &FeedItem,
        resolution: Resolution,
    ) -> Result<FetchResult, ArchiveError> {
        let canonical = canonicalize_url(resolution.final_url.as_str(), &self.config.tracker_blocklist)
            .unwrap_or_else(|_| resolution.final_url.clone());
        let canonical_url = if canonical.cannot_be_a_base() {
            item.link.clone()
        } else {
            canonical.to_string()
        };
        let id = Article::id_for(&canonical_url);
        let (classification, html_ref) = match resolution.body {
            Some(body) => {
                let (digest, _) = archive.put_blob(&body)?;
                (classify_article(&canonical), Some(digest))
            }
            None => (Classification::FetchFailed, None),
        };
        let article = Article {
            id: id.clone(),
            domain: Url::parse(&canonical_url).map(|u| domain_of(&u)).unwrap_or_default(),
            canonical_url,
            section: item.section,
            published_at: item.published_at,
            fetched_at: self.clock.now(),
            http_status: resolution.status,
            html_ref,
            classification,
            feed_link: item.link.clone(),
        };
        let outcome = archive.upsert(&article)?;
        let article = if outcome == UpsertOutcome::Unchanged {
            archive.get::<Article>(&id).unwrap_or(article)
        } else {
            article
        };
        if let Ok(link) = canonicalize_url(&item.link, &self.config.tracker_blocklist) {
            archive.upsert(&QueueItem {
                canonical_link: link.to_string(),
                item: item.clone(),
                state: QueueState::Done {
                    article_id: article.id.clone(),
                },
            })?;
        }
        Ok(FetchResult { article, outcome })
    }

    pub fn resolve_and_fetch(&self, archive: &Archive, item: &FeedItem) -> Result<FetchResult, ArchiveError> {
        let resolution = self.resolve(&item.link);
        self.commit(archive, item, resolution)
    }

    /// Resolve all `items` concurrently (bounded by `parallelism` and the
    /// per-host gates), then commit in input order so that the first item
    /// reaching a given final URL owns the article record.
    pub fn fetch_all(
        &self,
        archive: &Archive,
        items: &[FeedItem],
        exec: Execution,
    ) -> Result<Vec<FetchResult>, ArchiveError> {
        let resolutions = par::map_bounded(exec, self.config.parallelism, items, |item| self.resolve(&item.link));
        items
            .iter()
            .zip(resolutions)
            .map(|(item, res)| self.commit(archive, item, res))
            .collect()
    }
}
