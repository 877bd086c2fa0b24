//! Section feeds: URL construction, tolerant RSS parsing and first-seen
//! filtering of article links.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::archive::{Archive, ArchiveError, Record, RecordKind};
use crate::fetch::canonical::{canonicalize_url, TrackerBlocklist};
use crate::markup::{decode_entities, Mode, Token, Tokenizer};

/// One of the aggregator's eight news sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Section {
    #[serde(rename = "B")]
    Business,
    #[serde(rename = "E")]
    Entertainment,
    #[serde(rename = "H")]
    Health,
    #[serde(rename = "N")]
    Nation,
    #[serde(rename = "S")]
    Sports,
    #[serde(rename = "T")]
    Technology,
    #[serde(rename = "W")]
    World,
    #[serde(rename = "X")]
    Headlines,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::Business,
        Section::Entertainment,
        Section::Health,
        Section::Nation,
        Section::Sports,
        Section::Technology,
        Section::World,
        Section::Headlines,
    ];

    pub fn code(self) -> char {
        match self {
            Section::Business => 'B',
            Section::Entertainment => 'E',
            Section::Health => 'H',
            Section::Nation => 'N',
            Section::Sports => 'S',
            Section::Technology => 'T',
            Section::World => 'W',
            Section::Headlines => 'X',
        }
    }

    /// Default feed-path token.
    pub fn token(self) -> &'static str {
        match self {
            Section::Business => "BUSINESS",
            Section::Entertainment => "ENTERTAINMENT",
            Section::Health => "HEALTH",
            Section::Nation => "NATION",
            Section::Sports => "SPORTS",
            Section::Technology => "TECHNOLOGY",
            Section::World => "WORLD",
            Section::Headlines => "HEADLINES",
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == c.to_ascii_uppercase())
    }

    pub fn from_token(t: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.token().eq_ignore_ascii_case(t))
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_code(c),
            _ => Self::from_token(s),
        }
        .ok_or_else(|| format!("unknown section {s:?}"))
    }
}

/// Where and how often section feeds are polled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedConfig {
    pub base_url: String,
    /// Path appended to `base_url`; `{section}` is replaced by the token.
    pub path_archetype: String,
    /// Sections to poll and their path tokens.
    pub sections: BTreeMap<Section, String>,
    pub poll_interval_secs: u64,
}

impl Default for FeedConfig {
    fn default() -> Self {
        Self {
            base_url: "https://news.google.com".into(),
            path_archetype: "/news/rss/headlines/section/topic/{section}".into(),
            sections: Section::ALL.into_iter().map(|s| (s, s.token().to_string())).collect(),
            poll_interval_secs: 300,
        }
    }
}

impl FeedConfig {
    pub fn with_base(base_url: &str) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn token(&self, section: Section) -> &str {
        self.sections
            .get(&section)
            .map(String::as_str)
            .unwrap_or_else(|| section.token())
    }

    pub fn build_feed_url(&self, section: Section) -> String {
        format!(
            "{}{}",
            self.base_url.trim_end_matches('/'),
            self.path_archetype.replace("{section}", self.token(section))
        )
    }
}

/// Feed URL for `section` under the default aggregator base.
pub fn build_feed_url(section: Section) -> String {
    FeedConfig::default().build_feed_url(section)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedItem {
    pub link: String,
    pub title: String,
    pub published_at: DateTime<Utc>,
    pub section: Section,
    pub seen_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedFeed {
    pub items: Vec<FeedItem>,
    /// `<item>`s dropped for lacking a usable link.
    pub skipped: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error("malformed feed: no parseable channel (first failure at byte {offset})")]
    MalformedFeed { offset: usize },
    #[error("archive unavailable: {0}")]
    ArchiveUnavailable(#[from] ArchiveError),
}

#[derive(Default)]
struct PartialItem {
    link: Option<String>,
    title: Option<String>,
    pub_date: Option<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Link,
    Title,
    PubDate,
}

/// Parse an RSS 2.0 document. Items are recovered independently: a broken
/// item is closed at the next `<item>` or `</channel>` boundary and kept if
/// it has a valid absolute link.
pub fn parse_feed(xml: &[u8], section: Section, seen_at: DateTime<Utc>) -> Result<ParsedFeed, FeedError> {
    let text = String::from_utf8_lossy(xml);
    let mut out = ParsedFeed::default();
    let mut in_channel = false;
    let mut saw_channel = false;
    let mut first_failure: Option<usize> = None;
    let mut current: Option<PartialItem> = None;
    let mut field: Option<(Field, String)> = None;

    let finish = |item: PartialItem, out: &mut ParsedFeed| {
        let link = item
            .link
            .map(|l| l.trim().to_string())
            .filter(|l| Url::parse(l).is_ok_and(|u| u.has_host()));
        match link {
            Some(link) => {
                let published_at = item.pub_date.as_deref().and_then(parse_date).unwrap_or(seen_at);
                out.items.push(FeedItem {
                    link,
                    title: item.title.unwrap_or_default().trim().to_string(),
                    published_at,
                    section,
                    seen_at,
                });
            }
            None => out.skipped += 1,
        }
    };

    for token in Tokenizer::new(&text, Mode::Xml) {
        match token {
            Token::Start(tag) if tag.name == "channel" => {
                in_channel = true;
                saw_channel = true;
            }
            Token::End { name, .. } if name == "channel" => {
                if let Some(item) = current.take() {
                    finish(item, &mut out);
                }
                in_channel = false;
            }
            Token::Start(tag) if in_channel && tag.name == "item" => {
                if let Some(item) = current.take() {
                    finish(item, &mut out);
                }
                field = None;
                if tag.self_closing {
                    out.skipped += 1;
                } else {
                    current = Some(PartialItem::default());
                }
            }
            Token::End { name, .. } if name == "item" => {
                if let Some(item) = current.take() {
                    finish(item, &mut out);
                }
                field = None;
            }
            Token::Start(tag) if current.is_some() => {
                field = match tag.name.as_str() {
                    "link" if !tag.self_closing => Some((Field::Link, String::new())),
                    "title" if !tag.self_closing => Some((Field::Title, String::new())),
                    "pubdate" if !tag.self_closing => Some((Field::PubDate, String::new())),
                    _ => None,
                };
            }
            Token::Text { raw, .. } => {
                if let Some((_, buf)) = field.as_mut() {
                    buf.push_str(&decode_entities(raw));
                }
            }
            Token::CData { raw, .. } => {
                if let Some((_, buf)) = field.as_mut() {
                    buf.push_str(raw);
                }
            }
            Token::End { name, .. } => {
                if let (Some((f, buf)), Some(item)) = (field.take(), current.as_mut()) {
                    let matches = matches!(
                        (f, name.as_str()),
                        (Field::Link, "link") | (Field::Title, "title") | (Field::PubDate, "pubdate")
                    );
                    if matches {
                        let slot = match f {
                            Field::Link => &mut item.link,
                            Field::Title => &mut item.title,
                            Field::PubDate => &mut item.pub_date,
                        };
                        slot.get_or_insert(buf);
                    }
                }
            }
            Token::Invalid { offset } => {
                first_failure.get_or_insert(offset);
            }
            _ => {}
        }
    }
    if let Some(item) = current.take() {
        finish(item, &mut out);
    }
    if !saw_channel {
        let offset = first_failure.unwrap_or_else(|| {
            text.char_indices()
                .find(|(_, c)| !c.is_whitespace() && *c != '\u{feff}')
                .filter(|(_, c)| *c != '<')
                .map_or(text.len(), |(i, _)| i)
        });
        return Err(FeedError::MalformedFeed { offset });
    }
    Ok(out)
}

fn parse_date(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    DateTime::parse_from_rfc2822(s)
        .or_else(|_| DateTime::parse_from_rfc3339(s))
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

/// Fetch-queue entry, keyed by the canonical feed link. Its presence is what
/// makes a link "seen".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub canonical_link: String,
    pub item: FeedItem,
    pub state: QueueState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum QueueState {
    Pending,
    Done { article_id: String },
}

impl Record for QueueItem {
    const KIND: RecordKind = RecordKind::QueueItem;

    fn key(&self) -> String {
        self.canonical_link.clone()
    }

    fn validate(&self) -> Result<(), String> {
        if self.item.link.is_empty() {
            return Err("empty link".into());
        }
        Ok(())
    }
}

/// Record `items` in the fetch queue and return the ones whose canonical
/// link had never been seen. Links that fail to canonicalize are dropped.
pub fn ingest_items(
    archive: &Archive,
    items: &[FeedItem],
    blocklist: &TrackerBlocklist,
) -> Result<Vec<FeedItem>, FeedError> {
    let mut fresh = Vec::new();
    let mut batch_seen = HashSet::new();
    for item in items {
        let Ok(canonical) = canonicalize_url(&item.link, blocklist) else {
            tracing::debug!(link = %item.link, "dropping uncanonicalizable feed link");
            continue;
        };
        let key = canonical.to_string();
        if !batch_seen.insert(key.clone()) || archive.contains(RecordKind::QueueItem, &key) {
            continue;
        }
        archive.upsert(&QueueItem {
            canonical_link: key,
            item: item.clone(),
            state: QueueState::Pending,
        })?;
        fresh.push(item.clone());
    }
    Ok(fresh)
}

/// Queue entries not yet fetched, in key order.
pub fn pending_items(archive: &Archive) -> Vec<QueueItem> {
    archive.scan(|q: &QueueItem| q.state == QueueState::Pending).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 5, 15, 12, 0, 0).unwrap()
    }

    fn rss(items: &str) -> String {
        format!(
            r#"<?xml version="1.0" encoding="UTF-8"?><rss version="2.0"><channel><title>Top</title>{items}</channel></rss>"#
        )
    }

    fn item(link: &str, title: &str) -> String {
        format!(
            "<item><title>{title}</title><link>{link}</link><pubDate>Wed, 15 May 2019 10:00:00 GMT</pubDate></item>"
        )
    }

    #[test]
    fn section_codes_and_tokens_are_bijective() {
        let codes: HashSet<char> = Section::ALL.iter().map(|s| s.code()).collect();
        let tokens: HashSet<&str> = Section::ALL.iter().map(|s| s.token()).collect();
        assert_eq!(codes.len(), 8);
        assert_eq!(tokens.len(), 8);
        for s in Section::ALL {
            assert_eq!(Section::from_code(s.code()), Some(s));
            assert_eq!(Section::from_token(s.token()), Some(s));
            assert_eq!(s.to_string().parse::<Section>().unwrap(), s);
        }
    }

    #[test]
    fn feed_urls() {
        assert_eq!(
            build_feed_url(Section::Sports),
            "https://news.google.com/news/rss/headlines/section/topic/SPORTS"
        );
        assert_eq!(
            build_feed_url(Section::Headlines),
            "https://news.google.com/news/rss/headlines/section/topic/HEADLINES"
        );
        assert_eq!(
            FeedConfig::with_base("http://localhost:9999").build_feed_url(Section::Business),
            "http://localhost:9999/news/rss/headlines/section/topic/BUSINESS"
        );
    }

    #[test]
    fn three_items_in_order() {
        let doc = rss(&[
            item("https://a.com/1", "one"),
            item("https://b.com/2", "two &amp; more"),
            item("https://c.com/3", "three"),
        ]
        .concat());
        let parsed = parse_feed(doc.as_bytes(), Section::World, now()).unwrap();
        let links: Vec<_> = parsed.items.iter().map(|i| i.link.as_str()).collect();
        assert_eq!(links, ["https://a.com/1", "https://b.com/2", "https://c.com/3"]);
        assert_eq!(parsed.items[1].title, "two & more");
        assert_eq!(parsed.items[0].section, Section::World);
        assert_eq!(
            parsed.items[0].published_at,
            Utc.with_ymd_and_hms(2019, 5, 15, 10, 0, 0).unwrap()
        );
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn empty_channel() {
        let parsed = parse_feed(rss("").as_bytes(), Section::World, now()).unwrap();
        assert!(parsed.items.is_empty());
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn item_without_link_is_skipped_and_counted() {
        let doc = rss(&format!(
            "{}<item><title>no link</title></item>",
            item("https://a.com/1", "one")
        ));
        let parsed = parse_feed(doc.as_bytes(), Section::Health, now()).unwrap();
        assert_eq!(parsed.items.len(), 1);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn recovers_at_next_item_boundary() {
        // first item never closes its <link> or <item>
        let doc = rss(&format!(
            "<item><title>broken<link>https://a.com/1{}",
            item("https://b.com/2", "fine")
        ));
        let parsed = parse_feed(doc.as_bytes(), Section::Nation, now()).unwrap();
        assert_eq!(parsed.items.len(), 1);
        assert_eq!(parsed.items[0].link, "https://b.com/2");
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn cdata_links_and_missing_dates() {
        let doc = rss("<item><link><![CDATA[https://a.com/x?a=1&b=2]]></link></item>");
        let parsed = parse_feed(doc.as_bytes(), Section::Nation, now()).unwrap();
        assert_eq!(parsed.items[0].link, "https://a.com/x?a=1&b=2");
        assert_eq!(parsed.items[0].published_at, now());
    }

    #[test]
    fn relative_links_are_skipped() {
        let doc = rss("<item><link>/local/path</link></item><item><link>   </link></item>");
        let parsed = parse_feed(doc.as_bytes(), Section::Nation, now()).unwrap();
        assert!(parsed.items.is_empty());
        assert_eq!(parsed.skipped, 2);
    }

    #[test]
    fn no_channel_is_malformed_with_offset() {
        let err = parse_feed(b"  this is not xml", Section::World, now()).unwrap_err();
        assert!(matches!(err, FeedError::MalformedFeed { offset: 2 }));
        let err = parse_feed(b"<rss><broken <item>", Section::World, now()).unwrap_err();
        assert!(matches!(err, FeedError::MalformedFeed { offset: 5 }));
        let err = parse_feed(b"<html><body></body></html>", Section::World, now()).unwrap_err();
        assert!(matches!(err, FeedError::MalformedFeed { offset: 26 }));
    }

    fn feed_item(link: &str) -> FeedItem {
        FeedItem {
            link: link.into(),
            title: String::new(),
            published_at: now(),
            section: Section::Sports,
            seen_at: now(),
        }
    }

    #[test]
    fn ingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let bl = TrackerBlocklist::default();
        let items: Vec<_> = (0..5).map(|i| feed_item(&format!("https://a.com/{i}"))).collect();
        assert_eq!(ingest_items(&archive, &items, &bl).unwrap().len(), 5);
        assert_eq!(ingest_items(&archive, &items, &bl).unwrap().len(), 0);
        assert_eq!(pending_items(&archive).len(), 5);
    }

    #[test]
    fn ingest_collapses_shared_canonicals() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path()).unwrap();
        let items = vec![
            feed_item("https://a.com/1"),
            feed_item("https://A.com/1?utm_source=rss#top"),
            feed_item("https://a.com/2"),
            feed_item("https://a.com/3?b=2&a=1"),
            feed_item("https://a.com/3?a=1&b=2"),
        ];
        let oracle: HashSet<String> = items
            .iter()
            .map(|i| {
                canonicalize_url(&i.link, &TrackerBlocklist::default())
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(oracle.len(), 3);
        let fresh = ingest_items(&archive, &items, &TrackerBlocklist::default()).unwrap();
        assert_eq!(fresh.len(), oracle.len());
        assert_eq!(fresh[0].link, "https://a.com/1");
    }

    proptest! {
        #[test]
        fn ingest_matches_set_oracle(
            first in prop::collection::vec((0u8..12, any::<bool>()), 0..30),
            second in prop::collection::vec((0u8..12, any::<bool>()), 0..30),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let archive = Archive::open(dir.path()).unwrap();
            let bl = TrackerBlocklist::default();
            let to_items = |v: &[(u8, bool)]| -> Vec<FeedItem> {
                v.iter().map(|(n, tracked)| {
                    let suffix = if *tracked { "?utm_campaign=x" } else { "" };
                    feed_item(&format!("https://news.example/{n}{suffix}"))
                }).collect()
            };
            let canon = |items: &[FeedItem]| -> HashSet<String> {
                items.iter().map(|i| canonicalize_url(&i.link, &bl).unwrap().to_string()).collect()
            };
            let a = to_items(&first);
            let b = to_items(&second);
            let seen = canon(&a);
            prop_assert_eq!(ingest_items(&archive, &a, &bl).unwrap().len(), seen.len());
            let expected = canon(&b).difference(&seen).count();
            prop_assert_eq!(ingest_items(&archive, &b, &bl).unwrap().len(), expected);
        }

        #[test]
        fn parse_never_yields_empty_links(body in "[ -~]{0,200}") {
            let doc = rss(&format!("<item><link>{body}</link></item><item>{body}</item>"));
            if let Ok(parsed) = parse_feed(doc.as_bytes(), Section::Sports, now()) {
                prop_assert!(parsed.items.iter().all(|i| !i.link.trim().is_empty()));
            }
        }
    }
}
