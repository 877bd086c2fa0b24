//! Planted fixture corpus: recorded feed/redirect/article responses plus a
//! mock social backend, generated deterministically with known totals.
//!
//! Layout written under the fixture directory:
//!
//! ```text
//! http/<sha256(url)>.http   recorded responses (see FixtureTransport)
//! mock_users.json           mock social backend contents
//! nt.toml                   a config pointing at the above
//! ```
//!
//! The corpus covers all eight sections and all six platforms, includes
//! video-site links, a dead link, a duplicated feed item, a deleted tweet,
//! heavily re-embedded tweets and an account whose embedded tweets predate
//! the articles embedding them (effectiveness above one).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::embed::Platform;
use crate::feed::{FeedConfig, Section};
use crate::fetch::{canonicalize_url, FixtureTransport, HttpResponse, TrackerBlocklist};
use crate::social::{MockTweet, MockUser, MockUsers};

/// Feed items per section, in `Section::ALL` order.
const ITEMS_PER_SECTION: [usize; 8] = [8, 7, 8, 6, 7, 8, 7, 6];
/// Global item indices whose link resolves to a video page.
const VIDEO_ITEMS: [usize; 4] = [5, 19, 33, 47];
/// Global item index whose publisher page is gone.
const DEAD_ITEM: usize = 26;
const DOMAINS: [&str; 6] = [
    "dailyherald.example",
    "metrotimes.example",
    "coastpost.example",
    "valleynews.example",
    "thewire.example",
    "northgazette.example",
];
const USERS: usize = 24;
/// Mock users that are never embedded.
const UNEMBEDDED_USERS: usize = 2;
const LAGGING_HANDLE: &str = "late_embedder";
const LAGGING_UNIQUE: usize = 14;
/// Articles (by publisher-page ordinal) embedding the lagging account.
const LAGGING_ARTICLES: [usize; 5] = [20, 22, 24, 27, 29];
const SEED: u64 = 0x0070_6c61_6e74_6564;

/// What the corpus contains, for asserting pipeline results against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Planted {
    /// Distinct feed items (the duplicate is not counted).
    pub feed_items: usize,
    /// Items as listed in the feeds, duplicate included.
    pub feed_listings: usize,
    pub items_by_section: BTreeMap<Section, usize>,
    pub video_links: usize,
    pub dead_links: usize,
    pub publisher_pages: usize,
    pub publisher_pages_by_section: BTreeMap<Section, usize>,
    /// Publisher pages with at least one embed of any platform.
    pub embed_pages: usize,
    pub embeds: BTreeMap<Platform, usize>,
    pub total_embeds: usize,
    pub tweet_embeds: usize,
    /// Distinct embedded tweet ids, the deleted one included.
    pub embedded_tweet_ids: usize,
    pub deleted_tweets: usize,
    pub mock_users: usize,
    /// Distinct authors of hydratable embedded tweets.
    pub embedded_users: usize,
    /// Sum of all mock timeline lengths.
    pub mock_tweets: usize,
    pub lagging_handle: String,
    pub lagging_unique: usize,
    pub lagging_produced_in_window: usize,
    /// Clock time to run the pipeline at.
    pub run_at: DateTime<Utc>,
}

impl Planted {
    pub fn video_share(&self) -> f64 {
        self.video_links as f64 / self.feed_items as f64
    }
}

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 9, 2, 0, 0, 0).unwrap()
}

pub fn run_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 9, 10, 0, 0, 0).unwrap()
}

/// A config that runs the pipeline over the corpus in `fixture_dir`,
/// archiving into `data_dir`.
pub fn fixture_config(fixture_dir: &Path, data_dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig {
        data_dir: data_dir.to_path_buf(),
        fixture_dir: fixture_dir.to_path_buf(),
        ..PipelineConfig::default()
    };
    c.fetch.per_host_delay_ms = 0;
    c.social.retry_initial_backoff_ms = 0;
    c
}

struct MockTimeline {
    user_id: String,
    handle: String,
    tweets: Vec<MockTweet>,
}

fn tweet_id(at: DateTime<Utc>, user: usize) -> String {
    // increasing with time, unique per user
    (1_100_000_000_000_000_000u64 + at.timestamp() as u64 * 1000 + user as u64).to_string()
}

fn record(dir: &Path, url: &str, response: &HttpResponse) -> io::Result<()> {
    FixtureTransport::record(dir, url, response)
}

fn canonical(url: &str) -> String {
    canonicalize_url(url, &TrackerBlocklist::default())
        .map(|u| u.to_string())
        .unwrap_or_else(|_| url.to_string())
}

struct Item {
    section: Section,
    ordinal: usize,
    link: String,
    title: String,
    published_at: DateTime<Utc>,
}

/// Write the corpus into `fixture_dir` and return what was planted.
pub fn write_corpus(fixture_dir: &Path) -> io::Result<Planted> {
    let http = fixture_dir.join("http");
    std::fs::create_dir_all(&http)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let feeds = FeedConfig::default();

    // --- feed items
    let mut items = Vec::new();
    for (s, &n) in Section::ALL.iter().zip(ITEMS_PER_SECTION.iter()) {
        for k in 0..n {
            let g = items.len();
            items.push(Item {
                section: *s,
                ordinal: g,
                link: format!("https://news.google.com/articles/{}{:02}?oc=5", s.code(), k),
                title: format!("{} story {k}", s.token().to_lowercase()),
                published_at: base_time() + Duration::minutes(97 * g as i64),
            });
        }
    }

    // --- mock accounts and timelines
    let mut timelines: Vec<MockTimeline> = (0..USERS)
        .map(|u| MockTimeline {
            user_id: (3_000_000_000u64 + u as u64 * 7919).to_string(),
            handle: if u == 0 {
                LAGGING_HANDLE.to_string()
            } else {
                format!("acct_{u:02}")
            },
            tweets: Vec::new(),
        })
        .collect();
    let aug = Utc.with_ymd_and_hms(2019, 8, 1, 0, 0, 0).unwrap();
    for (u, tl) in timelines.iter_mut().enumerate().skip(1) {
        let n = 20 + (u * 7) % 25;
        let step = Duration::minutes(rng.random_range(300..900));
        for k in 0..n {
            let at = aug + Duration::minutes(u as i64 * 13) + step * k as i32;
            tl.tweets.push(mock_tweet(
                &tweet_id(at, u),
                at,
                &format!("update {k} from {}", tl.handle),
            ));
        }
    }

    // --- publisher pages, embed plans
    let publisher: Vec<&Item> = items
        .iter()
        .filter(|i| !VIDEO_ITEMS.contains(&i.ordinal) && i.ordinal != DEAD_ITEM)
        .collect();
    let window: Vec<DateTime<Utc>> = LAGGING_ARTICLES.iter().map(|&p| publisher[p].published_at).collect();
    let (w_start, w_end) = (window[0], *window.last().unwrap());
    {
        let tl = &mut timelines[0];
        for k in 0..LAGGING_UNIQUE {
            let at = aug + Duration::hours(20 * k as i64);
            tl.tweets
                .push(mock_tweet(&tweet_id(at, 0), at, &format!("old news {k}")));
        }
        let inside = w_start + (w_end - w_start) / 2;
        tl.tweets
            .push(mock_tweet(&tweet_id(inside, 0), inside, "the only one in the period"));
        for k in 1..=2 {
            let at = w_end + Duration::days(k);
            tl.tweets
                .push(mock_tweet(&tweet_id(at, 0), at, &format!("afterwards {k}")));
        }
    }
    let deleted_id = tweet_id(aug - Duration::days(3), 99);

    let mut plans: Vec<Vec<Planned>> = vec![Vec::new(); publisher.len()];
    // lagging account: 14 distinct tweets spread over five articles
    for (k, t) in timelines[0].tweets[..LAGGING_UNIQUE].iter().enumerate() {
        plans[LAGGING_ARTICLES[k % LAGGING_ARTICLES.len()]].push(Planned::Tweet(t.id.clone(), LAGGING_HANDLE.into()));
    }
    // one tweet embedded over and over
    let viral = timelines[1].tweets[3].id.clone();
    for p in [1, 4, 9, 15, 31, 40] {
        plans[p].push(Planned::Tweet(viral.clone(), timelines[1].handle.clone()));
    }
    plans[12].push(Planned::Tweet(deleted_id.clone(), "gone_account".into()));
    // everyone else: a few embeds each on random pages
    let embeddable = USERS - UNEMBEDDED_USERS;
    for tl in timelines.iter().take(embeddable).skip(1) {
        let picks = rng.random_range(1..=3);
        for _ in 0..picks {
            let t = tl.tweets.choose(&mut rng).expect("non-empty timeline");
            let p = loop {
                let p = rng.random_range(0..publisher.len());
                if !LAGGING_ARTICLES.contains(&p) {
                    break p;
                }
            };
            plans[p].push(Planned::Tweet(t.id.clone(), tl.handle.clone()));
        }
    }
    // the other platforms, two pages each at least
    let others: [(usize, Platform); 14] = [
        (2, Platform::Youtube),
        (7, Platform::Youtube),
        (31, Platform::Youtube),
        (3, Platform::Instagram),
        (9, Platform::Instagram),
        (44, Platform::Instagram),
        (6, Platform::Facebook),
        (17, Platform::Facebook),
        (11, Platform::Reddit),
        (35, Platform::Reddit),
        (14, Platform::Tiktok),
        (38, Platform::Tiktok),
        (40, Platform::Tiktok),
        (50, Platform::Facebook),
    ];
    for (k, (p, platform)) in others.iter().enumerate() {
        plans[*p].push(Planned::Other(*platform, k));
    }
    for plan in plans.iter_mut() {
        plan.shuffle(&mut rng);
    }

    // --- record responses
    let mut by_section: BTreeMap<Section, Vec<&Item>> = BTreeMap::new();
    for i in &items {
        by_section.entry(i.section).or_default().push(i);
    }
    let mut feed_listings = 0;
    for (section, list) in &by_section {
        let mut xml = String::from(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<rss version=\"2.0\"><channel>\n<title>Top stories</title>\n",
        );
        let mut listed: Vec<&Item> = list.clone();
        if *section == Section::Sports {
            listed.push(list[0]);
        }
        for i in &listed {
            let _ = writeln!(
                xml,
                "<item><title>{}</title><link>{}</link><pubDate>{}</pubDate><source url=\"https://{}\">Source</source></item>",
                i.title,
                i.link,
                i.published_at.to_rfc2822(),
                DOMAINS[i.ordinal % DOMAINS.len()]
            );
        }
        xml.push_str("</channel></rss>\n");
        feed_listings += listed.len();
        record(
            &http,
            url::Url::parse(&feeds.build_feed_url(*section))
                .expect("feed url")
                .as_str(),
            &HttpResponse::new(200, xml).with_header("Content-Type", "application/rss+xml"),
        )?;
    }

    let mut embeds: BTreeMap<Platform, usize> = Platform::ALL.iter().map(|p| (*p, 0)).collect();
    let mut embed_pages = 0;
    let mut tweet_ids = BTreeSet::new();
    let mut pub_by_section: BTreeMap<Section, usize> = BTreeMap::new();
    let mut p_index = 0;
    for i in &items {
        let domain = DOMAINS[i.ordinal % DOMAINS.len()];
        let target = if VIDEO_ITEMS.contains(&i.ordinal) {
            format!("https://www.youtube.com/watch?v=vid{:04}&feature=share", i.ordinal)
        } else {
            format!(
                "https://{domain}/{}/story-{}.html?utm_source=aggregator&utm_medium=rss",
                i.section.token().to_lowercase(),
                i.ordinal
            )
        };
        record(&http, &canonical(&i.link), &HttpResponse::redirect(302, &target))?;
        let landing = canonical(&target);
        if VIDEO_ITEMS.contains(&i.ordinal) {
            record(
                &http,
                &landing,
                &HttpResponse::new(200, format!("<html><title>video {}</title></html>", i.ordinal)),
            )?;
        } else if i.ordinal == DEAD_ITEM {
            record(&http, &landing, &HttpResponse::new(404, "<html>not found</html>"))?;
        } else {
            let plan = &plans[p_index];
            p_index += 1;
            *pub_by_section.entry(i.section).or_default() += 1;
            if !plan.is_empty() {
                embed_pages += 1;
            }
            for e in plan {
                match e {
                    Planned::Tweet(id, _) => {
                        *embeds.get_mut(&Platform::Twitter).unwrap() += 1;
                        tweet_ids.insert(id.clone());
                    }
                    Planned::Other(p, _) => *embeds.get_mut(p).unwrap() += 1,
                }
            }
            let html = article_html(&i.title, domain, plan);
            record(
                &http,
                &landing,
                &HttpResponse::new(200, html).with_header("Content-Type", "text/html; charset=utf-8"),
            )?;
        }
    }

    // --- mock backend
    let mut mock = MockUsers::default();
    let mut embedded_users = BTreeSet::new();
    for tl in &timelines {
        if tl.tweets.iter().any(|t| tweet_ids.contains(&t.id)) {
            embedded_users.insert(tl.user_id.clone());
        }
        mock.users.insert(
            tl.user_id.clone(),
            MockUser {
                screen_name: tl.handle.clone(),
                tweets: tl.tweets.clone(),
            },
        );
    }
    mock.deleted.insert(deleted_id);
    mock.save(&fixture_dir.join("mock_users.json"))?;

    let config = fixture_config(Path::new("."), Path::new("data"));
    std::fs::write(fixture_dir.join("nt.toml"), config.to_toml())?;

    let tweet_embeds = embeds[&Platform::Twitter];
    Ok(Planted {
        feed_items: items.len(),
        feed_listings,
        items_by_section: by_section.iter().map(|(s, l)| (*s, l.len())).collect(),
        video_links: VIDEO_ITEMS.len(),
        dead_links: 1,
        publisher_pages: publisher.len(),
        publisher_pages_by_section: pub_by_section,
        embed_pages,
        total_embeds: embeds.values().sum(),
        embeds,
        tweet_embeds,
        embedded_tweet_ids: tweet_ids.len(),
        deleted_tweets: 1,
        mock_users: USERS,
        embedded_users: embedded_users.len(),
        mock_tweets: timelines.iter().map(|t| t.tweets.len()).sum(),
        lagging_handle: LAGGING_HANDLE.into(),
        lagging_unique: LAGGING_UNIQUE,
        lagging_produced_in_window: 1,
        run_at: run_time(),
    })
}

/// Default location of the corpus relative to a working directory.
pub fn default_fixture_dir() -> PathBuf {
    PathBuf::from("fixture")
}

#[derive(Debug, Clone)]
enum Planned {
    Tweet(String, String),
    Other(Platform, usize),
}

fn mock_tweet(id: &str, at: DateTime<Utc>, text: &str) -> MockTweet {
    MockTweet {
        id: id.into(),
        created_at: at,
        text: text.into(),
        retweet_of: None,
        geo: None,
    }
}

fn article_html(title: &str, domain: &str, plan: &[Planned]) -> String {
    let mut h = format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title>\
         <script>var cfg = {{\"embed\": \"<blockquote class='twitter-tweet'>\"}};</script></head>\n<body><article>\n\
         <h1>{title}</h1>\n<p>Reporting from {domain}. Follow us \
         <a href=\"https://twitter.com/{}/status/1\">on Twitter</a>.</p>\n",
        domain.split('.').next().unwrap_or("desk")
    );
    for (k, e) in plan.iter().enumerate() {
        let _ = writeln!(h, "<p>Paragraph {k} of the story.</p>");
        match e {
            Planned::Tweet(id, handle) => {
                let _ = writeln!(
                    h,
                    "<blockquote class=\"twitter-tweet\" data-lang=\"en\"><p lang=\"en\">Tweet text \
                     <a href=\"https://t.co/x{k}\">pic</a></p>&mdash; Someone (@{handle}) \
                     <a href=\"https://twitter.com/{handle}/status/{id}?ref_src=twsrc%5Etfw\">September 2019</a></blockquote>\n\
                     <script async src=\"https://platform.twitter.com/widgets.js\" charset=\"utf-8\"></script>"
                );
            }
            Planned::Other(Platform::Youtube, n) => {
                let _ = writeln!(
                    h,
                    "<iframe width=\"560\" height=\"315\" src=\"https://www.youtube.com/embed/clip{n:03}\" frameborder=\"0\" allowfullscreen></iframe>"
                );
            }
            Planned::Other(Platform::Instagram, n) => {
                let _ = writeln!(
                    h,
                    "<blockquote class=\"instagram-media\" data-instgrm-permalink=\"https://www.instagram.com/p/post{n:03}/\" data-instgrm-version=\"12\">\
                     <div><a href=\"https://www.instagram.com/p/post{n:03}/\">View this post</a></div></blockquote>"
                );
            }
            Planned::Other(Platform::Facebook, n) => {
                let _ = writeln!(
                    h,
                    "<div class=\"fb-post\" data-href=\"https://www.facebook.com/page/posts/{n}\" data-width=\"500\">\
                     <blockquote cite=\"https://www.facebook.com/page/posts/{n}\"><p>post</p></blockquote></div>"
                );
            }
            Planned::Other(Platform::Reddit, n) => {
                let _ = writeln!(
                    h,
                    "<blockquote class=\"reddit-card\"><a href=\"https://www.reddit.com/r/news/comments/t{n}/\">thread</a></blockquote>"
                );
            }
            Planned::Other(Platform::Tiktok, n) => {
                let _ = writeln!(
                    h,
                    "<blockquote class=\"tiktok-embed\" cite=\"https://www.tiktok.com/@creator/video/{n}\" data-video-id=\"{n}\">\
                     <section><a href=\"https://www.tiktok.com/@creator\">@creator</a></section></blockquote>"
                );
            }
            Planned::Other(Platform::Twitter, _) => unreachable!("tweets are planned by id"),
        }
    }
    h.push_str("<p>End of story.</p>\n</article></body></html>\n");
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_meets_coverage_targets() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_corpus(dir.path()).unwrap();
        assert!(p.feed_items >= 40);
        assert_eq!(p.items_by_section.len(), 8);
        assert!(p.embed_pages >= 12);
        assert!(p.embeds.values().all(|&n| n >= 2), "{:?}", p.embeds);
        assert!((0.06..0.08).contains(&p.video_share()));
        assert!(p.mock_users >= 20);
        assert!(p.embedded_users >= 20);
        assert_eq!(p.feed_listings, p.feed_items + 1);
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(write_corpus(a.path()).unwrap(), write_corpus(b.path()).unwrap());
        let list = |d: &Path| {
            let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(d.join("http"))
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(list(a.path()), list(b.path()));
    }
}
