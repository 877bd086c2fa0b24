//! Sequential vs parallel execution of the two data-parallel hot paths:
//! embed extraction over stored pages and the analytics report.

use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use newstweet::analytics::{compute, AnalyticsConfig, Dataset};
use newstweet::embed::{extract_embeds, Embed, Platform};
use newstweet::feed::Section;
use newstweet::fetch::{Article, Classification};
use newstweet::par::{self, Execution};
use newstweet::social::{FullFetch, Tweet, UserRecord};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

/// The committed extractor corpus, repeated to a few hundred pages.
fn pages(copies: usize) -> Vec<(String, Vec<u8>)> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus");
    let mut base: Vec<(String, Vec<u8>)> = std::fs::read_dir(&root)
        .expect("corpus dir")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .map(|p| {
            let html = std::fs::read(p.join("page.html")).expect("page.html");
            (p.file_name().unwrap().to_string_lossy().into_owned(), html)
        })
        .collect();
    base.sort();
    (0..copies)
        .flat_map(|i| {
            base.iter()
                .map(move |(name, html)| (format!("{name}-{i}"), html.clone()))
        })
        .collect()
}

fn extraction(c: &mut Criterion) {
    let pages = pages(25);
    let bytes: usize = pages.iter().map(|p| p.1.len()).sum();
    let mut group = c.benchmark_group("extract");
    group.throughput(Throughput::Bytes(bytes as u64));
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pages, |b, pages| {
            b.iter(|| par::map(exec, pages, |(id, html)| extract_embeds(html, id)).len())
        });
    }
    group.finish();
}

/// A synthetic snapshot: `n` articles, a tweet embed on most of them,
/// authors drawn from a small pool with full timelines.
fn dataset(n: usize) -> Dataset {
    let t0 = Utc.with_ymd_and_hms(2019, 9, 1, 0, 0, 0).unwrap();
    let users = 400;
    let mut articles = Vec::with_capacity(n);
    let mut embeds = Vec::new();
    let mut tweets = Vec::new();
    for i in 0..n {
        let id = format!("{i:016x}");
        articles.push(Article {
            id: id.clone(),
            canonical_url: format!("https://site{}.example/story-{i}", i % 300),
            domain: format!("site{}.example", i % 300),
            section: Section::ALL[i % Section::ALL.len()],
            published_at: t0 + Duration::minutes(i as i64),
            fetched_at: t0 + Duration::minutes(i as i64 + 5),
            http_status: 200,
            html_ref: Some("0".repeat(64)),
            classification: Classification::PublisherPage,
            feed_link: format!("https://news.google.com/articles/{i}"),
        });
        for pos in 0..(i % 4) {
            let tweet_id = (1_000_000 + (i * 7 + pos) % (n * 2)).to_string();
            embeds.push(Embed {
                article_id: id.clone(),
                platform: if pos == 3 { Platform::Youtube } else { Platform::Twitter },
                source_url: format!("https://twitter.com/x/status/{tweet_id}"),
                tweet_id: Some(tweet_id),
                position: pos,
            });
        }
    }
    for t in 0..n * 2 {
        let user = t % users;
        tweets.push(Tweet {
            id: (1_000_000 + t).to_string(),
            user_id: (3_000_000 + user).to_string(),
            handle: format!("user{user}"),
            created_at: t0 + Duration::minutes(t as i64 / 2),
            text: String::new(),
            is_retweet: false,
            geo: None,
            raw_ref: "0".repeat(64),
        });
    }
    let users = (0..users)
        .map(|u| {
            let mut r = UserRecord::new(&(3_000_000 + u).to_string(), &format!("user{u}"), t0);
            r.full_fetch = FullFetch::Done;
            r
        })
        .collect();
    Dataset::from_parts(articles, embeds, tweets, users)
}

fn analytics(c: &mut Criterion) {
    let ds = dataset(20_000);
    let config = AnalyticsConfig::default();
    let mut group = c.benchmark_group("analytics");
    group.throughput(Throughput::Elements(ds.articles().len() as u64));
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| compute(&ds, &config, exec)));
    }
    group.finish();
}

criterion_group!(benches, extraction, analytics);
criterion_main!(benches);
