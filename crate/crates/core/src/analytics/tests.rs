use chrono::TimeZone;
use proptest::prelude::*;

use super::*;

fn at(day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 6, day, hour, 0, 0).unwrap()
}

fn article(id: &str, section: Section, domain: &str, published: DateTime<Utc>) -> Article {
    Article {
        id: id.into(),
        canonical_url: format!("https://{domain}/{id}"),
        domain: domain.into(),
        section,
        published_at: published,
        fetched_at: published,
        http_status: 200,
        html_ref: None,
        classification: Classification::PublisherPage,
        feed_link: format!("https://{domain}/{id}"),
    }
}

fn tweet_embed(article: &str, pos: usize, tweet: &str) -> Embed {
    Embed {
        article_id: article.into(),
        platform: Platform::Twitter,
        source_url: format!("https://twitter.com/x/status/{tweet}"),
        tweet_id: Some(tweet.into()),
        position: pos,
    }
}

fn other_embed(article: &str, pos: usize, platform: Platform) -> Embed {
    Embed {
        article_id: article.into(),
        platform,
        source_url: format!("https://{}.example/{pos}", platform.name()),
        tweet_id: None,
        position: pos,
    }
}

fn tweet(id: &str, user: &str, handle: &str, created: DateTime<Utc>) -> Tweet {
    Tweet {
        id: id.into(),
        user_id: user.into(),
        handle: handle.into(),
        created_at: created,
        text: String::new(),
        is_retweet: false,
        geo: None,
        raw_ref: String::new(),
    }
}

fn fetched_user(id: &str, handle: &str) -> UserRecord {
    let mut u = UserRecord::new(id, handle, at(1, 0));
    u.full_fetch = FullFetch::Done;
    u
}

// Reference section table: raw counts and the percentages printed
// beside them.
type SectionRow = (&'static str, u64, u64, u64, u64, u64, u64, u64);

const SECTION_TABLE: [SectionRow; 9] = [
    ("B", 41_006, 2_285, 6, 4_488, 3_510, 78, 2_314),
    ("E", 49_263, 6_827, 14, 17_233, 13_380, 78, 9_152),
    ("H", 12_498, 228, 2, 378, 351, 93, 283),
    ("N", 38_461, 4_353, 11, 8_783, 7_032, 80, 3_778),
    ("S", 59_553, 14_429, 24, 35_841, 27_857, 78, 9_398),
    ("T", 34_435, 3_105, 9, 5_118, 3_782, 74, 2_313),
    ("W", 24_531, 2_119, 9, 3_704, 3_057, 83, 1_864),
    ("X", 14_152, 1_872, 13, 3_969, 3_540, 89, 2_267),
    ("A", 273_899, 35_218, 13, 79_514, 60_523, 76, 27_838),
];

#[test]
fn section_percentages_match_published_table() {
    for (code, articles, embedded, pct, embeds, unique, upct, users) in SECTION_TABLE {
        let row = SectionStats::from_counts(code, articles, embedded, embeds, unique, users);
        assert_eq!((row.embedded_pct, row.unique_tweet_pct), (pct, upct), "section {code}");
    }
}

#[test]
fn published_section_columns_sum_to_all_row() {
    let rows = &SECTION_TABLE[..8];
    let all = SECTION_TABLE[8];
    assert_eq!(rows.iter().map(|r| r.1).sum::<u64>(), all.1);
    assert_eq!(rows.iter().map(|r| r.2).sum::<u64>(), all.2);
    assert_eq!(rows.iter().map(|r| r.4).sum::<u64>(), all.4);
}

#[test]
fn platform_shares_match_published_table() {
    let table = PlatformTable::from_counts(&[
        (Platform::Twitter, 39_498, 92_299),
        (Platform::Youtube, 19_557, 27_960),
        (Platform::Instagram, 8_021, 13_241),
        (Platform::Facebook, 1_785, 2_081),
        (Platform::Reddit, 27, 32),
        (Platform::Tiktok, 2, 17),
    ]);
    let shares: Vec<(String, String)> = table
        .rows
        .iter()
        .map(|r| (r.pct_articles.to_string(), r.pct_embeddings.to_string()))
        .collect();
    let expect = [
        ("57.33", "68.05"),
        ("28.39", "20.61"),
        ("11.64", "9.76"),
        ("2.59", "1.53"),
        // printed with more precision in the source; these are the 2-decimal values
        ("0.04", "0.02"),
        ("0.00", "0.01"),
    ];
    for (got, want) in shares.iter().zip(expect) {
        assert_eq!((got.0.as_str(), got.1.as_str()), want);
    }
    assert_eq!(table.total.articles_with, 68_890);
    assert_eq!(table.total.embeddings, 135_630);
    assert_eq!(table.total.pct_articles.to_string(), "100.00");
    assert_eq!(table.total.pct_embeddings.to_string(), "100.00");
}

#[test]
fn single_platform_is_whole_share() {
    let table = PlatformTable::from_counts(&[(Platform::Instagram, 3, 5), (Platform::Twitter, 0, 0)]);
    assert_eq!(table.rows[0].pct_articles.to_string(), "100.00");
    assert_eq!(table.rows[0].pct_embeddings.to_string(), "100.00");
    assert_eq!(table.rows[1].pct_embeddings.to_string(), "0.00");
}

#[test]
fn domain_average_and_threshold() {
    let stats = vec![
        DomainStats::new("blavity.com", 11, 107),
        DomainStats::new("tiny.example", 9, 90),
        DomainStats::new("foxnews.com", 10_038, 3_000),
        DomainStats::new("cnn.com", 8_930, 2_000),
    ];
    let r = rank_domains(stats, 10, 10);
    assert_eq!(r.by_count[0].domain, "foxnews.com");
    assert_eq!(r.by_count.len(), 4);
    assert_eq!(r.by_avg[0].domain, "blavity.com");
    assert_eq!(r.by_avg[0].avg_embeds_per_article.to_string(), "9.73");
    assert!(r.by_avg.iter().all(|d| d.domain != "tiny.example"));
}

#[test]
fn domain_avg_ranking_uses_exact_ratio() {
    // both round to 0.33; the exact order must still hold
    let r = rank_domains(
        vec![
            DomainStats::new("a.example", 300, 100),
            DomainStats::new("b.example", 301, 101),
        ],
        10,
        10,
    );
    assert_eq!(r.by_avg[0].domain, "b.example");
}

#[test]
fn empty_dataset_is_all_zero() {
    let ds = Dataset::default();
    let rows = section_stats(&ds, Execution::Sequential);
    assert_eq!(rows.len(), 9);
    assert!(rows
        .iter()
        .all(|r| r.articles == 0 && r.embedded_pct == 0 && r.unique_tweet_pct == 0));
    let p = platform_stats(&ds);
    assert!(p.rows.iter().all(|r| r.pct_articles == Hundredths(0)));
    let report = compute(&ds, &AnalyticsConfig::default(), Execution::Parallel);
    assert!(report.users.iter().all(|u| u.by_total_embeds.is_empty()));
    for t in 1..=4 {
        for f in [Format::Tsv, Format::Json, Format::Markdown] {
            assert!(!render(&report, Table::from_number(t).unwrap(), f).is_empty());
        }
    }
}

/// One user, embeds of tweets [t1, t1, t1, t2] across articles.
#[test]
fn repeated_embeds_fraction() {
    let arts = vec![
        article("a1", Section::World, "x.example", at(2, 0)),
        article("a2", Section::World, "x.example", at(3, 0)),
    ];
    let embeds = vec![
        tweet_embed("a1", 0, "1"),
        tweet_embed("a1", 1, "1"),
        tweet_embed("a2", 0, "1"),
        tweet_embed("a2", 1, "2"),
    ];
    let tweets = vec![
        tweet("1", "u", "someone", at(1, 0)),
        tweet("2", "u", "someone", at(2, 12)),
    ];
    let ds = Dataset::from_parts(arts, embeds, tweets, vec![fetched_user("u", "someone")]);
    let m = &user_metrics(&ds, Scope::All)[0];
    assert_eq!((m.total_embeds, m.unique_embedded_tweets), (4, 2));
    assert_eq!(m.unique_fraction, Ratio::new(1, 2));
    // window [day 2, day 3] holds only tweet 2
    assert_eq!(m.tweets_produced_in_window, Some(1));
    assert_eq!(m.effectiveness, Some(Ratio::new(2, 1)));
}

#[test]
fn heavy_reembedding_fraction() {
    let mut arts = Vec::new();
    let mut embeds = Vec::new();
    for i in 0..18 {
        let id = format!("a{i:02}");
        arts.push(article(&id, Section::Business, "x.example", at(5, 0)));
        embeds.push(tweet_embed(&id, 0, if i % 3 == 0 { "10" } else { "11" }));
    }
    let tweets = vec![
        tweet("10", "p", "chicken", at(4, 0)),
        tweet("11", "p", "chicken", at(4, 1)),
    ];
    let ds = Dataset::from_parts(arts, embeds, tweets, vec![]);
    let m = &user_metrics(&ds, Scope::Section(Section::Business))[0];
    assert_eq!((m.total_embeds, m.unique_embedded_tweets), (18, 2));
    assert_eq!(m.unique_fraction.hundredths().trimmed(), "0.11");
    // no fetched timeline: no effectiveness claim
    assert_eq!(m.effectiveness, None);
}

#[test]
fn effectiveness_can_exceed_one() {
    // 14 older tweets embedded over a week; only one tweet written in that week
    let mut arts = Vec::new();
    let mut embeds = Vec::new();
    let mut tweets = Vec::new();
    for i in 0..14u32 {
        let id = format!("art{i:02}");
        arts.push(article(&id, Section::Entertainment, "e.example", at(10 + i % 7, 9)));
        let tid = format!("{}", 500 + i);
        embeds.push(tweet_embed(&id, 0, &tid));
        tweets.push(tweet(&tid, "k", "late_embedder", at(1, i)));
    }
    tweets.push(tweet("900", "k", "late_embedder", at(12, 0)));
    let ds = Dataset::from_parts(arts, embeds, tweets, vec![fetched_user("k", "late_embedder")]);
    let m = &user_metrics(&ds, Scope::All)[0];
    assert_eq!(m.unique_embedded_tweets, 14);
    assert_eq!(m.tweets_produced_in_window, Some(1));
    assert_eq!(m.effectiveness.unwrap().hundredths().trimmed(), "14");
}

#[test]
fn zero_length_window_widens_to_a_day() {
    let arts = vec![article("a", Section::Health, "h.example", at(5, 6))];
    let embeds = vec![tweet_embed("a", 0, "1")];
    let tweets = vec![
        tweet("1", "u", "h", at(1, 0)),
        tweet("2", "u", "h", at(5, 6)),
        tweet("3", "u", "h", at(6, 6)),
        tweet("4", "u", "h", at(6, 7)),
    ];
    let ds = Dataset::from_parts(arts, embeds, tweets, vec![fetched_user("u", "h")]);
    let m = &user_metrics(&ds, Scope::All)[0];
    assert_eq!(m.window_end - m.window_start, Duration::hours(24));
    // endpoints inclusive: tweets 2 and 3
    assert_eq!(m.tweets_produced_in_window, Some(2));
    assert_eq!(m.effectiveness, Some(Ratio::new(1, 2)));
}

#[test]
fn no_tweets_in_window_divides_by_one() {
    let arts = vec![article("a", Section::Health, "h.example", at(20, 0))];
    let ds = Dataset::from_parts(
        arts,
        vec![tweet_embed("a", 0, "1")],
        vec![tweet("1", "u", "h", at(1, 0))],
        vec![fetched_user("u", "h")],
    );
    let m = &user_metrics(&ds, Scope::All)[0];
    assert_eq!(m.tweets_produced_in_window, Some(0));
    assert_eq!(m.effectiveness, Some(Ratio::new(1, 1)));
}

#[test]
fn rankings_break_ties_by_handle() {
    let mut arts = Vec::new();
    let mut embeds = Vec::new();
    let mut tweets = Vec::new();
    for (n, handle) in ["zed", "amy", "bob"].iter().enumerate() {
        for j in 0..2 {
            let id = format!("{handle}{j}");
            arts.push(article(&id, Section::Sports, "s.example", at(3, 0)));
            let tid = format!("{}", 100 * (n + 1) + j);
            embeds.push(tweet_embed(&id, 0, &tid));
            tweets.push(tweet(&tid, &format!("id_{handle}"), handle, at(3, 0)));
        }
    }
    let ds = Dataset::from_parts(arts, embeds, tweets, vec![]);
    let r = rank_users(Scope::All, &user_metrics(&ds, Scope::All), 5);
    let order: Vec<&str> = r.by_total_embeds.iter().map(|m| m.handle.as_str()).collect();
    assert_eq!(order, ["amy", "bob", "zed"]);
    let order: Vec<&str> = r.by_unique_fraction.iter().map(|m| m.handle.as_str()).collect();
    assert_eq!(order, ["amy", "bob", "zed"]);
}

#[test]
fn fraction_ranking_needs_two_embeds() {
    let arts = vec![
        article("a", Section::World, "w.example", at(3, 0)),
        article("b", Section::World, "w.example", at(3, 0)),
    ];
    let embeds = vec![
        tweet_embed("a", 0, "1"),
        tweet_embed("b", 0, "2"),
        tweet_embed("b", 1, "2"),
    ];
    let tweets = vec![
        tweet("1", "once", "once", at(1, 0)),
        tweet("2", "twice", "twice", at(1, 0)),
    ];
    let ds = Dataset::from_parts(arts, embeds, tweets, vec![]);
    let r = rank_users(Scope::All, &user_metrics(&ds, Scope::All), 5);
    assert_eq!(r.by_unique_fraction.len(), 1);
    assert_eq!(r.by_unique_fraction[0].handle, "twice");
}

#[test]
fn non_publisher_pages_are_not_counted() {
    let mut video = article("v", Section::World, "youtube.com", at(3, 0));
    video.classification = Classification::YoutubePage;
    let mut failed = article("f", Section::World, "down.example", at(3, 0));
    failed.classification = Classification::FetchFailed;
    let ds = Dataset::from_parts(
        vec![video, failed, article("p", Section::World, "ok.example", at(3, 0))],
        vec![tweet_embed("v", 0, "1")],
        vec![],
        vec![],
    );
    let all = section_row(&ds, Scope::All);
    assert_eq!((all.articles, all.total_embeds), (1, 0));
}

#[test]
fn markdown_mirrors_published_layout() {
    let s = SECTION_TABLE[4];
    let report = Report {
        platforms: PlatformTable::from_counts(&[(Platform::Twitter, 39_498, 92_299)]),
        sections: vec![SectionStats::from_counts(s.0, s.1, s.2, s.4, s.5, s.7)],
        users: vec![],
        domains: rank_domains(vec![DomainStats::new("blavity.com", 11, 107)], 10, 10),
    };
    let md = render(&report, Table::Sections, Format::Markdown);
    assert!(
        md.contains("| **S** | 59,553 | 14,429 (24%) | 35,841 | 27,857 (78%) | 9,398 |"),
        "{md}"
    );
    let md = render(&report, Table::Domains, Format::Markdown);
    assert!(md.contains("| 1 | blavity.com, 11 | blavity.com, 9.73 |"), "{md}");
    let tsv = render(&report, Table::Platforms, Format::Tsv);
    assert!(tsv.contains("Twitter\t39498\t100.00\t92299\t100.00"), "{tsv}");
    let json: serde_json::Value = serde_json::from_str(&render(&report, Table::Sections, Format::Json)).unwrap();
    assert_eq!(json[0]["embedded_pct"], 24);
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    let art = (0usize..8, 0u32..5, 0usize..3);
    let emb = (0usize..30, 0usize..6, 0u32..15);
    (prop::collection::vec(art, 0..30), prop::collection::vec(emb, 0..80)).prop_map(|(arts, embs)| {
        let articles: Vec<Article> = arts
            .iter()
            .enumerate()
            .map(|(i, &(s, d, dom))| {
                article(
                    &format!("a{i:03}"),
                    Section::ALL[s],
                    &format!("d{dom}.example"),
                    at(1 + d, 0),
                )
            })
            .collect();
        let mut embeds = Vec::new();
        for (pos, &(a, p, t)) in embs.iter().enumerate() {
            if articles.is_empty() {
                break;
            }
            let aid = &articles[a % articles.len()].id;
            embeds.push(match Platform::ALL[p] {
                Platform::Twitter => tweet_embed(aid, pos, &t.to_string()),
                other => other_embed(aid, pos, other),
            });
        }
        let tweets = (0..15u32)
            .filter(|t| t % 4 != 3) // some embedded tweets stay unhydrated
            .map(|t| {
                tweet(
                    &t.to_string(),
                    &format!("u{}", t % 5),
                    &format!("h{}", t % 5),
                    at(1 + t % 5, 1),
                )
            })
            .collect();
        let users = (0..5)
            .filter(|u| u % 2 == 0)
            .map(|u| fetched_user(&format!("u{u}"), &format!("h{u}")))
            .collect();
        Dataset::from_parts(articles, embeds, tweets, users)
    })
}

proptest! {
    #[test]
    fn section_invariants(ds in arb_dataset()) {
        let rows = section_stats(&ds, Execution::Sequential);
        let (sections, all) = rows.split_at(8);
        let all = &all[0];
        prop_assert_eq!(sections.iter().map(|r| r.embedded_articles).sum::<u64>(), all.embedded_articles);
        prop_assert_eq!(sections.iter().map(|r| r.articles).sum::<u64>(), all.articles);
        for r in &rows {
            prop_assert!(r.embedded_articles <= r.articles);
            prop_assert!(r.unique_tweets <= r.total_embeds);
            prop_assert!(r.unique_users <= r.unique_tweets);
        }
    }

    #[test]
    fn user_invariants(ds in arb_dataset()) {
        for scope in Scope::USER_TABLE {
            for m in user_metrics(&ds, scope) {
                prop_assert!(m.unique_embedded_tweets >= 1);
                prop_assert!(m.unique_embedded_tweets <= m.total_embeds);
                prop_assert!(m.unique_fraction.value() > 0.0 && m.unique_fraction.value() <= 1.0);
                prop_assert!(m.window_end > m.window_start);
            }
        }
    }

    #[test]
    fn platform_total_is_column_sum(ds in arb_dataset()) {
        let t = platform_stats(&ds);
        prop_assert_eq!(t.rows.iter().map(|r| r.articles_with).sum::<u64>(), t.total.articles_with);
        prop_assert_eq!(t.rows.iter().map(|r| r.embeddings).sum::<u64>(), t.total.embeddings);
    }

    #[test]
    fn parallel_equals_sequential(ds in arb_dataset()) {
        let cfg = AnalyticsConfig::default();
        prop_assert_eq!(compute(&ds, &cfg, Execution::Sequential), compute(&ds, &cfg, Execution::Parallel));
    }
}
