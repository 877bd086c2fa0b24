use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use chrono::Duration;
use newstweet::analytics::{Scope, Table};
use newstweet::archive::{Archive, DirLock, RecordKind};
use newstweet::clock::{Clock, SimClock};
use newstweet::embed::{Embed, Platform};
use newstweet::fetch::{Article, Classification};
use newstweet::par::Execution;
use newstweet::pipeline::{Pipeline, PipelineError, Stage};
use newstweet::social::{FullFetch, TweetRecord, UserRecord};
use newstweet::testkit::{fixture_config, write_corpus, Planted};

struct Run {
    _dir: tempfile::TempDir,
    planted: Planted,
    clock: SimClock,
    pipeline: Pipeline,
}

fn open(exec: Execution) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fixture");
    let planted = write_corpus(&fixture).unwrap();
    let clock = SimClock::at(planted.run_at);
    let config = fixture_config(&fixture, &dir.path().join("data"));
    let pipeline = Pipeline::open(config, Arc::new(clock.clone()), exec).unwrap();
    Run {
        _dir: dir,
        planted,
        clock,
        pipeline,
    }
}

#[test]
fn run_report_matches_planted_totals() {
    let run = open(Execution::Parallel);
    let p = &run.planted;
    let r = run.pipeline.run_once().unwrap();

    assert_eq!(r.poll.feeds_polled, 8);
    assert!(r.poll.feed_errors.is_empty(), "{:?}", r.poll.feed_errors);
    assert_eq!(r.poll.items_seen, p.feed_listings);
    assert_eq!(r.poll.items_new, p.feed_items);
    assert_eq!(r.fetch.attempted, p.feed_items);
    assert_eq!(r.fetch.publisher_pages, p.publisher_pages);
    assert_eq!(r.fetch.youtube_pages, p.video_links);
    assert_eq!(r.fetch.failed, p.dead_links);
    assert_eq!(r.extract.articles_scanned, p.publisher_pages);
    assert_eq!(r.extract.embeds_found, p.total_embeds);
    assert_eq!(r.extract.embeds_new, p.total_embeds);
    assert_eq!(r.hydrate.requested, p.embedded_tweet_ids);
    assert_eq!(r.hydrate.hydrated, p.embedded_tweet_ids - p.deleted_tweets);
    assert_eq!(r.hydrate.missing, p.deleted_tweets);
    assert_eq!(r.hydrate.users_new, p.embedded_users);
    assert_eq!(r.register.tracked_users, p.embedded_users);
    assert_eq!(r.register.full_fetches_completed, p.embedded_users);
    assert_eq!(r.topoff.users_topped_off, p.embedded_users);
    assert_eq!(r.topoff.tweets_new, 0);
    assert_eq!(r.stats.total_embeds as usize, p.tweet_embeds);
    assert_eq!(r.stats.unique_users as usize, p.embedded_users);

    let archive = run.pipeline.archive();
    assert_eq!(archive.count(RecordKind::Article), p.feed_items);
    assert_eq!(archive.count(RecordKind::User), p.embedded_users);
    let by_platform = archive.scan_all::<Embed>().fold(BTreeMap::new(), |mut m, e| {
        *m.entry(e.platform).or_insert(0usize) += 1;
        m
    });
    assert_eq!(by_platform, p.embeds);
    let twitter: Vec<Embed> = archive.scan(|e: &Embed| e.platform == Platform::Twitter).collect();
    assert_eq!(twitter.len(), p.tweet_embeds);
}

#[test]
fn second_run_adds_nothing() {
    let run = open(Execution::Parallel);
    let first = run.pipeline.run_once().unwrap();
    assert!(first.total_new_records() > 0);
    run.clock.advance(std::time::Duration::from_secs(60));
    let second = run.pipeline.run_once().unwrap();
    assert_eq!(second.total_new_records(), 0, "{:?}", second.new_records);
    assert_eq!(second.poll.items_new, 0);
    assert_eq!(second.fetch.attempted, 0);
    assert_eq!(second.extract.embeds_new, 0);
    assert_eq!(second.hydrate.requested, 0);
}

#[test]
fn sequential_and_parallel_archives_agree() {
    let a = open(Execution::Parallel);
    let b = open(Execution::Sequential);
    a.pipeline.run_once().unwrap();
    b.pipeline.run_once().unwrap();
    for kind in [
        RecordKind::Article,
        RecordKind::Embed,
        RecordKind::Tweet,
        RecordKind::User,
    ] {
        let dump = |arch: &Archive| {
            let mut out = Vec::new();
            arch.export_ndjson(kind, &mut out).unwrap();
            out
        };
        assert_eq!(dump(a.pipeline.archive()), dump(b.pipeline.archive()), "{kind:?}");
    }
}

#[test]
fn lagging_account_is_more_than_fully_effective() {
    let run = open(Execution::Parallel);
    run.pipeline.run_once().unwrap();
    let report = run.pipeline.report();
    let all = report.users.iter().find(|u| u.scope == Scope::All.title()).unwrap();
    let top = &all.by_effectiveness[0];
    assert_eq!(top.handle, run.planted.lagging_handle);
    assert_eq!(top.unique_embedded_tweets as usize, run.planted.lagging_unique);
    assert_eq!(top.tweets_produced_in_window, Some(1));
    assert_eq!(top.effectiveness.unwrap().hundredths().to_string(), "14.00");
    let md = newstweet::analytics::render(&report, Table::Users, newstweet::analytics::Format::Markdown);
    assert!(md.contains("late_embedder, 14 |"), "{md}");
}

#[test]
fn user_records_exist_for_every_hydrated_author() {
    let run = open(Execution::Parallel);
    run.pipeline.run_once().unwrap();
    let archive = run.pipeline.archive();
    let users: BTreeSet<String> = archive.scan_all::<UserRecord>().map(|u| u.user_id).collect();
    for t in archive.scan_all::<TweetRecord>() {
        if let Some(t) = t.tweet() {
            assert!(users.contains(&t.user_id), "tweet {} has no user record", t.id);
        }
    }
    let articles: BTreeSet<String> = archive.scan_all::<Article>().map(|a| a.id).collect();
    assert!(archive.scan_all::<Embed>().all(|e| articles.contains(&e.article_id)));
    assert!(archive
        .scan_all::<UserRecord>()
        .all(|u| u.full_fetch == FullFetch::Done));
    let dead: Vec<Article> = archive
        .scan(|a: &Article| a.classification == Classification::FetchFailed)
        .collect();
    assert_eq!(dead.len(), 1);
    assert_eq!(dead[0].http_status, 404);
}

#[test]
fn unwritable_data_dir_fails_before_any_request() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, b"x").unwrap();
    // no fixture at all: if startup reached the sources it would fail differently
    let config = fixture_config(&dir.path().join("missing-fixture"), &blocker.join("data"));
    let err = Pipeline::open(config, Arc::new(SimClock::epoch()), Execution::Sequential)
        .err()
        .expect("startup must fail");
    assert!(matches!(err, PipelineError::DataDir { .. }), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_fixture_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(&dir.path().join("missing-fixture"), &dir.path().join("data"));
    let err = Pipeline::open(config, Arc::new(SimClock::epoch()), Execution::Sequential)
        .err()
        .unwrap();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
}

#[test]
fn failing_stage_is_named_and_progress_kept() {
    let run = open(Execution::Parallel);
    run.pipeline.poll().unwrap();
    run.pipeline.fetch().unwrap();
    // lose the stored pages: extraction can no longer read them
    let blobs = run.pipeline.archive().root().join("blobs");
    std::fs::remove_dir_all(&blobs).unwrap();
    std::fs::create_dir_all(&blobs).unwrap();
    let err = run.pipeline.run_once().unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::Stage {
                stage: Stage::Extract,
                ..
            }
        ),
        "{err}"
    );
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().starts_with("extract stage failed"), "{err}");
    assert_eq!(
        run.pipeline.archive().count(RecordKind::Article),
        run.planted.feed_items,
        "fetched articles persist"
    );
}

fn journal_events(p: &Pipeline, event: &str) -> usize {
    p.journal_entries().iter().filter(|e| e["event"] == event).count()
}

#[test]
fn daemon_polls_once_per_interval() {
    let run = open(Execution::Parallel);
    let interval = run.pipeline.config().feeds.poll_interval_secs as i64;
    let until = run.clock.now() + Duration::seconds(3 * interval - 1);
    let stop = AtomicBool::new(false);
    let summary = run.pipeline.run_daemon(&stop, Some(until)).unwrap();
    assert_eq!(summary.poll_cycles, 3);
    assert_eq!(journal_events(&run.pipeline, "poll_cycle"), 3);
    assert_eq!(journal_events(&run.pipeline, "start"), 1);
    assert_eq!(journal_events(&run.pipeline, "stop"), 1);
    assert_eq!(summary.failures, 0);
}

#[test]
fn daemon_skips_topoff_without_budget_then_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fixture");
    let planted = write_corpus(&fixture).unwrap();
    let clock = SimClock::at(planted.run_at);
    let mut config = fixture_config(&fixture, &dir.path().join("data"));
    // enough for hydration and initial fetches only
    let ids = planted.embedded_tweet_ids;
    let needed = ids.div_ceil(100) + planted.embedded_users;
    config.social.requests_per_window = needed as u32;
    let pipeline = Pipeline::open(config, Arc::new(clock.clone()), Execution::Parallel).unwrap();
    let window = pipeline.config().scheduler.window_secs as i64;
    let until = clock.now() + Duration::seconds(window + 1);
    let summary = pipeline.run_daemon(&AtomicBool::new(false), Some(until)).unwrap();
    assert_eq!(summary.topoff_skipped, 1, "{summary:?}");
    assert!(summary.topoff_windows >= 1, "{summary:?}");
    assert_eq!(journal_events(&pipeline, "topoff_skipped"), 1);
}

#[test]
fn stop_flag_ends_daemon_and_state_reloads() {
    let run = open(Execution::Parallel);
    let stop = AtomicBool::new(true);
    let summary = run.pipeline.run_daemon(&stop, None).unwrap();
    assert_eq!(summary.poll_cycles, 0);
    let cfg = run.pipeline.config().clone();
    drop(run.pipeline);
    let _lock = DirLock::acquire(&cfg.data_dir).unwrap();
    Archive::open(&cfg.data_dir).unwrap();
    assert!(Path::new(&cfg.data_dir).join("archive/meta/seed").exists());
}
