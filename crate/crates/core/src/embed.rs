//! Social-media embed detection over stored article HTML.
//!
//! Detection rules (tolerant tag scan, no DOM):
//!
//! | platform  | markup                                                             |
//! |-----------|--------------------------------------------------------------------|
//! | twitter   | `blockquote.twitter-tweet`; iframe/anchor to `platform.twitter.com/embed` |
//! | youtube   | iframe to `/embed/` on youtube(-nocookie).com; `youtu.be` anchor inside an `*embed*` container |
//! | instagram | `blockquote.instagram-media`                                       |
//! | facebook  | `div.fb-post`; div/iframe referencing `facebook.com/plugins/post`  |
//! | reddit    | `blockquote.reddit-embed` or `blockquote.reddit-card`              |
//! | tiktok    | `blockquote.tiktok-embed`                                          |
//!
//! Everything inside an open embed element (quoted tweets, fallback links,
//! nested blockquotes) belongs to that one embed.
//!
//! Tweet-ID grammar accepted by [`parse_tweet_id`]:
//!
//! | host                                | path                      | id     |
//! |-------------------------------------|---------------------------|--------|
//! | `twitter.com`, `*.twitter.com`      | `…/status/<digits>[/…]`   | digits |
//! | `twitter.com`, `*.twitter.com`      | `…/statuses/<digits>[/…]` | digits |
//! | anything else                       |                           | none   |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::archive::{Archive, ArchiveError, Record, RecordKind, UpsertOutcome};
use crate::fetch::{Article, Classification};
use crate::markup::{Mode, Tag, Token, Tokenizer};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Twitter,
    Youtube,
    Instagram,
    Facebook,
    Reddit,
    Tiktok,
}

impl Platform {
    pub const ALL: [Platform; 6] = [
        Platform::Twitter,
        Platform::Youtube,
        Platform::Instagram,
        Platform::Facebook,
        Platform::Reddit,
        Platform::Tiktok,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Platform::Twitter => "twitter",
            Platform::Youtube => "youtube",
            Platform::Instagram => "instagram",
            Platform::Facebook => "facebook",
            Platform::Reddit => "reddit",
            Platform::Tiktok => "tiktok",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Platform::Twitter => "Twitter",
            Platform::Youtube => "YouTube",
            Platform::Instagram => "Instagram",
            Platform::Facebook => "Facebook",
            Platform::Reddit => "Reddit",
            Platform::Tiktok => "TikTok",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Platform {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown platform {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embed {
    pub article_id: String,
    pub platform: Platform,
    pub source_url: String,
    pub tweet_id: Option<String>,
    pub position: usize,
}

impl Embed {
    pub fn key_for(article_id: &str, position: usize) -> String {
        format!("{article_id}:{position:06}")
    }
}

impl Record for Embed {
    const KIND: RecordKind = RecordKind::Embed;

    fn key(&self) -> String {
        Embed::key_for(&self.article_id, self.position)
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(id) = &self.tweet_id {
            if self.platform != Platform::Twitter {
                return Err("tweet_id on a non-twitter embed".into());
            }
            if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("tweet_id {id:?} is not decimal"));
            }
        }
        Ok(())
    }
}

/// Digits following a `status`/`statuses` path segment on a twitter.com
/// host.
pub fn parse_tweet_id(url: &str) -> Option<String> {
    let url = Url::parse(url.trim()).ok()?;
    let host = url.host_str()?.to_ascii_lowercase();
    if host != "twitter.com" && !host.ends_with(".twitter.com") {
        return None;
    }
    let mut segments = url.path_segments()?;
    while let Some(seg) = segments.next() {
        if seg == "status" || seg == "statuses" {
            let id = segments.next()?;
            return (!id.is_empty() && id.bytes().all(|b| b.is_ascii_digit())).then(|| id.to_string());
        }
    }
    None
}

fn host_path(src: &str) -> Option<(String, String, Url)> {
    let src = src.trim();
    let full = if src.starts_with("//") {
        format!("https:{src}")
    } else {
        src.to_string()
    };
    let url = Url::parse(&full).ok()?;
    let host = url.host_str()?.to_ascii_lowercase();
    Some((host, url.path().to_string(), url))
}

fn twitter_widget_id(src: &str) -> Option<Option<String>> {
    let (host, path, url) = host_path(src)?;
    if host != "platform.twitter.com" || !path.starts_with("/embed") {
        return None;
    }
    let id = url
        .query_pairs()
        .find(|(k, _)| k == "id")
        .map(|(_, v)| v.into_owned())
        .filter(|v| !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit()));
    Some(id)
}

fn is_youtube_embed(src: &str) -> bool {
    const HOSTS: [&str; 4] = [
        "youtube.com",
        "www.youtube.com",
        "youtube-nocookie.com",
        "www.youtube-nocookie.com",
    ];
    host_path(src).is_some_and(|(h, p, _)| HOSTS.contains(&h.as_str()) && p.starts_with("/embed/"))
}

fn is_youtu_be(src: &str) -> bool {
    host_path(src).is_some_and(|(h, _, _)| h == "youtu.be")
}

fn is_facebook_post_plugin(src: &str) -> bool {
    host_path(src).is_some_and(|(h, p, _)| {
        (h == "facebook.com" || h.ends_with(".facebook.com")) && p.starts_with("/plugins/post")
    })
}

/// An embed element whose body is still open.
struct Open {
    tag: String,
    depth: usize,
    index: usize,
}

struct Pending {
    platform: Platform,
    source_url: Option<String>,
    tweet_id: Option<String>,
    first_href: Option<String>,
}

fn blockquote_platform(tag: &Tag) -> Option<Platform> {
    if tag.has_class_containing("twitter-tweet") {
        Some(Platform::Twitter)
    } else if tag.has_class_containing("instagram-media") {
        Some(Platform::Instagram)
    } else if tag.has_class_containing("reddit-embed") || tag.has_class_containing("reddit-card") {
        Some(Platform::Reddit)
    } else if tag.has_class_containing("tiktok-embed") {
        Some(Platform::Tiktok)
    } else {
        None
    }
}

fn src_of(tag: &Tag) -> Option<&str> {
    tag.attr("src")
        .filter(|s| !s.trim().is_empty())
        .or_else(|| tag.attr("data-src"))
}

/// Scan `html` for embeds, in document order.
pub fn extract_embeds(html: &[u8], article_id: &str) -> Vec<Embed> {
    let text = String::from_utf8_lossy(html);
    let mut found: Vec<Pending> = Vec::new();
    let mut open: Option<Open> = None;
    // (tag name, same-name nesting depth) of open `*embed*` containers
    let mut containers: Vec<(String, usize)> = Vec::new();

    for token in Tokenizer::new(&text, Mode::Html) {
        match token {
            Token::Start(tag) => {
                if let Some(o) = open.as_mut() {
                    if tag.name == o.tag && !tag.self_closing {
                        o.depth += 1;
                    }
                    if tag.name == "a" {
                        if let Some(href) = tag.attr("href") {
                            let p = &mut found[o.index];
                            p.first_href.get_or_insert_with(|| href.to_string());
                            if p.platform == Platform::Twitter && p.tweet_id.is_none() {
                                if let Some(id) = parse_tweet_id(href) {
                                    p.tweet_id = Some(id);
                                    p.source_url = Some(href.to_string());
                                }
                            }
                        }
                    }
                    continue;
                }
                if let Some((name, depth)) = containers.last_mut() {
                    if *name == tag.name && !tag.self_closing {
                        *depth += 1;
                    }
                }
                let detected = detect(&tag, !containers.is_empty());
                if let Some((platform, source_url, tweet_id, opens_body)) = detected {
                    found.push(Pending {
                        platform,
                        source_url,
                        tweet_id,
                        first_href: None,
                    });
                    if opens_body && !tag.self_closing {
                        open = Some(Open {
                            tag: tag.name.clone(),
                            depth: 0,
                            index: found.len() - 1,
                        });
                    }
                } else if !tag.self_closing && !is_void(&tag.name) && tag.has_class_containing("embed") {
                    containers.push((tag.name.clone(), 0));
                }
            }
            Token::End { name, .. } => {
                if let Some(o) = open.as_mut() {
                    if name == o.tag {
                        if o.depth == 0 {
                            open = None;
                        } else {
                            o.depth -= 1;
                        }
                    }
                    continue;
                }
                if let Some((cname, depth)) = containers.last_mut() {
                    if *cname == name {
                        if *depth == 0 {
                            containers.pop();
                        } else {
                            *depth -= 1;
                        }
                    }
                }
            }
            _ => {}
        }
    }

    found
        .into_iter()
        .enumerate()
        .map(|(position, p)| Embed {
            article_id: article_id.to_string(),
            platform: p.platform,
            source_url: p.source_url.or(p.first_href).unwrap_or_default(),
            tweet_id: p.tweet_id,
            position,
        })
        .collect()
}

/// Returns (platform, source_url, tweet_id, whether the element body
/// belongs to the embed).
fn detect(tag: &Tag, in_container: bool) -> Option<(Platform, Option<String>, Option<String>, bool)> {
    match tag.name.as_str() {
        "blockquote" => {
            let platform = blockquote_platform(tag)?;
            let source = match platform {
                Platform::Instagram => tag.attr("data-instgrm-permalink"),
                Platform::Tiktok => tag.attr("cite"),
                _ => None,
            }
            .map(str::to_string);
            Some((platform, source, None, true))
        }
        "iframe" => {
            let src = src_of(tag)?;
            if let Some(id) = twitter_widget_id(src) {
                Some((Platform::Twitter, Some(src.to_string()), id, true))
            } else if is_youtube_embed(src) {
                Some((Platform::Youtube, Some(src.to_string()), None, true))
            } else if is_facebook_post_plugin(src) {
                Some((Platform::Facebook, Some(src.to_string()), None, true))
            } else {
                None
            }
        }
        "div" => {
            if tag.classes().any(|c| c.eq_ignore_ascii_case("fb-post")) {
                let src = tag.attr("data-href").map(str::to_string);
                return Some((Platform::Facebook, src, None, true));
            }
            let referenced = tag.attrs.iter().find(|(_, v)| is_facebook_post_plugin(v))?;
            Some((Platform::Facebook, Some(referenced.1.clone()), None, true))
        }
        "a" => {
            let href = tag.attr("href")?;
            if let Some(id) = twitter_widget_id(href) {
                Some((Platform::Twitter, Some(href.to_string()), id, true))
            } else if in_container && is_youtu_be(href) {
                Some((Platform::Youtube, Some(href.to_string()), None, true))
            } else {
                None
            }
        }
        _ => None,
    }
}

fn is_void(name: &str) -> bool {
    matches!(
        name,
        "area"
            | "base"
            | "br"
            | "col"
            | "embed"
            | "hr"
            | "img"
            | "input"
            | "link"
            | "meta"
            | "param"
            | "source"
            | "track"
            | "wbr"
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExtractReport {
    pub articles_scanned: usize,
    pub embeds_found: usize,
    pub embeds_new: usize,
}

/// Extract embeds for `articles` (publisher pages only) and store them.
/// Blob reads and scanning run under `exec`; writes are sequential.
pub fn extract_articles(
    archive: &Archive,
    articles: &[Article],
    exec: Execution,
) -> Result<ExtractReport, ArchiveError> {
    let eligible: Vec<&Article> = articles
        .iter()
        .filter(|a| a.classification == Classification::PublisherPage && a.html_ref.is_some())
        .collect();
    let scanned = par::map(exec, &eligible, |a| -> Result<Vec<Embed>, ArchiveError> {
        let html = archive.read_blob(a.html_ref.as_deref().expect("filtered"))?;
        Ok(extract_embeds(&html, &a.id))
    });
    let mut report = ExtractReport {
        articles_scanned: eligible.len(),
        ..Default::default()
    };
    for embeds in scanned {
        for embed in embeds? {
            report.embeds_found += 1;
            if archive.upsert(&embed)? == UpsertOutcome::Inserted {
                report.embeds_new += 1;
            }
        }
    }
    Ok(report)
}

/// Re-run extraction over every stored publisher page.
pub fn extract_all(archive: &Archive, exec: Execution) -> Result<ExtractReport, ArchiveError> {
    let articles: Vec<Article> = archive
        .scan(|a: &Article| a.classification == Classification::PublisherPage)
        .collect();
    extract_articles(archive, &articles, exec)
}

/// One line of a corpus `labels.tsv`: platform, source_url, tweet_id (may be
/// empty), position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub platform: Platform,
    pub source_url: String,
    pub tweet_id: Option<String>,
    pub position: usize,
}

impl Label {
    pub fn of(embed: &Embed) -> Self {
        Self {
            platform: embed.platform,
            source_url: embed.source_url.clone(),
            tweet_id: embed.tweet_id.clone(),
            position: embed.position,
        }
    }
}

pub fn parse_labels(tsv: &str) -> Result<Vec<Label>, String> {
    tsv.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(format!("line {}: expected 4 tab-separated columns", n + 1));
            }
            Ok(Label {
                platform: cols[0].parse()?,
                source_url: cols[1].to_string(),
                tweet_id: (!cols[2].is_empty()).then(|| cols[2].to_string()),
                position: cols[3]
                    .trim()
                    .parse()
                    .map_err(|e| format!("line {}: bad position: {e}", n + 1))?,
            })
        })
        .collect()
}

pub fn format_labels(labels: &[Label]) -> String {
    labels
        .iter()
        .map(|l| {
            format!(
                "{}\t{}\t{}\t{}\n",
                l.platform,
                l.source_url,
                l.tweet_id.as_deref().unwrap_or(""),
                l.position
            )
        })
        .collect()
}
