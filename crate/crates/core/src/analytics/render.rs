use std::fmt::Write;
use std::str::FromStr;

use super::{thousands, Report, UserMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    /// Embedded content by platform.
    Platforms = 1,
    /// Embed rates by section.
    Sections = 2,
    /// Most-embedded, most re-embedded and most effectively embedded users.
    Users = 3,
    /// Top domains by article count and by average tweet embeds.
    Domains = 4,
}

impl Table {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::Platforms),
            2 => Some(Self::Sections),
            3 => Some(Self::Users),
            4 => Some(Self::Domains),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Tsv,
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown format {other:?} (tsv|json|markdown)")),
        }
    }
}

pub fn render(report: &Report, table: Table, format: Format) -> String {
    match format {
        Format::Json => {
            let value = match table {
                Table::Platforms => serde_json::to_value(&report.platforms),
                Table::Sections => serde_json::to_value(&report.sections),
                Table::Users => serde_json::to_value(&report.users),
                Table::Domains => serde_json::to_value(&report.domains),
            }
            .expect("report serializes");
            let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
            s.push('\n');
            s
        }
        Format::Tsv => tsv(report, table),
        Format::Markdown => markdown(report, table),
    }
}

fn tsv(r: &Report, table: Table) -> String {
    let mut out = String::new();
    match table {
        Table::Platforms => {
            out.push_str("platform\tarticles\tarticles_pct\tembeddings\tembeddings_pct\n");
            for p in r.platforms.rows.iter().chain([&r.platforms.total]) {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    p.platform, p.articles_with, p.pct_articles, p.embeddings, p.pct_embeddings
                );
            }
        }
        Table::Sections => {
            out.push_str("section\tarticles\tembedded\tembedded_pct\tembeds\tunique_tweets\tunique_pct\tusers\n");
            for s in &r.sections {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    s.section,
                    s.articles,
                    s.embedded_articles,
                    s.embedded_pct,
                    s.total_embeds,
                    s.unique_tweets,
                    s.unique_tweet_pct,
                    s.unique_users
                );
            }
        }
        Table::Users => {
            out.push_str("scope\tranking\trank\tuser_id\thandle\tvalue\n");
            for u in &r.users {
                for (name, list, value) in user_blocks(u) {
                    for (i, m) in list.iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "{}\t{}\t{}\t{}\t{}\t{}",
                            u.scope,
                            name,
                            i + 1,
                            m.user_id,
                            m.handle,
                            value(m)
                        );
                    }
                }
            }
        }
        Table::Domains => {
            out.push_str("ranking\trank\tdomain\tarticles\ttweet_embeds\tavg_embeds\n");
            for (name, list) in [
                ("article_count", &r.domains.by_count),
                ("avg_embeds", &r.domains.by_avg),
            ] {
                for (i, d) in list.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        name,
                        i + 1,
                        d.domain,
                        d.article_count,
                        d.tweet_embeds,
                        d.avg_embeds_per_article
                    );
                }
            }
        }
    }
    out
}

type ValueFn = fn(&UserMetrics) -> String;

fn user_blocks(u: &super::UserRankings) -> [(&'static str, &Vec<UserMetrics>, ValueFn); 3] {
    [
        ("total_embeds", &u.by_total_embeds, |m| m.total_embeds.to_string()),
        ("unique_fraction", &u.by_unique_fraction, |m| {
            m.unique_fraction.hundredths().trimmed()
        }),
        ("effectiveness", &u.by_effectiveness, |m| {
            m.effectiveness.map(|e| e.hundredths().trimmed()).unwrap_or_default()
        }),
    ]
}

fn markdown(r: &Report, table: Table) -> String {
    let mut out = String::new();
    match table {
        Table::Platforms => {
            out.push_str("| Platform | Articles | Embeddings |\n|:--|--:|--:|\n");
            for p in &r.platforms.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} ({}) | {} ({}) |",
                    p.platform,
                    thousands(p.articles_with),
                    p.pct_articles,
                    thousands(p.embeddings),
                    p.pct_embeddings
                );
            }
            let t = &r.platforms.total;
            let _ = writeln!(
                out,
                "| **Total** | {} ({}) | {} ({}) |",
                thousands(t.articles_with),
                t.pct_articles,
                thousands(t.embeddings),
                t.pct_embeddings
            );
        }
        Table::Sections => {
            out.push_str("| Section | Article | Embedded | Embeds | Tweets | Users |\n|:-:|--:|--:|--:|--:|--:|\n");
            for s in &r.sections {
                let _ = writeln!(
                    out,
                    "| **{}** | {} | {} ({}%) | {} | {} ({}%) | {} |",
                    s.section,
                    thousands(s.articles),
                    thousands(s.embedded_articles),
                    s.embedded_pct,
                    thousands(s.total_embeds),
                    thousands(s.unique_tweets),
                    s.unique_tweet_pct,
                    thousands(s.unique_users)
                );
            }
        }
        Table::Users => {
            let header: Vec<&str> = r.users.iter().map(|u| u.scope.as_str()).collect();
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", ":-:|".repeat(header.len()));
            for block in 0..3 {
                let depth = r.users.iter().map(|u| user_blocks(u)[block].1.len()).max().unwrap_or(0);
                for row in 0..depth {
                    let cells: Vec<String> = r
                        .users
                        .iter()
                        .map(|u| {
                            let (_, list, value) = user_blocks(u)[block];
                            list.get(row)
                                .map(|m| format!("{}, {}", m.handle, value(m)))
                                .unwrap_or_default()
                        })
                        .collect();
                    let _ = writeln!(out, "| {} |", cells.join(" | "));
                }
                if block < 2 {
                    let _ = writeln!(out, "|{}", " |".repeat(header.len()));
                }
            }
        }
        Table::Domains => {
            out.push_str("| Rank | Total Articles | Average Embeds |\n|:-:|:-:|:-:|\n");
            let depth = r.domains.by_count.len().max(r.domains.by_avg.len());
            for i in 0..depth {
                let count = r
                    .domains
                    .by_count
                    .get(i)
                    .map(|d| format!("{}, {}", d.domain, thousands(d.article_count)))
                    .unwrap_or_default();
                let avg = r
                    .domains
                    .by_avg
                    .get(i)
                    .map(|d| format!("{}, {}", d.domain, d.avg_embeds_per_article))
                    .unwrap_or_default();
                let _ = writeln!(out, "| {} | {} | {} |", i + 1, count, avg);
            }
        }
    }
    out
}
