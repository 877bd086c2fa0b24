//! Acquisition pipeline for social-media embeds in aggregated news: poll
//! section RSS feeds, fetch and archive articles, extract embeds, hydrate
//! embedded tweets, keep author timelines topped off under a rate budget,
//! and compute descriptive statistics over the archive.

pub mod analytics;
pub mod archive;
pub mod clock;
pub mod config;
pub mod digest;
pub mod embed;
pub mod feed;
pub mod fetch;
pub mod markup;
pub mod par;
pub mod pipeline;
pub mod scheduler;
pub mod social;
pub mod testkit;
