//! URL normalization used as the deduplication key for feed links and
//! fetched articles.

use serde::{Deserialize, Serialize};
use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid URL {url:?}: {reason}")]
pub struct InvalidUrl {
    pub url: String,
    pub reason: String,
}

/// Query keys dropped during canonicalization. A trailing `*` matches any
/// suffix (`utm_*`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackerBlocklist(pub Vec<String>);

impl Default for TrackerBlocklist {
    fn default() -> Self {
        Self(vec!["utm_*".into(), "fbclid".into(), "gclid".into()])
    }
}

impl TrackerBlocklist {
    pub fn blocks(&self, key: &str) -> bool {
        let key = key.to_ascii_lowercase();
        self.0.iter().any(|pat| match pat.strip_suffix('*') {
            Some(prefix) => key.starts_with(&prefix.to_ascii_lowercase()),
            None => key == pat.to_ascii_lowercase(),
        })
    }
}

/// Lowercase scheme and host, drop default ports and the fragment, remove
/// blocklisted query keys and sort the remaining ones by key.
///
/// Query pairs keep their original encoding; only their order changes.
pub fn canonicalize_url(raw: &str, blocklist: &TrackerBlocklist) -> Result<Url, InvalidUrl> {
    let invalid = |reason: &str| InvalidUrl {
        url: raw.to_string(),
        reason: reason.to_string(),
    };
    let mut url = Url::parse(raw.trim()).map_err(|e| invalid(&e.to_string()))?;
    if url.cannot_be_a_base() || url.host_str().is_none_or(str::is_empty) {
        return Err(invalid("not a hierarchical URL with a host"));
    }
    url.set_fragment(None);
    // `Url::parse` already lowercases scheme/host and drops default ports.
    let kept = url.query().map(|q| {
        let mut pairs: Vec<&str> = q
            .split('&')
            .filter(|p| !p.is_empty())
            .filter(|p| {
                let key = p.split('=').next().unwrap_or("");
                let key = url::form_urlencoded::parse(key.as_bytes())
                    .next()
                    .map(|(k, _)| k.into_owned())
                    .unwrap_or_default();
                !blocklist.blocks(&key)
            })
            .collect();
        pairs.sort_by(|a, b| query_key(a).cmp(query_key(b)));
        pairs.join("&")
    });
    match kept {
        Some(q) if !q.is_empty() => url.set_query(Some(&q)),
        _ => url.set_query(None),
    }
    Ok(url)
}

fn query_key(pair: &str) -> &str {
    pair.split('=').next().unwrap_or("")
}

/// Host with any leading `www.` removed; the port is never included.
pub fn domain_of(url: &Url) -> String {
    let host = url.host_str().unwrap_or("").to_ascii_lowercase();
    match host.strip_prefix("www.") {
        Some(rest) => rest.to_string(),
        None => host,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn canon(s: &str) -> String {
        canonicalize_url(s, &TrackerBlocklist::default()).unwrap().to_string()
    }

    #[test]
    fn applies_every_rule_once() {
        assert_eq!(canon("HTTP://Ex.com:80/a?utm_source=x&b=1#frag"), "http://ex.com/a?b=1");
    }

    #[test]
    fn identity_on_canonical_input() {
        assert_eq!(canon("https://ex.com/a"), "https://ex.com/a");
    }

    #[test]
    fn sorts_query_keys() {
        assert_eq!(canon("https://ex.com/a?z=2&a=1"), "https://ex.com/a?a=1&z=2");
    }

    #[test]
    fn strips_click_ids_and_empty_query() {
        assert_eq!(
            canon("https://ex.com/a?fbclid=1&gclid=2&UTM_Medium=3"),
            "https://ex.com/a"
        );
        assert_eq!(canon("https://ex.com:443/a?"), "https://ex.com/a");
        assert_eq!(canon("https://ex.com:8443/a"), "https://ex.com:8443/a");
    }

    #[test]
    fn rejects_relative_and_opaque() {
        let bl = TrackerBlocklist::default();
        assert!(canonicalize_url("/relative/path", &bl).is_err());
        assert!(canonicalize_url("mailto:someone@example.com", &bl).is_err());
        assert!(canonicalize_url("not a url", &bl).is_err());
    }

    #[test]
    fn domain_drops_www_and_port() {
        let u = Url::parse("https://WWW.Example.com:8080/x").unwrap();
        assert_eq!(domain_of(&u), "example.com");
        let u = Url::parse("https://nba.nbcsports.com/x").unwrap();
        assert_eq!(domain_of(&u), "nba.nbcsports.com");
    }

    fn url_strategy() -> impl Strategy<Value = String> {
        let scheme = prop_oneof![Just("http"), Just("https"), Just("HTTPS")];
        let host = "[a-zA-Z]{1,8}\\.(com|org|Net)";
        let port = prop_oneof![
            Just(String::new()),
            Just(":80".into()),
            Just(":443".into()),
            Just(":8080".into())
        ];
        let path = "(/[a-zA-Z0-9_.%-]{0,6}){0,3}";
        let key = prop_oneof![Just("utm_source".to_string()), Just("fbclid".to_string()), "[a-z]{1,3}",];
        let pair = (key, "[a-zA-Z0-9%+]{0,4}").prop_map(|(k, v)| format!("{k}={v}"));
        let query = prop::collection::vec(pair, 0..5).prop_map(|p| {
            if p.is_empty() {
                String::new()
            } else {
                format!("?{}", p.join("&"))
            }
        });
        let frag = prop_oneof![Just(String::new()), "#[a-z]{0,5}"];
        (scheme, host, port, path, query, frag).prop_map(|(s, h, po, pa, q, f)| format!("{s}://{h}{po}{pa}{q}{f}"))
    }

    proptest! {
        #[test]
        fn idempotent(raw in url_strategy()) {
            let bl = TrackerBlocklist::default();
            let once = canonicalize_url(&raw, &bl).unwrap();
            let twice = canonicalize_url(once.as_str(), &bl).unwrap();
            prop_assert_eq!(once.as_str(), twice.as_str());
            prop_assert!(once.fragment().is_none());
            let query_has_tracker = once.query_pairs().any(|(k, _)| bl.blocks(&k));
            prop_assert!(!query_has_tracker);
        }
    }
}
