//! HTTP transport abstraction. `FixtureTransport` replays recorded responses
//! from disk; `LiveTransport` performs real requests. Neither follows
//! redirects: the fetcher walks redirect chains itself.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use url::Url;

use crate::digest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub reason: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("no fixture recorded for {0}")]
    NoFixture(String),
    #[error("malformed fixture file {path}: {reason}")]
    BadFixture { path: PathBuf, reason: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            reason: default_reason(status).to_string(),
            headers: Vec::new(),
            body: body.into(),
        }
    }

    pub fn redirect(status: u16, location: &str) -> Self {
        Self::new(status, Vec::new()).with_header("Location", location)
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_redirect(&self) -> bool {
        matches!(self.status, 301 | 302 | 303 | 307 | 308)
    }

    /// Serialize as a fixture file: status line, headers, blank line, body.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, self.reason).into_bytes();
        for (k, v) in &self.headers {
            out.extend_from_slice(format!("{k}: {v}\r\n").as_bytes());
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.body);
        out
    }

    /// Parse a fixture file. The body is every byte after the first blank
    /// line, verbatim. Header lines may end in CRLF or LF.
    pub fn parse(bytes: &[u8]) -> Result<Self, String> {
        let (head_end, body_start) = find_head_end(bytes).ok_or("no blank line after headers")?;
        let head = std::str::from_utf8(&bytes[..head_end]).map_err(|_| "headers are not UTF-8")?;
        let mut lines = head.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
        let status_line = lines.next().ok_or("empty fixture")?;
        let mut parts = status_line.splitn(3, ' ');
        let version = parts.next().unwrap_or("");
        if !version.starts_with("HTTP/") {
            return Err(format!("bad status line {status_line:?}"));
        }
        let status: u16 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad status code in {status_line:?}"))?;
        let reason = parts.next().unwrap_or("").to_string();
        let mut headers = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| format!("bad header line {line:?}"))?;
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self {
            status,
            reason,
            headers,
            body: bytes[body_start..].to_vec(),
        })
    }
}

fn find_head_end(bytes: &[u8]) -> Option<(usize, usize)> {
    for i in 0..bytes.len() {
        if bytes[i..].starts_with(b"\r\n\r\n") {
            return Some((i, i + 4));
        }
        if bytes[i..].starts_with(b"\n\n") {
            return Some((i, i + 2));
        }
    }
    None
}

fn default_reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        301 => "Moved Permanently",
        302 => "Found",
        303 => "See Other",
        307 => "Temporary Redirect",
        308 => "Permanent Redirect",
        404 => "Not Found",
        410 => "Gone",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "",
    }
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &Url) -> Result<HttpResponse, TransportError>;
}

/// Responses stored as `<dir>/<sha256(url)>.http`, keyed by the exact URL
/// string requested.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(dir: &Path, url: &str) -> PathBuf {
        dir.join(format!("{}.http", sha256_hex(url.as_bytes())))
    }

    /// Record `response` for `url`.
    pub fn record(dir: &Path, url: &str, response: &HttpResponse) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(Self::path_for(dir, url), response.to_bytes())
    }
}

impl Transport for FixtureTransport {
    fn get(&self, url: &Url) -> Result<HttpResponse, TransportError> {
        let path = Self::path_for(&self.dir, url.as_str());
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(TransportError::NoFixture(url.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        HttpResponse::parse(&bytes).map_err(|reason| TransportError::BadFixture { path, reason })
    }
}

/// Real HTTP over `ureq`, redirects disabled.
pub struct LiveTransport {
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(user_agent: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .max_redirects(0)
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(user_agent)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for LiveTransport {
    fn get(&self, url: &Url) -> Result<HttpResponse, TransportError> {
        let mut res = self
            .agent
            .get(url.as_str())
            .call()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = res.status();
        let headers = res
            .headers()
            .iter()
            .map(|(k, v)| (k.to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        let body = res
            .body_mut()
            .with_config()
            .limit(32 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpResponse {
            status: status.as_u16(),
            reason: status.canonical_reason().unwrap_or("").to_string(),
            headers,
            body,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_bytes_roundtrip_bit_exact() {
        let body = b"<html>\r\n\r\nbinary\x00\xff tail".to_vec();
        let res = HttpResponse::new(200, body.clone()).with_header("Content-Type", "text/html");
        let parsed = HttpResponse::parse(&res.to_bytes()).unwrap();
        assert_eq!(parsed, res);
        assert_eq!(parsed.body, body);
    }

    #[test]
    fn parses_lf_only_fixtures() {
        let parsed = HttpResponse::parse(b"HTTP/1.1 301 Moved\nLocation: https://x.com/\n\n").unwrap();
        assert!(parsed.is_redirect());
        assert_eq!(parsed.header("location"), Some("https://x.com/"));
        assert!(parsed.body.is_empty());
    }

    #[test]
    fn rejects_garbage() {
        assert!(HttpResponse::parse(b"hello").is_err());
        assert!(HttpResponse::parse(b"FTP 200\r\n\r\n").is_err());
        assert!(HttpResponse::parse(b"HTTP/1.1 abc\r\n\r\n").is_err());
    }

    #[test]
    fn fixture_transport_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let url = Url::parse("https://a.com/x").unwrap();
        let t = FixtureTransport::new(dir.path());
        assert!(matches!(t.get(&url), Err(TransportError::NoFixture(_))));
        FixtureTransport::record(dir.path(), url.as_str(), &HttpResponse::new(404, "gone")).unwrap();
        assert_eq!(t.get(&url).unwrap().status, 404);
    }
}
