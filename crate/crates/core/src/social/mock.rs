//! Fixture-driven stand-in for the social API, usable in-process or served
//! over HTTP on a local port.
//!
//! `mock_users.json`:
//!
//! ```json
//! {
//!   "users": {
//!     "42": {"screen_name": "someone",
//!            "tweets": [{"id": "1001", "created_at": "2019-05-01T12:00:00Z",
//!                        "text": "hi", "retweet_of": null, "geo": null}]}
//!   },
//!   "deleted": ["1002"]
//! }
//! ```
//!
//! Tweets may be listed in any order; timelines are served newest first and
//! only the newest [`TIMELINE_CAP`](super::TIMELINE_CAP) are reachable.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{Backend, BackendError, TimelineQuery};
use super::wire::{tweet_json, Geo};
use super::{id_num, TIMELINE_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockTweet {
    pub id: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub retweet_of: Option<String>,
    #[serde(default)]
    pub geo: Option<Geo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockUser {
    pub screen_name: String,
    #[serde(default)]
    pub tweets: Vec<MockTweet>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockUsers {
    pub users: BTreeMap<String, MockUser>,
    #[serde(default)]
    pub deleted: BTreeSet<String>,
}

impl MockUsers {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, bytes)
    }
}

#[derive(Debug, Default)]
pub struct CallCounts {
    pub lookup: AtomicUsize,
    pub timeline: AtomicUsize,
}

impl CallCounts {
    pub fn total(&self) -> usize {
        self.lookup.load(Ordering::SeqCst) + self.timeline.load(Ordering::SeqCst)
    }
}

struct State {
    /// user_id → (screen_name, tweets sorted by id descending)
    users: BTreeMap<String, (String, Vec<MockTweet>)>,
    deleted: BTreeSet<String>,
    fail_next: usize,
}

/// In-process backend over a [`MockUsers`] fixture.
#[derive(Clone)]
pub struct MockBackend {
    state: Arc<Mutex<State>>,
    calls: Arc<CallCounts>,
}

impl MockBackend {
    pub fn new(fixture: MockUsers) -> Self {
        let users = fixture
            .users
            .into_iter()
            .map(|(id, u)| {
                let mut tweets = u.tweets;
                tweets.sort_by_key(|t| std::cmp::Reverse(id_num(&t.id)));
                (id, (u.screen_name, tweets))
            })
            .collect();
        Self {
            state: Arc::new(Mutex::new(State {
                users,
                deleted: fixture.deleted,
                fail_next: 0,
            })),
            calls: Arc::new(CallCounts::default()),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(MockUsers::load(path)?))
    }

    pub fn calls(&self) -> &CallCounts {
        &self.calls
    }

    pub fn reset_calls(&self) {
        self.calls.lookup.store(0, Ordering::SeqCst);
        self.calls.timeline.store(0, Ordering::SeqCst);
    }

    /// Append tweets to a user's timeline (creating the user if needed).
    pub fn add_tweets(&self, user_id: &str, screen_name: &str, tweets: Vec<MockTweet>) {
        let mut state = self.state.lock().expect("mock state poisoned");
        let entry = state
            .users
            .entry(user_id.to_string())
            .or_insert_with(|| (screen_name.to_string(), Vec::new()));
        entry.1.extend(tweets);
        entry.1.sort_by_key(|t| std::cmp::Reverse(id_num(&t.id)));
        entry.1.dedup_by(|a, b| a.id == b.id);
    }

    pub fn delete_tweet(&self, id: &str) {
        self.state
            .lock()
            .expect("mock state poisoned")
            .deleted
            .insert(id.to_string());
    }

    /// Make the next `n` calls fail with a transient error.
    pub fn fail_next(&self, n: usize) {
        self.state.lock().expect("mock state poisoned").fail_next = n;
    }

    /// Ids of every live tweet of `user_id`, newest first.
    pub fn timeline_ids(&self, user_id: &str) -> Vec<String> {
        let state = self.state.lock().expect("mock state poisoned");
        state
            .users
            .get(user_id)
            .map(|(_, ts)| {
                ts.iter()
                    .filter(|t| !state.deleted.contains(&t.id))
                    .map(|t| t.id.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn wire(user_id: &str, screen_name: &str, t: &MockTweet) -> Value {
        tweet_json(
            &t.id,
            user_id,
            screen_name,
            t.created_at,
            &t.text,
            t.retweet_of.as_deref(),
            t.geo,
        )
    }

    fn injected_failure(state: &mut State) -> Result<(), BackendError> {
        if state.fail_next > 0 {
            state.fail_next -= 1;
            return Err(BackendError::Transient("injected failure".into()));
        }
        Ok(())
    }
}

impl Backend for MockBackend {
    fn lookup(&self, ids: &[String]) -> Result<Vec<Value>, BackendError> {
        self.calls.lookup.fetch_add(1, Ordering::SeqCst);
        let mut state = self.state.lock().expect("mock state poisoned");
        Self::injected_failure(&mut state)?;
        if ids.len() > 100 {
            return Err(BackendError::Fatal("too many ids in one lookup".into()));
        }
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        let mut out = Vec::new();
        for (uid, (name, tweets)) in &state.users {
            for t in tweets {
                if wanted.contains(t.id.as_str()) && !state.deleted.contains(&t.id) {
                    out.push(Self::wire(uid, name, t));
                }
            }
        }
        Ok(out)
    }

    fn user_timeline(&self, q: &TimelineQuery) -> Result<Vec<Value>, BackendError> {
        self.calls.timeline.fetch_add(1, Ordering::SeqCst);
        let mut state = self.state.lock().expect("mock state poisoned");
        Self::injected_failure(&mut state)?;
        let Some((name, tweets)) = state.users.get(&q.user_id) else {
            return Err(BackendError::UserUnavailable(q.user_id.clone()));
        };
        let max = q.max_id.as_deref().map(id_num);
        let since = q.since_id.as_deref().map(id_num);
        let count = q.count.clamp(1, 200);
        Ok(tweets
            .iter()
            .filter(|t| !state.deleted.contains(&t.id))
            .take(TIMELINE_CAP)
            .filter(|t| max.is_none_or(|m| id_num(&t.id) <= m))
            .filter(|t| since.is_none_or(|s| id_num(&t.id) > s))
            .take(count)
            .map(|t| Self::wire(&q.user_id, name, t))
            .collect())
    }
}

/// Token handed out by the mock server's `/oauth2/token`.
pub const MOCK_BEARER: &str = "mock-bearer-token";

/// [`MockBackend`] served over HTTP/1.1 on a local port, speaking the same
/// paths and query parameters as the live API.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(backend: MockBackend, bind: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let backend = backend.clone();
                        std::thread::spawn(move || {
                            if let Err(e) = serve_one(stream, &backend) {
                                tracing::debug!(error = %e, "mock server connection error");
                            }
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => {
                        tracing::warn!(error = %e, "mock server accept failed");
                        break;
                    }
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server thread exits (after [`shutdown`](Self::shutdown)
    /// from another thread, or never).
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_one(stream: TcpStream, backend: &MockBackend) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut body_len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                body_len = value.trim().parse().unwrap_or(0);
            }
        }
    }
    // drain the body so closing the socket does not reset the connection
    std::io::copy(&mut reader.by_ref().take(body_len as u64), &mut std::io::sink())?;
    let target = request_line.split_whitespace().nth(1).unwrap_or("/");
    let (status, body) = route(target, backend);
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        503 => "Service Unavailable",
        _ => "Error",
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body.as_bytes())?;
    stream.flush()
}

fn route(target: &str, backend: &MockBackend) -> (u16, String) {
    let Ok(url) = url::Url::parse(&format!("http://mock{target}")) else {
        return (400, error_body("bad request target"));
    };
    let params: BTreeMap<String, String> = url
        .query_pairs()
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect();
    let result = match url.path() {
        "/1.1/statuses/lookup.json" => {
            let ids: Vec<String> = params
                .get("id")
                .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
                .unwrap_or_default();
            backend.lookup(&ids)
        }
        "/1.1/statuses/user_timeline.json" => {
            let Some(user_id) = params.get("user_id") else {
                return (400, error_body("user_id required"));
            };
            let query = TimelineQuery {
                user_id: user_id.clone(),
                count: params.get("count").and_then(|c| c.parse().ok()).unwrap_or(20),
                max_id: params.get("max_id").cloned(),
                since_id: params.get("since_id").cloned(),
            };
            backend.user_timeline(&query)
        }
        // client-credentials exchange; any key/secret is accepted
        "/oauth2/token" => {
            return (
                200,
                serde_json::json!({"token_type": "bearer", "access_token": MOCK_BEARER}).to_string(),
            )
        }
        _ => return (404, error_body("no such endpoint")),
    };
    match result {
        Ok(items) => (200, Value::Array(items).to_string()),
        Err(BackendError::UserUnavailable(u)) => (404, error_body(&format!("user {u} not found"))),
        Err(BackendError::Transient(m)) => (503, error_body(&m)),
        Err(BackendError::Fatal(m)) => (400, error_body(&m)),
    }
}

fn error_body(message: &str) -> String {
    serde_json::json!({"errors": [{"message": message}]}).to_string()
}
