use std::time::Duration;

use serde_json::Value;

/// One `user_timeline` request. `max_id` is inclusive and `since_id`
/// exclusive, as in the public API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineQuery {
    pub user_id: String,
    pub count: usize,
    pub max_id: Option<String>,
    pub since_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying (throttling, 5xx, connection trouble).
    #[error("transient backend error: {0}")]
    Transient(String),
    /// The user's timeline cannot be read (suspended, protected, unknown).
    #[error("user {0} unavailable")]
    UserUnavailable(String),
    #[error("backend error: {0}")]
    Fatal(String),
}

/// Tweet lookup and timeline paging. Responses are raw wire objects.
pub trait Backend: Send + Sync {
    /// Present tweets among `ids` (at most 100); absent ids are deleted or
    /// protected.
    fn lookup(&self, ids: &[String]) -> Result<Vec<Value>, BackendError>;

    /// Newest-first page of a user's timeline.
    fn user_timeline(&self, query: &TimelineQuery) -> Result<Vec<Value>, BackendError>;
}

/// Backend speaking the v1.1 REST paths over HTTP: the local mock server or
/// the live API (with a bearer token).
pub struct HttpBackend {
    base_url: String,
    bearer: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, bearer: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            bearer,
            agent,
        }
    }

    fn get(&self, path: &str, query: &[(&str, String)], user: Option<&str>) -> Result<Vec<Value>, BackendError> {
        let mut req = self.agent.get(format!("{}{}", self.base_url, path));
        for (k, v) in query {
            req = req.query(*k, v);
        }
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut res = req.call().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = res.status().as_u16();
        let body = res
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200 => {
                let value: Value = serde_json::from_str(&body).map_err(|e| BackendError::Fatal(e.to_string()))?;
                match value {
                    Value::Array(items) => Ok(items),
                    other => Err(BackendError::Fatal(format!("expected a JSON array, got {other}"))),
                }
            }
            401 | 403 | 404 if user.is_some() => {
                Err(BackendError::UserUnavailable(user.unwrap_or_default().to_string()))
            }
            429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}"))),
            _ => Err(BackendError::Fatal(format!("HTTP {status}: {body}"))),
        }
    }
}

/// Exchange an API key and secret for an app bearer token
/// (`POST /oauth2/token`, client-credentials grant).
pub fn obtain_bearer(base_url: &str, key: &str, secret: &str, timeout: Duration) -> Result<String, BackendError> {
    use base64::Engine as _;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into();
    let basic = base64::engine::general_purpose::STANDARD.encode(format!("{key}:{secret}"));
    let mut res = agent
        .post(format!("{}/oauth2/token", base_url.trim_end_matches('/')))
        .header("Authorization", format!("Basic {basic}"))
        .content_type("application/x-www-form-urlencoded;charset=UTF-8")
        .send("grant_type=client_credentials")
        .map_err(|e| BackendError::Transient(e.to_string()))?;
    let status = res.status().as_u16();
    let body = res
        .body_mut()
        .read_to_string()
        .map_err(|e| BackendError::Transient(e.to_string()))?;
    if status != 200 {
        return Err(BackendError::Fatal(format!("token exchange failed: HTTP {status}")));
    }
    let value: Value = serde_json::from_str(&body).map_err(|e| BackendError::Fatal(e.to_string()))?;
    value["access_token"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::Fatal("token response has no access_token".into()))
}

impl Backend for HttpBackend {
    fn lookup(&self, ids: &[String]) -> Result<Vec<Value>, BackendError> {
        self.get("/1.1/statuses/lookup.json", &[("id", ids.join(","))], None)
    }

    fn user_timeline(&self, q: &TimelineQuery) -> Result<Vec<Value>, BackendError> {
        let mut params = vec![
            ("user_id", q.user_id.clone()),
            ("count", q.count.to_string()),
            ("include_rts", "true".to_string()),
        ];
        if let Some(m) = &q.max_id {
            params.push(("max_id", m.clone()));
        }
        if let Some(s) = &q.since_id {
            params.push(("since_id", s.clone()));
        }
        self.get("/1.1/statuses/user_timeline.json", &params, Some(&q.user_id))
    }
}
