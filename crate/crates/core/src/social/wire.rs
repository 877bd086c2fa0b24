//! Backend wire format: tweet objects shaped like the public v1.1 API.
//!
//! ```json
//! {"id_str": "1128012345", "created_at": "Wed May 15 10:00:00 +0000 2019",
//!  "text": "...", "user": {"id_str": "42", "screen_name": "someone"},
//!  "retweeted_status": {...}, "coordinates": {"type": "Point", "coordinates": [lon, lat]}}
//! ```
//!
//! Unknown fields are ignored so live payloads parse unchanged.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const CREATED_AT_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

#[derive(Debug, Clone, Deserialize)]
pub struct WireUser {
    pub id_str: String,
    #[serde(default)]
    pub screen_name: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct WireCoordinates {
    /// `[lon, lat]`
    pub coordinates: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
pub struct WireTweet {
    pub id_str: String,
    pub created_at: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub full_text: Option<String>,
    pub user: WireUser,
    #[serde(default)]
    pub retweeted_status: Option<Value>,
    #[serde(default)]
    pub coordinates: Option<WireCoordinates>,
}

impl WireTweet {
    pub fn created_at(&self) -> Result<DateTime<Utc>, chrono::ParseError> {
        DateTime::parse_from_str(&self.created_at, CREATED_AT_FORMAT).map(|d| d.with_timezone(&Utc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geo {
    pub lat: f64,
    pub lon: f64,
}

pub fn format_created_at(t: DateTime<Utc>) -> String {
    t.format(CREATED_AT_FORMAT).to_string()
}

/// Build a wire tweet object.
pub fn tweet_json(
    id: &str,
    user_id: &str,
    screen_name: &str,
    created_at: DateTime<Utc>,
    text: &str,
    retweet_of: Option<&str>,
    geo: Option<Geo>,
) -> Value {
    let mut obj = json!({
        "id_str": id,
        "created_at": format_created_at(created_at),
        "text": text,
        "user": {"id_str": user_id, "screen_name": screen_name},
    });
    if let Some(orig) = retweet_of {
        obj["retweeted_status"] = json!({"id_str": orig});
    }
    if let Some(g) = geo {
        obj["coordinates"] = json!({"type": "Point", "coordinates": [g.lon, g.lat]});
    }
    obj
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn created_at_roundtrip() {
        let t = Utc.with_ymd_and_hms(2019, 5, 15, 10, 0, 0).unwrap();
        let s = format_created_at(t);
        assert_eq!(s, "Wed May 15 10:00:00 +0000 2019");
        let v = tweet_json("1", "2", "u", t, "hi", None, Some(Geo { lat: 40.0, lon: -75.0 }));
        let w: WireTweet = serde_json::from_value(v).unwrap();
        assert_eq!(w.created_at().unwrap(), t);
        assert_eq!(w.coordinates.unwrap().coordinates, [-75.0, 40.0]);
    }

    #[test]
    fn ignores_unknown_fields() {
        let v = json!({
            "id_str": "9", "created_at": "Wed May 15 10:00:00 +0000 2019",
            "full_text": "long", "user": {"id_str": "1", "screen_name": "x", "followers_count": 3},
            "favorite_count": 10, "entities": {}
        });
        let w: WireTweet = serde_json::from_value(v).unwrap();
        assert_eq!(w.full_text.as_deref(), Some("long"));
    }
}
