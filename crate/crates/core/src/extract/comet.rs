//! Client for the commonsense generator service, with a query cache and a
//! fixture backend for offline runs.
//!
//! Wire protocol: `POST <url>` with body `{"query": "..."}`; the response is
//! a JSON object with exactly the nine effect-type keys, each holding a list
//! of phrases. A fixture file maps query strings to such objects.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TopicSet;
use crate::error::{read_to_string, write_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EffectType {
    #[serde(rename = "oEffect")]
    OEffect,
    #[serde(rename = "oReact")]
    OReact,
    #[serde(rename = "oWant")]
    OWant,
    #[serde(rename = "xAttr")]
    XAttr,
    #[serde(rename = "xEffect")]
    XEffect,
    #[serde(rename = "xIntent")]
    XIntent,
    #[serde(rename = "xNeed")]
    XNeed,
    #[serde(rename = "xReact")]
    XReact,
    #[serde(rename = "xWant")]
    XWant,
}

impl EffectType {
    pub const ALL: [EffectType; 9] = [
        EffectType::OEffect,
        EffectType::OReact,
        EffectType::OWant,
        EffectType::XAttr,
        EffectType::XEffect,
        EffectType::XIntent,
        EffectType::XNeed,
        EffectType::XReact,
        EffectType::XWant,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EffectType::OEffect => "oEffect",
            EffectType::OReact => "oReact",
            EffectType::OWant => "oWant",
            EffectType::XAttr => "xAttr",
            EffectType::XEffect => "xEffect",
            EffectType::XIntent => "xIntent",
            EffectType::XNeed => "xNeed",
            EffectType::XReact => "xReact",
            EffectType::XWant => "xWant",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            EffectType::OEffect => "effect on others",
            EffectType::OReact => "reaction of others",
            EffectType::OWant => "what others want next",
            EffectType::XAttr => "how the speaker is seen",
            EffectType::XEffect => "effect on the speaker",
            EffectType::XIntent => "speaker's intent",
            EffectType::XNeed => "what the speaker needed",
            EffectType::XReact => "speaker's reaction",
            EffectType::XWant => "what the speaker wants next",
        }
    }
}

impl fmt::Display for EffectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EffectType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EffectType::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| Error::Selection(s.trim().to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    #[serde(rename = "oEffect")]
    o_effect: Vec<String>,
    #[serde(rename = "oReact")]
    o_react: Vec<String>,
    #[serde(rename = "oWant")]
    o_want: Vec<String>,
    #[serde(rename = "xAttr")]
    x_attr: Vec<String>,
    #[serde(rename = "xEffect")]
    x_effect: Vec<String>,
    #[serde(rename = "xIntent")]
    x_intent: Vec<String>,
    #[serde(rename = "xNeed")]
    x_need: Vec<String>,
    #[serde(rename = "xReact")]
    x_react: Vec<String>,
    #[serde(rename = "xWant")]
    x_want: Vec<String>,
}

/// Generated phrases for each of the nine effect types.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Wire", into = "Wire")]
pub struct CommonsenseResult {
    phrases: [Vec<String>; 9],
}

impl TryFrom<Wire> for CommonsenseResult {
    type Error = String;

    fn try_from(w: Wire) -> std::result::Result<Self, String> {
        let phrases = [
            w.o_effect, w.o_react, w.o_want, w.x_attr, w.x_effect, w.x_intent, w.x_need, w.x_react,
            w.x_want,
        ];
        for (e, list) in EffectType::ALL.iter().zip(&phrases) {
            if list.iter().any(|p| p.trim().is_empty()) {
                return Err(format!("empty phrase under {e}"));
            }
        }
        Ok(Self { phrases })
    }
}

impl From<CommonsenseResult> for Wire {
    fn from(r: CommonsenseResult) -> Self {
        let [o_effect, o_react, o_want, x_attr, x_effect, x_intent, x_need, x_react, x_want] =
            r.phrases;
        Wire {
            o_effect,
            o_react,
            o_want,
            x_attr,
            x_effect,
            x_intent,
            x_need,
            x_react,
            x_want,
        }
    }
}

impl CommonsenseResult {
    /// Build from (effect, phrases) pairs; missing effects get no phrases.
    /// Empty phrases are rejected.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (EffectType, Vec<S>)>,
        S: Into<String>,
    {
        let mut out = Self::default();
        for (e, list) in pairs {
            for p in list {
                let p = p.into();
                if p.trim().is_empty() {
                    return Err(Error::Protocol(format!("empty phrase under {e}")));
                }
                out.phrases[e.index()].push(p);
            }
        }
        Ok(out)
    }

    pub fn get(&self, effect: EffectType) -> &[String] {
        &self.phrases[effect.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.iter().all(Vec::is_empty)
    }

    /// Parse a wire response.
    pub fn from_json(body: &str) -> Result<Self> {
        serde_json::from_str(body).map_err(|e| Error::Protocol(e.to_string()))
    }

    /// Union with `other`, keeping first occurrence order.
    pub fn merge(&mut self, other: &CommonsenseResult) {
        for (mine, theirs) in self.phrases.iter_mut().zip(&other.phrases) {
            for p in theirs {
                if !mine.contains(p) {
                    mine.push(p.clone());
                }
            }
        }
    }
}

/// Source of generator responses.
pub trait CometBackend: Send + Sync {
    fn fetch(&self, query: &str) -> Result<CommonsenseResult>;
    /// Whether `fetch` goes over the network.
    fn is_remote(&self) -> bool;
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub timeout: Duration,
    /// Attempts after the first one.
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            backoff: Duration::from_millis(200),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Service {
                attempts: 0,
                detail: e.to_string(),
            })?;
        Ok(Self { config, client })
    }
}

impl CometBackend for HttpBackend {
    fn fetch(&self, query: &str) -> Result<CommonsenseResult> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.backoff * (attempt - 1));
            }
            let resp = self
                .client
                .post(&self.config.url)
                .json(&serde_json::json!({ "query": query }))
                .send();
            match resp {
                Ok(r) if r.status().is_success() => {
                    let body = r.text().map_err(|e| Error::Protocol(e.to_string()))?;
                    return CommonsenseResult::from_json(&body);
                }
                Ok(r) => last = format!("HTTP {}", r.status()),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Service {
            attempts,
            detail: format!("{}: {last}", self.config.url),
        })
    }

    fn is_remote(&self) -> bool {
        true
    }
}

/// Canned responses keyed by query string.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    pub responses: BTreeMap<String, CommonsenseResult>,
}

impl FixtureBackend {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let responses = serde_json::from_str(text)
            .map_err(|e| Error::Protocol(format!("fixture store: {e}")))?;
        Ok(Self { responses })
    }
}

impl CometBackend for FixtureBackend {
    fn fetch(&self, query: &str) -> Result<CommonsenseResult> {
        self.responses
            .get(query)
            .cloned()
            .ok_or_else(|| Error::Service {
                attempts: 1,
                detail: format!("no fixture for query `{query}`"),
            })
    }

    fn is_remote(&self) -> bool {
        false
    }
}

/// How the topics of one instance become queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// One query carrying all topics.
    #[default]
    Joint,
    /// One query per topic, responses merged.
    PerTopic,
}

impl FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(QueryMode::Joint),
            "per_topic" | "per-topic" => Ok(QueryMode::PerTopic),
            other => Err(Error::Config(format!("unknown query mode `{other}`"))),
        }
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

type Slot = Arc<Mutex<Option<(String, CommonsenseResult)>>>;

/// Caching front end over a [`CometBackend`]. Each distinct query string is
/// fetched at most once per client.
pub struct CometClient {
    backend: Box<dyn CometBackend>,
    cache: Mutex<HashMap<String, Slot>>,
    requests: AtomicUsize,
    pub max_in_flight: usize,
}

pub fn query_key(query: &str) -> String {
    hex::encode(Sha256::digest(query.as_bytes()))
}

impl CometClient {
    pub fn new(backend: Box<dyn CometBackend>) -> Self {
        Self {
            backend,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn fixture(path: &Path) -> Result<Self> {
        Ok(Self::new(Box::new(FixtureBackend::load(path)?)))
    }

    pub fn http(config: HttpConfig) -> Result<Self> {
        Ok(Self::new(Box::new(HttpBackend::new(config)?)))
    }

    /// An `http(s)://` target selects the service, anything else is read as
    /// a fixture file.
    pub fn from_target(target: &str) -> Result<Self> {
        if target.starts_with("http://") || target.starts_with("https://") {
            Self::http(HttpConfig::new(target))
        } else {
            Self::fixture(Path::new(target))
        }
    }

    pub fn is_remote(&self) -> bool {
        self.backend.is_remote()
    }

    /// Backend calls made so far.
    pub fn requests_made(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Query with all topics joined.
    pub fn query(&self, topics: &TopicSet) -> Result<CommonsenseResult> {
        self.query_topics(topics, QueryMode::Joint)
    }

    pub fn query_topics(&self, topics: &TopicSet, mode: QueryMode) -> Result<CommonsenseResult> {
        if topics.is_empty() {
            return Err(Error::EmptyInput("no topics to query".into()));
        }
        match mode {
            QueryMode::Joint => self.query_str(&topics.query()),
            QueryMode::PerTopic => {
                let parts = self.query_many(&topics.topics)?;
                let mut out = CommonsenseResult::default();
                for p in &parts {
                    out.merge(p);
                }
                Ok(out)
            }
        }
    }

    pub fn query_str(&self, query: &str) -> Result<CommonsenseResult> {
        let slot = {
            let mut cache = self.cache.lock().expect("cache lock");
            cache.entry(query_key(query)).or_default().clone()
        };
        let mut entry = slot.lock().expect("slot lock");
        if let Some((_, r)) = entry.as_ref() {
            return Ok(r.clone());
        }
        self.requests.fetch_add(1, Ordering::SeqCst);
        let r = self.backend.fetch(query)?;
        *entry = Some((query.to_string(), r.clone()));
        Ok(r)
    }

    /// Resolve many queries with at most `max_in_flight` concurrent backend
    /// calls. Results follow the input order; duplicates are fetched once.
    pub fn query_many(&self, queries: &[String]) -> Result<Vec<CommonsenseResult>> {
        let mut unique: Vec<&str> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for q in queries {
            pos.entry(q.as_str()).or_insert_with(|| {
                unique.push(q);
                unique.len() - 1
            });
        }
        let results: Vec<Mutex<Option<Result<CommonsenseResult>>>> =
            unique.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.max_in_flight.max(1).min(unique.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= unique.len() {
                        break;
                    }
                    let r = self.query_str(unique[i]);
                    *results[i].lock().expect("result lock") = Some(r);
                });
            }
        });
        let resolved: Vec<CommonsenseResult> = results
            .into_iter()
            .map(|m| {
                m.into_inner()
                    .expect("result lock")
                    .expect("every query resolved")
            })
            .collect::<Result<_>>()?;
        Ok(queries
            .iter()
            .map(|q| resolved[pos[q.as_str()]].clone())
            .collect())
    }

    /// Everything fetched so far, as a fixture store.
    pub fn recorded(&self) -> BTreeMap<String, CommonsenseResult> {
        let cache = self.cache.lock().expect("cache lock");
        cache
            .values()
            .filter_map(|slot| slot.lock().expect("slot lock").clone())
            .collect()
    }

    /// Write the recorded responses as a fixture file.
    pub fn export_fixtures(&self, path: &Path) -> Result<()> {
        write_file(
            path,
            &(serde_json::to_string_pretty(&self.recorded())? + "\n"),
        )
    }
}

impl fmt::Debug for CometClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CometClient")
            .field("remote", &self.is_remote())
            .field("requests", &self.requests_made())
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}
