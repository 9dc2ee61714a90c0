use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{excerpt, BridgeError};

/// Moves one request body to the scoring service and returns the response body.
pub trait Transport: Send + Sync {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
        (**self).post(body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_millis(200), max_backoff: Duration::from_secs(2) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): doubling, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// POSTs to `{base_url}/v1/score` over plain HTTP.
///
/// Connection failures, timeouts, 429 and 5xx responses are retried with
/// capped exponential backoff; other statuses fail immediately.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, BridgeError> {
        if !base_url.starts_with("http://") {
            return Err(BridgeError::Transport {
                attempts: 0,
                message: format!("unsupported endpoint `{base_url}`: only http:// URLs are supported"),
            });
        }
        if retry.attempts == 0 {
            return Err(BridgeError::Transport { attempts: 0, message: "retry attempts must be at least 1".into() });
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(Self { url: format!("{}/v1/score", base_url.trim_end_matches('/')), agent, retry })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &[u8]) -> Result<Vec<u8>, Attempt> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp.body_mut().read_to_vec().map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => Ok(bytes),
            429 | 500..=599 => Attempt::retry_status(status, &bytes),
            _ => Err(Attempt::Fail(BridgeError::Status { status, excerpt: excerpt(&bytes) })),
        }
    }
}

enum Attempt {
    Retry(String),
    Fail(BridgeError),
}

impl Attempt {
    fn retry_status(status: u16, bytes: &[u8]) -> Result<Vec<u8>, Attempt> {
        Err(Attempt::Retry(format!("status {status}: {}", excerpt(bytes))))
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
        let mut last = String::new();
        for attempt in 1..=self.retry.attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.attempt(body) {
                Ok(bytes) => return Ok(bytes),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) => last = message,
            }
        }
        Err(BridgeError::Transport { attempts: self.retry.attempts, message: format!("{} ({last})", self.url) })
    }
}

/// One captured exchange; both sides are the exact UTF-8 bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request: String,
    pub response: String,
}

fn utf8(bytes: &[u8]) -> Result<String, BridgeError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| BridgeError::Fixture("body is not valid UTF-8".into()))
}

/// Replays recorded exchanges keyed on exact request bytes.
#[derive(Debug, Clone, Default)]
pub struct FixtureTransport {
    records: HashMap<String, String>,
}

impl FixtureTransport {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self { records: records.into_iter().map(|r| (r.request, r.response)).collect() }
    }

    /// Reads a JSON-lines fixture file.
    pub fn load(path: &Path) -> Result<Self, BridgeError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BridgeError::Fixture(format!("cannot open {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BridgeError::Fixture(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| BridgeError::Fixture(format!("{} line {}: {e}", path.display(), i + 1)))?;
            records.push(record);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Transport for FixtureTransport {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
        let key = utf8(body)?;
        self.records
            .get(&key)
            .map(|r| r.as_bytes().to_vec())
            .ok_or_else(|| BridgeError::MissingFixture { excerpt: excerpt(body) })
    }
}

/// Passes requests through and keeps every exchange for [`save`](Self::save).
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<BTreeMap<String, String>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, log: Mutex::new(BTreeMap::new()) }
    }

    /// Exchanges sorted by request bytes, so the file is independent of request order.
    pub fn records(&self) -> Vec<FixtureRecord> {
        let log = self.log.lock().expect("fixture log poisoned");
        log.iter().map(|(request, response)| FixtureRecord { request: request.clone(), response: response.clone() }).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), BridgeError> {
        let mut out = Vec::new();
        for r in self.records() {
            serde_json::to_writer(&mut out, &r).expect("fixture record serializes");
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| BridgeError::Fixture(format!("cannot write {}: {e}", path.display())))
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
        let response = self.inner.post(body)?;
        self.log.lock().expect("fixture log poisoned").insert(utf8(body)?, utf8(&response)?);
        Ok(response)
    }
}

/// Memoizes responses by exact request bytes.
pub struct CachingTransport<T> {
    inner: T,
    cache: Mutex<HashMap<Vec<u8>, Vec<u8>>>,
}

impl<T: Transport> CachingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }
}

impl<T: Transport> Transport for CachingTransport<T> {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(body) {
            return Ok(hit.clone());
        }
        let response = self.inner.post(body)?;
        self.cache.lock().expect("cache poisoned").insert(body.to_vec(), response.clone());
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            attempts: 5,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_millis(350),
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn only_http_urls() {
        assert!(HttpTransport::new("https://x", Duration::from_secs(1), RetryPolicy::default()).is_err());
        let t = HttpTransport::new("http://127.0.0.1:9/", Duration::from_secs(1), RetryPolicy::default()).unwrap();
        assert_eq!(t.url(), "http://127.0.0.1:9/v1/score");
    }

    struct Counter(Mutex<usize>);

    impl Transport for Counter {
        fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
            *self.0.lock().unwrap() += 1;
            Ok(body.to_vec())
        }
    }

    #[test]
    fn cache_is_keyed_on_exact_bytes() {
        let c = CachingTransport::new(Counter(Mutex::new(0)));
        c.post(b"a").unwrap();
        c.post(b"a").unwrap();
        c.post(b"a ").unwrap();
        assert_eq!(*c.inner.0.lock().unwrap(), 2);
    }

    #[test]
    fn missing_fixture_is_an_error() {
        let f = FixtureTransport::from_records([FixtureRecord { request: "x".into(), response: "y".into() }]);
        assert_eq!(f.post(b"x").unwrap(), b"y");
        assert!(matches!(f.post(b"z"), Err(BridgeError::MissingFixture { .. })));
    }
}
