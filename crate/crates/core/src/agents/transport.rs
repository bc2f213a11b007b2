//! HTTP plumbing behind the remote agents: the [`Transport`] trait, the
//! production [`ReqwestTransport`], the retry backoff schedule, and two
//! test doubles (a scripted transport and an in-flight counter).

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response body was not valid JSON: {0}")]
    BadJson(String),
}

impl TransportError {
    /// Network failures and HTTP 429/5xx are worth retrying; other
    /// statuses are permanent.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::BadJson(_) => false,
        }
    }
}

/// Delay before retry number `attempt` (zero-based): `initial * 2^attempt`.
pub fn backoff_delay(initial: Duration, attempt: u32) -> Duration {
    initial * 2u32.saturating_pow(attempt)
}

/// A blocking JSON-over-HTTP POST. Implementations must be shareable
/// across threads; concurrency limits are enforced by the callers.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer_token: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer_token: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::BadJson(e.to_string()))
    }
}

/// Replays a fixed sequence of responses and records every request; for
/// tests and recorded-transcript replay. Requests beyond the script fail
/// with a network error.
#[derive(Default)]
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<Value, TransportError>>>,
    requests: Mutex<Vec<(String, Value)>>,
}

impl ScriptedTransport {
    pub fn new<I>(responses: I) -> Self
    where
        I: IntoIterator<Item = Result<Value, TransportError>>,
    {
        ScriptedTransport {
            script: Mutex::new(responses.into_iter().collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// The `(url, body)` of every request seen so far, in order.
    pub fn requests(&self) -> Vec<(String, Value)> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl Transport for ScriptedTransport {
    fn post_json(
        &self,
        url: &str,
        _bearer_token: Option<&str>,
        body: &Value,
        _timeout: Duration,
    ) -> Result<Value, TransportError> {
        self.requests
            .lock()
            .unwrap()
            .push((url.to_string(), body.clone()));
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Network("script exhausted".into())))
    }
}

/// Wraps a transport and tracks the high-water mark of concurrent
/// in-flight calls; the optional dwell keeps calls overlapping long
/// enough for cap tests to observe contention.
pub struct CountingTransport<T> {
    inner: T,
    dwell: Duration,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl<T> CountingTransport<T> {
    pub fn new(inner: T, dwell: Duration) -> Self {
        CountingTransport {
            inner,
            dwell,
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Highest number of simultaneous in-flight calls observed.
    pub fn max_seen(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn post_json(
        &self,
        url: &str,
        bearer_token: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.dwell);
        let result = self.inner.post_json(url, bearer_token, body, timeout);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Wraps a transport and writes one `NNNN.json` file per call (url,
/// request, response) into a directory, for golden-file fixtures. Auth
/// tokens are never written.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
    counter: AtomicUsize,
}

impl<T> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        RecordingTransport {
            inner,
            dir: dir.into(),
            counter: AtomicUsize::new(0),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post_json(
        &self,
        url: &str,
        bearer_token: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let result = self.inner.post_json(url, bearer_token, body, timeout);
        let seq = self.counter.fetch_add(1, Ordering::SeqCst);
        let record = json!({
            "url": url,
            "request": body,
            "response": match &result {
                Ok(v) => json!({ "ok": v }),
                Err(e) => json!({ "error": e.to_string() }),
            },
        });
        let path = self.dir.join(format!("{seq:04}.json"));
        // recording is best-effort; a failed write must not fail the call
        if let Ok(text) = serde_json::to_string_pretty(&record) {
            let _ = std::fs::create_dir_all(&self.dir);
            let _ = std::fs::write(path, text);
        }
        result
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
pub(crate) struct Gate {
    cap: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    pub(crate) fn new(cap: usize) -> Self {
        Gate {
            cap: cap.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GateGuard<'_> {
        let mut in_use = self.in_use.lock().unwrap();
        while *in_use >= self.cap {
            in_use = self.freed.wait(in_use).unwrap();
        }
        *in_use += 1;
        GateGuard { gate: self }
    }
}

pub(crate) struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut in_use = self.gate.in_use.lock().unwrap();
        *in_use -= 1;
        self.gate.freed.notify_one();
    }
}
