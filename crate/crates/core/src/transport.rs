//! Request/response transport for remote text-generation endpoints.
//!
//! Bodies are UTF-8 JSON. The labeler and world-model clients share this
//! shape: one POST per request, retried on failure.

use std::time::Duration;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("transport failure: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn post(&self, body: &str) -> Result<String, TransportError>;
}

/// Any `Fn(&str) -> Result<String, TransportError>` is a transport; handy for
/// canned responses.
impl<F> Transport for F
where
    F: Fn(&str) -> Result<String, TransportError> + Send + Sync,
{
    fn post(&self, body: &str) -> Result<String, TransportError> {
        self(body)
    }
}

/// Blocking HTTP POST to a fixed URL.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        HttpTransport { url: url.into(), agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str) -> Result<String, TransportError> {
        let resp = self.agent.post(&self.url).set("Content-Type", "application/json").send_string(body);
        match resp {
            Ok(r) => r.into_string().map_err(|e| TransportError::Io(e.to_string())),
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Status(code)),
            Err(e) => Err(TransportError::Io(e.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, at least 1.
    pub attempts: u32,
    /// Sleep between attempts, doubled after each failure.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, backoff: Duration::from_millis(200) }
    }
}

/// Posts `body`, retrying per `policy`. Returns the last error when every
/// attempt fails.
pub fn post_with_retry(t: &dyn Transport, body: &str, policy: RetryPolicy) -> Result<String, TransportError> {
    let mut delay = policy.backoff;
    let mut attempt = 1;
    loop {
        match t.post(body) {
            Ok(r) => return Ok(r),
            Err(e) if attempt >= policy.attempts.max(1) => return Err(e),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "request failed, retrying");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}
