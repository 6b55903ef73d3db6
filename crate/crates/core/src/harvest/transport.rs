use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Bytes,
}

/// The request never produced an HTTP response (connect failure, timeout,
/// reset).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Blocking HTTP GET.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        (**self).get(url)
    }
}

/// Exponential backoff for transport failures. HTTP responses, whatever
/// their status, are returned to the caller untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt.saturating_sub(1))
    }

    pub fn get(
        &self,
        transport: &dyn Transport,
        url: &str,
    ) -> Result<HttpResponse, TransportError> {
        let mut attempt = 0;
        loop {
            match transport.get(url) {
                Ok(response) => return Ok(response),
                Err(err) if attempt >= self.retries => return Err(err),
                Err(err) => {
                    attempt += 1;
                    let delay = self.delay(attempt);
                    tracing::warn!(%url, attempt, ?delay, error = %err, "retrying request");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
