//! HTTP transport for point-prompted segmenters.
//!
//! A backend is any service answering `POST /segment` with the JSON bodies
//! in [`crate::wire`]. [`request_mask`] adds retries and reply validation on
//! top of any [`SegmentBackend`].

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use hairseg_core::segclient::{validate_response, PromptRequest, PromptResponse, SegmentBackend};
use hairseg_core::SegError;

use crate::wire::{SegmentRequest, SegmentResponse};

/// Environment variable holding the segmenter base URL.
pub const ENDPOINT_ENV: &str = "HAIRSEG_SEGMENT_URL";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Wait before the second attempt; doubled after every failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// Sends `req`, retrying transport failures with exponential backoff, and
/// checks that the reply mask matches the image size.
pub fn request_mask(
    backend: &dyn SegmentBackend,
    req: &PromptRequest,
    policy: RetryPolicy,
) -> Result<PromptResponse, SegError> {
    let mut delay = policy.base_delay;
    let mut attempt = 1;
    loop {
        match backend.segment(req) {
            Ok(resp) => {
                validate_response(req, &resp)?;
                return Ok(resp);
            }
            Err(e) if e.is_transient() && attempt < policy.attempts.max(1) => {
                log::warn!("segment attempt {attempt} failed: {e}; retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Talks to a remote segmenter over plain HTTP.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
}

impl HttpBackend {
    /// `endpoint` is the service base URL; `/segment` is appended unless
    /// already present.
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/segment") {
            base.to_string()
        } else {
            format!("{base}/segment")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, url }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn transport(e: ureq::Error) -> SegError {
    match e {
        ureq::Error::Json(e) => SegError::BadResponse(format!("invalid JSON reply: {e}")),
        ureq::Error::BadUri(u) => SegError::Backend(format!("bad endpoint URL: {u}")),
        other => SegError::Transport(other.to_string()),
    }
}

impl SegmentBackend for HttpBackend {
    fn segment(&self, request: &PromptRequest) -> Result<PromptResponse, SegError> {
        let body = SegmentRequest::from_request(request).map_err(|e| SegError::Backend(e.message))?;
        let start = Instant::now();
        let mut resp = self.agent.post(&self.url).send_json(&body).map_err(transport)?;
        let status = resp.status().as_u16();
        if matches!(status, 429 | 502 | 503 | 504) {
            return Err(SegError::Transport(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(SegError::Backend(format!("HTTP {status}: {}", text.trim())));
        }
        let reply: SegmentResponse = resp.body_mut().read_json().map_err(transport)?;
        reply.to_response(Some(start.elapsed().as_millis() as u64))
    }
}

/// Caps the number of requests in flight through the wrapped backend.
pub struct Bounded<B> {
    inner: B,
    slots: Mutex<usize>,
    freed: Condvar,
}

impl<B> Bounded<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self {
            inner,
            slots: Mutex::new(max_in_flight.max(1)),
            freed: Condvar::new(),
        }
    }
}

impl<B: SegmentBackend> SegmentBackend for Bounded<B> {
    fn segment(&self, request: &PromptRequest) -> Result<PromptResponse, SegError> {
        {
            let mut free = self.slots.lock().expect("slot lock");
            while *free == 0 {
                free = self.freed.wait(free).expect("slot lock");
            }
            *free -= 1;
        }
        let out = self.inner.segment(request);
        *self.slots.lock().expect("slot lock") += 1;
        self.freed.notify_one();
        out
    }
}
