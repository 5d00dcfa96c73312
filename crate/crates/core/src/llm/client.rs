use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{cache_key, ChatBackend, LlmRequest, LlmResponse, ResponseCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_attempts: 1,
            initial_backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Default)]
pub struct ClientStats {
    pub backend_calls: AtomicU64,
    pub cache_hits: AtomicU64,
    pub retries: AtomicU64,
}

impl ClientStats {
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

/// The single entry point for completions.
pub struct LlmClient {
    backend: Option<Arc<dyn ChatBackend>>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
    limiter: Semaphore,
    stats: ClientStats,
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend: Some(backend),
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Semaphore::new(DEFAULT_MAX_IN_FLIGHT),
            stats: ClientStats::default(),
        }
    }

    /// A client that only answers from `cache` and fails on any miss.
    pub fn replay(cache: Arc<ResponseCache>) -> Self {
        Self {
            backend: None,
            cache: Some(cache),
            retry: RetryPolicy::none(),
            limiter: Semaphore::new(1),
            stats: ClientStats::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Semaphore::new(n.max(1));
        self
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn cache(&self) -> Option<&Arc<ResponseCache>> {
        self.cache.as_ref()
    }

    pub fn backend_name(&self) -> &str {
        self.backend.as_deref().map_or("replay_cache_only", |b| b.name())
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(rec) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(LlmResponse {
                text: rec.text,
                usage: rec.usage,
                cached: true,
                latency_ms: 0,
            });
        }
        let Some(backend) = &self.backend else {
            return Err(Error::CacheMiss { key });
        };
        let started = Instant::now();
        let mut resp = self.call_with_retry(backend.as_ref(), request)?;
        resp.cached = false;
        if resp.latency_ms == 0 {
            resp.latency_ms = started.elapsed().as_millis() as u64;
        }
        if let Some(cache) = &self.cache {
            cache.insert(&key, request, &resp.text, resp.usage)?;
        }
        Ok(resp)
    }

    fn call_with_retry(&self, backend: &dyn ChatBackend, request: &LlmRequest) -> Result<LlmResponse> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.stats.backend_calls.fetch_add(1, Ordering::Relaxed);
                backend.chat(request)
            };
            match result {
                Ok(r) => return Ok(r),
                Err(e) if e.is_transient() && attempt < attempts => {
                    let wait = self.retry.backoff(attempt);
                    log::warn!("{} call failed ({e}); retry {attempt}/{} in {wait:?}", backend.name(), attempts - 1);
                    self.stats.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) if e.is_transient() => {
                    return Err(Error::Transport(format!(
                        "giving up after {attempts} attempts: {e}"
                    )))
                }
                Err(e) => return Err(e),
            }
        }
    }
}
