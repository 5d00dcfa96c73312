use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatBackend, LlmRequest, LlmResponse};
use crate::error::Result;

type Responder = dyn Fn(&LlmRequest) -> Result<String> + Send + Sync;

/// Test backend: canned responses in order (cycling), or a closure over the request.
pub struct ScriptedBackend {
    responder: Box<Responder>,
    calls: AtomicUsize,
    log: Mutex<Vec<LlmRequest>>,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        assert!(!responses.is_empty(), "ScriptedBackend needs at least one response");
        let next = AtomicUsize::new(0);
        Self::from_fn(move |_| {
            let i = next.fetch_add(1, Ordering::Relaxed) % responses.len();
            Ok(responses[i].clone())
        })
    }

    pub fn fixed(response: impl Into<String>) -> Self {
        Self::new(vec![response.into()])
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&LlmRequest) -> Result<String> + Send + Sync + 'static,
    {
        Self {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.log.lock().expect("log poisoned").clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "mock_scripted"
    }

    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("log poisoned").push(request.clone());
        (self.responder)(request).map(LlmResponse::text)
    }
}
