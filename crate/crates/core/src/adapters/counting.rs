use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Capabilities, ModelPort, PortError};
use crate::types::{ScoreVector, ViewRequest};

/// Wraps a port and tallies how often each `(text, view)` pair is scored.
pub struct CountingPort<P> {
    inner: P,
    calls: Mutex<HashMap<(String, String), usize>>,
    batches: AtomicUsize,
}

impl<P: ModelPort> CountingPort<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: Mutex::new(HashMap::new()), batches: AtomicUsize::new(0) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Total `(text, view)` evaluations requested.
    pub fn invocations(&self) -> usize {
        self.calls.lock().expect("counter lock").values().sum()
    }

    /// Distinct `(text, view)` pairs seen.
    pub fn unique_pairs(&self) -> usize {
        self.calls.lock().expect("counter lock").len()
    }

    /// Distinct texts seen.
    pub fn unique_texts(&self) -> usize {
        let calls = self.calls.lock().expect("counter lock");
        calls.keys().map(|(t, _)| t).collect::<std::collections::HashSet<_>>().len()
    }

    pub fn max_repeat(&self) -> usize {
        self.calls.lock().expect("counter lock").values().copied().max().unwrap_or(0)
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::Relaxed)
    }
}

impl<P: ModelPort> ModelPort for CountingPort<P> {
    fn capabilities(&self) -> &Capabilities {
        self.inner.capabilities()
    }

    fn score_batch(&self, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError> {
        self.batches.fetch_add(1, Ordering::Relaxed);
        {
            let mut calls = self.calls.lock().expect("counter lock");
            for t in texts {
                for v in views {
                    *calls.entry((t.to_string(), v.fingerprint())).or_default() += 1;
                }
            }
        }
        self.inner.score_batch(texts, views)
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }

    fn model_id(&self) -> String {
        self.inner.model_id()
    }
}
