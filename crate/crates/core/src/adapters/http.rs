use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;

use super::wire::{decode_result, wire_views, ScoreRequest, ScoreResponse};
use super::{Capabilities, ModelPort, PortError};
use crate::types::{ScoreVector, ViewRequest};

/// Delays before each retry of a transient failure. The number of attempts
/// is one more than the number of delays.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { backoff: [200, 800, 3200].map(Duration::from_millis).to_vec() }
    }
}

impl RetryPolicy {
    pub fn attempts(&self) -> usize {
        self.backoff.len() + 1
    }
}

/// A model served over the JSON wire protocol.
pub struct HttpPort {
    base: String,
    client: Client,
    retry: RetryPolicy,
    in_flight: usize,
    caps: Capabilities,
    model_id: std::sync::Mutex<Option<String>>,
}

enum Attempt<T> {
    Done(T),
    Transient(String),
}

impl HttpPort {
    pub const DEFAULT_IN_FLIGHT: usize = 4;

    /// Connects and fetches the service's capabilities.
    pub fn connect(base_url: &str, retry: RetryPolicy, in_flight: usize) -> Result<Self, PortError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| PortError::Protocol(format!("http client: {e}")))?;
        let base = base_url.trim_end_matches('/').to_string();
        let url = format!("{base}/v1/capabilities");
        let caps = with_retries(&retry, || {
            let resp = match client.get(&url).send() {
                Ok(r) => r,
                Err(e) => return Ok(Attempt::Transient(e.to_string())),
            };
            match classify(resp.status()) {
                Outcome::Ok => resp
                    .json::<Capabilities>()
                    .map(Attempt::Done)
                    .map_err(|e| PortError::Protocol(format!("capabilities: {e}"))),
                Outcome::Retry => Ok(Attempt::Transient(format!("status {}", resp.status()))),
                Outcome::Fail => Err(PortError::Protocol(format!("capabilities: status {}", resp.status()))),
                Outcome::BadRequest => Err(PortError::Protocol(format!("capabilities: {}", body(resp)))),
            }
        })?;
        if caps.max_batch == 0 {
            return Err(PortError::Protocol("service declares max_batch 0".into()));
        }
        Ok(Self { base, client, retry, in_flight: in_flight.max(1), caps, model_id: std::sync::Mutex::new(None) })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }
}

enum Outcome {
    Ok,
    Retry,
    BadRequest,
    Fail,
}

fn classify(status: StatusCode) -> Outcome {
    match status {
        s if s.is_success() => Outcome::Ok,
        StatusCode::TOO_MANY_REQUESTS | StatusCode::SERVICE_UNAVAILABLE => Outcome::Retry,
        StatusCode::BAD_REQUEST => Outcome::BadRequest,
        _ => Outcome::Fail,
    }
}

fn body(resp: reqwest::blocking::Response) -> String {
    resp.text().unwrap_or_default()
}

fn with_retries<T>(
    policy: &RetryPolicy,
    mut attempt: impl FnMut() -> Result<Attempt<T>, PortError>,
) -> Result<T, PortError> {
    let mut last = String::new();
    for i in 0..policy.attempts() {
        if i > 0 {
            let delay = policy.backoff[i - 1];
            tracing::warn!(attempt = i + 1, ?delay, reason = %last, "retrying model request");
            std::thread::sleep(delay);
        }
        match attempt()? {
            Attempt::Done(v) => return Ok(v),
            Attempt::Transient(reason) => last = reason,
        }
    }
    Err(PortError::PortUnavailable { attempts: policy.attempts(), last })
}

impl ModelPort for HttpPort {
    fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn score_batch(&self, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError> {
        self.caps.check(texts.len(), views)?;
        for t in texts {
            for v in views {
                v.validate_for(t)?;
            }
        }
        let request = ScoreRequest { texts: texts.iter().map(|t| t.to_string()).collect(), views: wire_views(views) };
        let url = format!("{}/v1/score", self.base);
        let response: ScoreResponse = with_retries(&self.retry, || {
            let resp = match self.client.post(&url).json(&request).send() {
                Ok(r) => r,
                Err(e) => return Ok(Attempt::Transient(e.to_string())),
            };
            match classify(resp.status()) {
                Outcome::Ok => resp
                    .json::<ScoreResponse>()
                    .map(Attempt::Done)
                    .map_err(|e| PortError::Protocol(format!("score response: {e}"))),
                Outcome::Retry => Ok(Attempt::Transient(format!("status {}", resp.status()))),
                Outcome::BadRequest => Err(PortError::UnsupportedView(body(resp))),
                Outcome::Fail => Err(PortError::Protocol(format!("status {}: {}", resp.status(), body(resp)))),
            }
        })?;
        if response.results.len() != texts.len() {
            return Err(PortError::Protocol(format!(
                "{} results for {} texts",
                response.results.len(),
                texts.len()
            )));
        }
        *self.model_id.lock().expect("model id lock") = Some(response.model_id);
        response.results.iter().map(|r| decode_result(r, views)).collect()
    }

    fn max_in_flight(&self) -> usize {
        self.in_flight
    }

    fn model_id(&self) -> String {
        self.model_id.lock().expect("model id lock").clone().unwrap_or_else(|| self.base.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy() {
        let p = RetryPolicy::default();
        assert_eq!(p.attempts(), 4);
        assert_eq!(p.backoff[2], Duration::from_millis(3200));
    }

    #[test]
    fn retries_then_gives_up() {
        let policy = RetryPolicy { backoff: vec![Duration::ZERO; 2] };
        let mut n = 0;
        let r: Result<(), _> = with_retries(&policy, || {
            n += 1;
            Ok(Attempt::Transient("busy".into()))
        });
        assert_eq!(n, 3);
        assert!(matches!(r, Err(PortError::PortUnavailable { attempts: 3, .. })));
        let mut n = 0;
        let r = with_retries(&policy, || {
            n += 1;
            Ok(if n < 3 { Attempt::Transient("busy".into()) } else { Attempt::Done(n) })
        });
        assert_eq!(r.unwrap(), 3);
    }

    #[test]
    fn unreachable_service() {
        let policy = RetryPolicy { backoff: vec![Duration::ZERO] };
        let r = HttpPort::connect("http://127.0.0.1:9", policy, 1);
        assert!(matches!(r, Err(PortError::PortUnavailable { attempts: 2, .. })));
    }
}
