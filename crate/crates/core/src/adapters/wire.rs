//! JSON wire protocol shared by [`HttpPort`](super::HttpPort) and servers.
//!
//! `POST /v1/score` takes a [`ScoreRequest`] and answers with a
//! [`ScoreResponse`]; `GET /v1/capabilities` answers with
//! [`Capabilities`](super::Capabilities).

use serde::{Deserialize, Serialize};

use super::{ModelPort, PortError};
use crate::types::{ScoreVector, ViewRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub texts: Vec<String>,
    pub views: Vec<ViewRequest>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub model_id: String,
    pub results: Vec<WireResult>,
}

/// Views as sent on the wire: class scores travel as the softmax they are
/// read from, and each wire view appears once.
pub fn wire_views(views: &[ViewRequest]) -> Vec<ViewRequest> {
    let mut out: Vec<ViewRequest> = Vec::new();
    for v in views {
        let w = match v {
            ViewRequest::ClassScore { .. } => ViewRequest::Softmax,
            other => other.clone(),
        };
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

/// Reads the requested views out of one wire result.
pub fn decode_result(result: &WireResult, views: &[ViewRequest]) -> Result<Vec<ScoreVector>, PortError> {
    let missing = |name: &str| PortError::Protocol(format!("response lacks `{name}`"));
    views
        .iter()
        .map(|v| match v {
            ViewRequest::Softmax => {
                Ok(ScoreVector::softmax(result.softmax.clone().ok_or_else(|| missing("softmax"))?)?)
            }
            ViewRequest::ClassScore { label } => {
                let sm = result.softmax.as_ref().ok_or_else(|| missing("softmax"))?;
                let p = sm.get(*label).ok_or_else(|| PortError::Protocol(format!("no class {label} in softmax")))?;
                Ok(ScoreVector::scalar(*p))
            }
            ViewRequest::Hidden { .. } => Ok(ScoreVector::embedding(result.hidden.clone().ok_or_else(|| missing("hidden"))?)),
            ViewRequest::Embedding => {
                Ok(ScoreVector::embedding(result.embedding.clone().ok_or_else(|| missing("embedding"))?))
            }
        })
        .collect()
}

/// Serves one request from a port.
pub fn serve(port: &dyn ModelPort, request: &ScoreRequest) -> Result<ScoreResponse, PortError> {
    if request.views.iter().any(|v| matches!(v, ViewRequest::ClassScore { .. })) {
        return Err(PortError::UnsupportedView("class_score is not a wire view".into()));
    }
    let texts: Vec<&str> = request.texts.iter().map(String::as_str).collect();
    let scored = port.score_batch(&texts, &request.views)?;
    let results = scored
        .into_iter()
        .map(|row| {
            let mut r = WireResult::default();
            for (view, y) in request.views.iter().zip(row) {
                let values = Some(y.values().to_vec());
                match view {
                    ViewRequest::Softmax => r.softmax = values,
                    ViewRequest::Hidden { .. } => r.hidden = values,
                    ViewRequest::Embedding => r.embedding = values,
                    ViewRequest::ClassScore { .. } => unreachable!("rejected above"),
                }
            }
            r
        })
        .collect();
    Ok(ScoreResponse { model_id: port.model_id(), results })
}

/// Outputs of the protocol's conformance mode: zero vectors and a uniform
/// softmax.
pub fn echo_result(views: &[ViewRequest], classes: usize, hidden_dim: usize) -> WireResult {
    let mut r = WireResult::default();
    for v in views {
        match v {
            ViewRequest::Softmax | ViewRequest::ClassScore { .. } => {
                r.softmax = Some(vec![1.0 / classes as f64; classes]);
            }
            ViewRequest::Hidden { spans, .. } => r.hidden = Some(vec![0.0; spans.len().max(1) * hidden_dim]),
            ViewRequest::Embedding => r.embedding = Some(vec![0.0; hidden_dim]),
        }
    }
    r
}
