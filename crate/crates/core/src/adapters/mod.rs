//! Model ports: how the engine obtains outputs from a model under test.

mod counting;
mod http;
mod stubs;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counting::CountingPort;
pub use http::{HttpPort, RetryPolicy};
pub use stubs::{HashEmbedding, LexiconSentiment, Taxonomy, TaxonomyLexical};

use crate::types::{ScoreVector, ViewKind, ViewRequest};
use crate::CoreError;

#[derive(Debug, Error)]
pub enum PortError {
    #[error("unsupported view: {0}")]
    UnsupportedView(String),
    #[error("batch of {size} exceeds the declared maximum of {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error("transient failure: {0}")]
    Retryable(String),
    #[error("model unavailable after {attempts} attempts: {last}")]
    PortUnavailable { attempts: usize, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// What a port can serve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub views: Vec<ViewKind>,
    pub classes: Vec<String>,
    /// Width of one pooled hidden vector; 0 when hidden views are unsupported.
    #[serde(default)]
    pub hidden_dim: usize,
    pub max_batch: usize,
}

impl Capabilities {
    pub fn supports(&self, view: &ViewRequest) -> Result<(), PortError> {
        if !self.views.contains(&view.kind()) {
            return Err(PortError::UnsupportedView(format!("{} (port serves {:?})", view.fingerprint(), self.views)));
        }
        if let ViewRequest::ClassScore { label } = view {
            if *label >= self.classes.len() {
                return Err(PortError::UnsupportedView(format!(
                    "class {label} out of {} classes",
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    /// Validates a batch request before it is issued.
    pub fn check(&self, texts: usize, views: &[ViewRequest]) -> Result<(), PortError> {
        if texts > self.max_batch {
            return Err(PortError::BatchTooLarge { size: texts, max: self.max_batch });
        }
        let mut seen = Vec::new();
        for v in views {
            self.supports(v)?;
            if matches!(v, ViewRequest::Hidden { .. }) {
                if seen.contains(&ViewKind::Hidden) {
                    return Err(PortError::UnsupportedView("at most one hidden view per request".into()));
                }
                seen.push(ViewKind::Hidden);
            }
        }
        Ok(())
    }
}

/// A model under test.
///
/// `score_batch` returns `result[i][v]`: the `views[v]` output for `texts[i]`.
pub trait ModelPort: Send + Sync {
    fn capabilities(&self) -> &Capabilities;

    fn score_batch(&self, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError>;

    /// Number of batches the engine may have outstanding at once.
    fn max_in_flight(&self) -> usize {
        1
    }

    fn model_id(&self) -> String {
        "unknown".into()
    }
}

impl<P: ModelPort + ?Sized> ModelPort for std::sync::Arc<P> {
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }

    fn score_batch(&self, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError> {
        (**self).score_batch(texts, views)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }

    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

impl<P: ModelPort + ?Sized> ModelPort for Box<P> {
    fn capabilities(&self) -> &Capabilities {
        (**self).capabilities()
    }

    fn score_batch(&self, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError> {
        (**self).score_batch(texts, views)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }

    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

/// Hidden representation and output for one text from a single request.
pub fn split_views(
    port: &dyn ModelPort,
    text: &str,
    hidden_view: &ViewRequest,
    output_view: &ViewRequest,
) -> Result<(ScoreVector, ScoreVector), PortError> {
    if !matches!(hidden_view, ViewRequest::Hidden { .. }) {
        return Err(PortError::UnsupportedView(format!("{} is not a hidden view", hidden_view.fingerprint())));
    }
    hidden_view.validate_for(text)?;
    let mut out = port.score_batch(&[text], &[hidden_view.clone(), output_view.clone()])?;
    let mut row = out.pop().ok_or_else(|| PortError::Protocol("empty result".into()))?;
    if row.len() != 2 {
        return Err(PortError::Protocol(format!("expected 2 views, got {}", row.len())));
    }
    let y = row.pop().expect("len 2");
    let z = row.pop().expect("len 2");
    Ok((z, y))
}

/// Ports whose outputs are computed one text at a time in process.
pub(crate) trait PerText: Send + Sync {
    fn caps(&self) -> &Capabilities;
    fn score_text(&self, text: &str, view: &ViewRequest) -> Result<ScoreVector, PortError>;
}

macro_rules! per_text_port {
    ($($t:ty),*) => {$(
        impl ModelPort for $t {
            fn capabilities(&self) -> &Capabilities {
                self.caps()
            }

            fn score_batch(&self, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError> {
                score_per_text(self, texts, views)
            }

            fn max_in_flight(&self) -> usize {
                std::thread::available_parallelism().map_or(4, |n| n.get())
            }

            fn model_id(&self) -> String {
                stringify!($t).to_string()
            }
        }
    )*};
}

per_text_port!(LexiconSentiment, HashEmbedding, TaxonomyLexical);

fn score_per_text<T: PerText>(port: &T, texts: &[&str], views: &[ViewRequest]) -> Result<Vec<Vec<ScoreVector>>, PortError> {
    port.caps().check(texts.len(), views)?;
    texts
        .iter()
        .map(|t| {
            views
                .iter()
                .map(|v| {
                    v.validate_for(t)?;
                    port.score_text(t, v)
                })
                .collect()
        })
        .collect()
}
