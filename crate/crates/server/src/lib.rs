//! Reference HTTP model server for the morphcheck wire protocol.
//!
//! Serves any in-process [`ModelPort`] (or the echo conformance mode) at
//! `GET /v1/capabilities` and `POST /v1/score`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use morphcheck_core::adapters::wire::{echo_result, serve, ScoreRequest, ScoreResponse};
use morphcheck_core::adapters::{Capabilities, ModelPort, PortError};
use morphcheck_core::{ViewKind, ViewRequest};
use tokio::sync::oneshot;

/// What answers score requests.
#[derive(Clone)]
pub enum Backend {
    Port(Arc<dyn ModelPort>),
    /// Zero vectors and a uniform softmax, for protocol conformance checks.
    Echo { caps: Capabilities, model_id: String },
}

impl Backend {
    pub fn port(port: impl ModelPort + 'static) -> Self {
        Backend::Port(Arc::new(port))
    }

    pub fn echo(classes: Vec<String>, hidden_dim: usize, max_batch: usize) -> Self {
        let mut views = vec![ViewKind::Softmax];
        if hidden_dim > 0 {
            views.extend([ViewKind::Hidden, ViewKind::Embedding]);
        }
        Backend::Echo { caps: Capabilities { views, classes, hidden_dim, max_batch }, model_id: "echo".into() }
    }

    pub fn capabilities(&self) -> Capabilities {
        match self {
            Backend::Port(p) => p.capabilities().clone(),
            Backend::Echo { caps, .. } => caps.clone(),
        }
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, PortError> {
        match self {
            Backend::Port(p) => serve(p.as_ref(), request),
            Backend::Echo { caps, model_id } => {
                if request.views.iter().any(|v| matches!(v, ViewRequest::ClassScore { .. })) {
                    return Err(PortError::UnsupportedView("class_score is not a wire view".into()));
                }
                caps.check(request.texts.len(), &request.views)?;
                for t in &request.texts {
                    for v in &request.views {
                        v.validate_for(t)?;
                    }
                }
                let r = echo_result(&request.views, caps.classes.len(), caps.hidden_dim);
                Ok(ScoreResponse { model_id: model_id.clone(), results: vec![r; request.texts.len()] })
            }
        }
    }
}

/// Router serving the wire protocol from `backend`.
pub fn router(backend: Backend) -> Router {
    Router::new()
        .route("/v1/capabilities", get(capabilities))
        .route("/v1/score", post(score))
        .with_state(Arc::new(backend))
}

async fn capabilities(State(backend): State<Arc<Backend>>) -> Json<Capabilities> {
    Json(backend.capabilities())
}

async fn score(State(backend): State<Arc<Backend>>, body: Bytes) -> Response {
    let request: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("malformed request: {e}")).into_response(),
    };
    tracing::debug!(texts = request.texts.len(), views = request.views.len(), "score request");
    let result = tokio::task::spawn_blocking(move || backend.score(&request)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => {
            let status = match e {
                PortError::UnsupportedView(_) | PortError::BatchTooLarge { .. } | PortError::Core(_) => StatusCode::BAD_REQUEST,
                PortError::Retryable(_) | PortError::PortUnavailable { .. } => StatusCode::SERVICE_UNAVAILABLE,
                PortError::Protocol(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            (status, e.to_string()).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, format!("scoring task failed: {e}")).into_response(),
    }
}

/// A server running on its own thread. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops the server and waits for it to exit.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `app` in the background.
pub fn spawn(app: Router, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("morphcheck-server".into()).spawn(move || {
        runtime.block_on(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    })?;
    tracing::info!(%addr, "model server listening");
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}

/// Serves `backend` on `addr` until interrupted.
pub fn run_until_ctrl_c(backend: Backend, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(backend))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
