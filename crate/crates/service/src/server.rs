use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clonekit::image::Image;
use clonekit::victim::{BlackBox, VictimEndpoint, VictimError};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::{ErrorBody, QueryRequest, QueryResponse};

type Shared = Arc<VictimEndpoint>;

fn reply(status: StatusCode, body: ErrorBody) -> Response {
    (status, Json(body)).into_response()
}

fn error_response(e: VictimError) -> Response {
    match e {
        VictimError::BudgetExhausted(b) => reply(
            StatusCode::PAYMENT_REQUIRED,
            ErrorBody::BudgetExhausted {
                requested: b.requested,
                remaining: b.remaining,
                budget: b.budget,
            },
        ),
        VictimError::ShapeMismatch {
            index,
            expected,
            actual,
        } => reply(
            StatusCode::BAD_REQUEST,
            ErrorBody::ShapeMismatch {
                index,
                expected,
                actual,
            },
        ),
        other => reply(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorBody::Internal {
                message: other.to_string(),
            },
        ),
    }
}

async fn meta(State(ep): State<Shared>) -> Response {
    match ep.meta() {
        Ok(m) => Json(m).into_response(),
        Err(e) => error_response(e),
    }
}

async fn query(
    State(ep): State<Shared>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => {
            return reply(
                StatusCode::BAD_REQUEST,
                ErrorBody::BadRequest {
                    message: e.body_text(),
                },
            )
        }
    };
    let [c, h, w] = req.shape;
    let expected = ep.input_shape();
    let mut images = Vec::with_capacity(req.images.len());
    for (index, data) in req.images.into_iter().enumerate() {
        if data.len() != c * h * w {
            return reply(
                StatusCode::BAD_REQUEST,
                ErrorBody::ShapeMismatch {
                    index,
                    expected,
                    actual: req.shape,
                },
            );
        }
        images.push(Image::new(c, h, w, data));
    }
    // Inference is CPU-bound; keep it off the async workers.
    let worker = ep.clone();
    let result = tokio::task::spawn_blocking(move || worker.query(&images)).await;
    match result {
        Ok(Ok(probs)) => {
            let ledger = ep.ledger();
            Json(QueryResponse {
                probs: probs.into_iter().map(|p| p.into_inner()).collect(),
                remaining: ledger.budget - ledger.spent,
            })
            .into_response()
        }
        Ok(Err(e)) => error_response(e),
        Err(join) => reply(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorBody::Internal {
                message: join.to_string(),
            },
        ),
    }
}

pub fn router(endpoint: Arc<VictimEndpoint>) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/query", post(query))
        .layer(axum::extract::DefaultBodyLimit::max(256 << 20))
        .with_state(endpoint)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    endpoint: Arc<VictimEndpoint>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(endpoint))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread; dropped or stopped to shut down.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn_background(
    endpoint: Arc<VictimEndpoint>,
    addr: SocketAddr,
) -> std::io::Result<RunningServer> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(listener, endpoint, async {
            let _ = rx.await;
        }))
    });
    log::info!("victim listening on {bound}");
    Ok(RunningServer {
        addr: bound,
        stop: Some(tx),
        thread: Some(thread),
    })
}
