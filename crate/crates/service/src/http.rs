//! HTTP API.
//!
//! `POST /v1/ask`, `POST /v1/route`, `GET /v1/health`, `GET /v1/templates`.
//! Every response carries an `x-request-id` header; errors are
//! `{stage, message, request_id}`.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use scholarag_core::kgfact::{SparqlTemplate, TemplateCatalog};
use scholarag_core::pipeline::{Overrides, PipelineError, Stage};
use scholarag_core::Pipeline;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{Notify, Semaphore};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::request_id::{MakeRequestUuid, PropagateRequestIdLayer, SetRequestIdLayer};
use tower_http::trace::TraceLayer;

pub const REQUEST_ID: &str = "x-request-id";

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<Pipeline>,
    workers: Arc<Semaphore>,
    chunks: usize,
}

impl AppState {
    pub fn new(pipeline: Pipeline, max_concurrency: usize) -> Self {
        let chunks = pipeline.index().len();
        Self {
            pipeline: Arc::new(pipeline),
            workers: Arc::new(Semaphore::new(max_concurrency.max(1))),
            chunks,
        }
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub stage: Stage,
    pub message: String,
    pub request_id: String,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(
        status: StatusCode,
        stage: Stage,
        message: impl Into<String>,
        headers: &HeaderMap,
    ) -> Self {
        let request_id = headers
            .get(REQUEST_ID)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        Self {
            status,
            body: ErrorBody {
                stage,
                message: message.into(),
                request_id,
            },
        }
    }

    fn pipeline(e: PipelineError, headers: &HeaderMap) -> Self {
        Self::new(status_for(e.stage), e.stage, e.message, headers)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        tracing::warn!(stage = %self.body.stage, message = %self.body.message, request_id = %self.body.request_id, "request failed");
        (self.status, Json(self.body)).into_response()
    }
}

pub fn status_for(stage: Stage) -> StatusCode {
    match stage {
        Stage::Input => StatusCode::BAD_REQUEST,
        Stage::Compose => StatusCode::UNPROCESSABLE_ENTITY,
        Stage::Retrieve | Stage::Generate => StatusCode::BAD_GATEWAY,
        Stage::Route | Stage::Ingest => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AskRequest {
    query: String,
    #[serde(default)]
    overrides: Overrides,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteRequest {
    query: String,
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub ready: bool,
    pub documents: usize,
    pub chunks: usize,
    pub dim: usize,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>, headers: &HeaderMap) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            Stage::Input,
            e.body_text(),
            headers,
        )
    })
}

async fn ask(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<AskRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload, &headers)?;
    let _permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .expect("semaphore is never closed");
    let answer = state
        .pipeline
        .answer_with(&req.query, &req.overrides)
        .await
        .map_err(|e| ApiError::pipeline(e, &headers))?;
    tracing::info!(task = %answer.provenance.task, citations = answer.citations.len(), "answered");
    Ok(Json(answer).into_response())
}

async fn route(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<RouteRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload, &headers)?;
    if req.query.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            Stage::Input,
            "query is empty",
            &headers,
        ));
    }
    if let Some(t) = req.threshold.filter(|t| !(0.0..=1.0).contains(t)) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            Stage::Input,
            format!("threshold {t} outside 0..=1"),
            &headers,
        ));
    }
    let _permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .expect("semaphore is never closed");
    let (decision, _) = state.pipeline.route(req.query.trim(), req.threshold).await;
    Ok(Json(decision).into_response())
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let p = &state.pipeline;
    Json(Health {
        ready: true,
        documents: p.corpus().len(),
        chunks: state.chunks,
        dim: p.index().dim(),
    })
}

async fn templates(State(state): State<AppState>) -> Json<Vec<SparqlTemplate>> {
    let catalog = state
        .pipeline
        .kg()
        .map(|kg| kg.catalog.clone())
        .unwrap_or_else(TemplateCatalog::builtin);
    Json(catalog.templates().to_vec())
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([
            axum::http::header::CONTENT_TYPE,
            HeaderName::from_static(REQUEST_ID),
        ])
        .expose_headers([HeaderName::from_static(REQUEST_ID)])
}

pub fn app(state: AppState, cors_origins: &[String]) -> Router {
    let request_id = HeaderName::from_static(REQUEST_ID);
    Router::new()
        .route("/v1/ask", post(ask))
        .route("/v1/route", post(route))
        .route("/v1/health", get(health))
        .route("/v1/templates", get(templates))
        .with_state(state)
        .layer(cors(cors_origins))
        .layer(PropagateRequestIdLayer::new(request_id.clone()))
        .layer(TraceLayer::new_for_http().make_span_with(|req: &axum::http::Request<_>| {
            let id = req.headers().get(REQUEST_ID).and_then(|v| v.to_str().ok()).unwrap_or_default();
            tracing::info_span!("request", method = %req.method(), path = %req.uri().path(), request_id = %id)
        }))
        .layer(SetRequestIdLayer::new(request_id, MakeRequestUuid))
}

/// Serves until `shutdown` resolves, then drains in-flight requests for at
/// most `grace`.
pub async fn serve(
    listener: TcpListener,
    router: Router,
    grace: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let signalled = Arc::new(Notify::new());
    let notify = signalled.clone();
    let server = axum::serve(listener, router).with_graceful_shutdown(async move {
        shutdown.await;
        notify.notify_one();
    });
    let mut server = std::pin::pin!(std::future::IntoFuture::into_future(server));
    tokio::select! {
        res = &mut server => res,
        _ = signalled.notified() => {
            tracing::info!("shutting down; draining in-flight requests");
            match tokio::time::timeout(grace, &mut server).await {
                Ok(res) => res,
                Err(_) => {
                    tracing::warn!(grace_ms = grace.as_millis() as u64, "drain timed out");
                    Ok(())
                }
            }
        }
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
