//! HTTP service over fitted mixture classifiers.
//!
//! Sessions hold one dataset and one classifier. Kernel ingredients are
//! computed once per session; each λ request only solves the eigenproblem and
//! projects, and the last 32 λ values are cached.

mod error;
mod openapi;
mod session;

use std::collections::HashMap;
use std::future::Future;
use std::str::FromStr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use mixdr_client::api::{
    Boundary, CreateSession, Health, LrTracePayload, ProjectedPoint, Projection, SessionList, BOUNDARY_SCHEMA,
    HEALTH_SCHEMA, LR_SCHEMA, PROJECTION_SCHEMA, SESSION_LIST_SCHEMA,
};
use mixdr_core::classifier::MixtureClassifier;
use mixdr_core::data::{parse_csv, LabeledDataset, DEFAULT_LABEL_COLUMN};
use mixdr_core::dimred::tune_lambda;
use mixdr_core::pipeline::{default_d_eval, lambda_grid, FitSpec, MAX_LR_STEPS};
use mixdr_core::viz::{axis_names, refit_on_projection, BoundaryRaster, ProjectionFrame};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::HttpError;
pub use session::{ReadySession, BASIS_CACHE_SIZE};
use session::{key_lambda, lambda_key, Entry, Meta, Registry};

pub const MAX_ROWS: usize = 100_000;
pub const MAX_FEATURES: usize = 2_000;
pub const MIN_GRID: usize = 32;
pub const MAX_GRID: usize = 256;
pub const DEFAULT_GRID: usize = 128;
pub const DEFAULT_LR_STEPS: usize = 21;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Concurrent fits; further fit requests queue.
    pub fit_workers: usize,
    /// Allowed browser origins; any origin when empty.
    pub cors_origins: Vec<String>,
    pub max_body_bytes: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            fit_workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2),
            cors_origins: Vec::new(),
            max_body_bytes: 512 * 1024 * 1024,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
    fit_slots: Arc<Semaphore>,
    config: Arc<ServerConfig>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        AppState {
            registry: Arc::new(Registry::default()),
            fit_slots: Arc::new(Semaphore::new(config.fit_workers.max(1))),
            config: Arc::new(config),
        }
    }

    /// Registers an already fitted classifier, e.g. one loaded from disk.
    pub fn insert_fitted(
        &self,
        dataset: LabeledDataset,
        classifier: MixtureClassifier,
        spec: FitSpec,
    ) -> mixdr_core::Result<String> {
        check_size(&dataset).map_err(|e| mixdr_core::Error::InvalidInput(e.body.message))?;
        let meta = Meta::new(new_id(), &dataset);
        let id = meta.id.clone();
        let ready = ReadySession::new(meta, dataset, classifier, spec, Vec::new(), None)?;
        self.registry.insert(Entry::Ready(Arc::new(ready)));
        Ok(id)
    }
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

pub fn router(state: AppState) -> Router {
    let cors = if state.config.cors_origins.is_empty() {
        CorsLayer::permissive()
    } else {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods(tower_http::cors::Any)
            .allow_headers(tower_http::cors::Any)
    };
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/spec", get(spec))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/projection", get(projection))
        .route("/sessions/{id}/boundary", get(boundary))
        .route("/sessions/{id}/lr", get(lr_trace))
        .fallback(|| async { HttpError::new(StatusCode::NOT_FOUND, "route.not_found", "no such route") })
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Json<Health> {
    Json(Health {
        schema: HEALTH_SCHEMA.into(),
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn spec() -> Json<serde_json::Value> {
    Json(openapi::document())
}

fn check_size(ds: &LabeledDataset) -> Result<(), HttpError> {
    if ds.n() > MAX_ROWS || ds.p() > MAX_FEATURES {
        return Err(HttpError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "request.too_large",
            format!(
                "dataset is {}x{}, limits are {MAX_ROWS} rows and {MAX_FEATURES} features",
                ds.n(),
                ds.p()
            ),
        ));
    }
    Ok(())
}

async fn run_fit(state: &AppState, meta: Meta, ds: LabeledDataset, spec: FitSpec) -> Result<ReadySession, HttpError> {
    let _permit = state
        .fit_slots
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| HttpError::internal("worker pool closed"))?;
    let id = meta.id.clone();
    let fitted = tokio::task::spawn_blocking(move || {
        let outcome = spec.fit(&ds)?;
        ReadySession::new(meta, ds, outcome.classifier, spec, outcome.selection, Some(outcome.bic))
    })
    .await
    .map_err(|e| HttpError::internal(e.to_string()))?;
    match &fitted {
        Ok(_) => tracing::info!(session = %id, "fit finished"),
        Err(e) => tracing::warn!(session = %id, error = %e, "fit failed"),
    }
    Ok(fitted?)
}

async fn create_session(State(state): State<AppState>, body: Result<Json<CreateSession>, JsonRejection>) -> Result<Response, HttpError> {
    let Json(req) = body.map_err(|r| {
        let status = if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            StatusCode::PAYLOAD_TOO_LARGE
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        let category = if status == StatusCode::PAYLOAD_TOO_LARGE { "request.too_large" } else { "request.invalid_body" };
        HttpError::new(status, category, r.body_text())
    })?;
    let label = req.label_column.as_deref().unwrap_or(DEFAULT_LABEL_COLUMN);
    let ds = parse_csv(&req.csv, label)?;
    check_size(&ds)?;
    if req.fit.g_max == 0 {
        return Err(HttpError::out_of_range("g_max must be at least 1"));
    }
    let meta = Meta::new(new_id(), &ds);
    let id = meta.id.clone();
    tracing::info!(session = %id, n = ds.n(), p = ds.p(), run_async = req.run_async, "creating session");

    if req.run_async {
        let entry = state.registry.insert(Entry::Fitting(meta.clone()));
        let info = entry.info();
        let bg = state.clone();
        tokio::spawn(async move {
            let done = match run_fit(&bg, meta.clone(), ds, req.fit).await {
                Ok(ready) => Entry::Ready(Arc::new(ready)),
                Err(e) => Entry::Failed(meta, e.body),
            };
            if !bg.registry.replace_existing(done) {
                tracing::info!(session = %id, "session deleted before its fit finished");
            }
        });
        return Ok((StatusCode::ACCEPTED, Json(info)).into_response());
    }

    let ready = run_fit(&state, meta, ds, req.fit).await?;
    let entry = state.registry.insert(Entry::Ready(Arc::new(ready)));
    Ok((StatusCode::CREATED, Json(entry.info())).into_response())
}

async fn list_sessions(State(state): State<AppState>) -> Json<SessionList> {
    Json(SessionList {
        schema: SESSION_LIST_SCHEMA.into(),
        sessions: state.registry.list(),
    })
}

async fn session_info(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, HttpError> {
    let entry = state.registry.get(&id).ok_or_else(|| HttpError::not_found(&id))?;
    Ok(Json(entry.info()).into_response())
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, HttpError> {
    if state.registry.remove(&id) {
        tracing::info!(session = %id, "session deleted");
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(HttpError::not_found(&id))
    }
}

fn ready(state: &AppState, id: &str) -> Result<Arc<ReadySession>, HttpError> {
    let entry = state.registry.get(id).ok_or_else(|| HttpError::not_found(id))?;
    match &*entry {
        Entry::Ready(s) => Ok(s.clone()),
        Entry::Fitting(_) => Err(HttpError::new(
            StatusCode::CONFLICT,
            "session.not_ready",
            format!("session '{id}' is still fitting"),
        )),
        Entry::Failed(_, e) => Err(HttpError {
            status: StatusCode::CONFLICT,
            body: e.clone(),
        }),
    }
}

fn param<T: FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, HttpError> {
    match q.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| HttpError::out_of_range(format!("cannot parse {key}='{raw}'"))),
    }
}

fn lambda_param(q: &HashMap<String, String>) -> Result<i64, HttpError> {
    let lambda: f64 = param(q, "lambda")?.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&lambda) {
        return Err(HttpError::out_of_range(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(lambda_key(lambda))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, HttpError> + Send + 'static) -> Result<T, HttpError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HttpError::internal(e.to_string()))?
}

async fn projection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Projection>, HttpError> {
    let s = ready(&state, &id)?;
    let key = lambda_param(&q)?;
    let dims: usize = param(&q, "dims")?.unwrap_or(s.d.min(2));
    if dims == 0 || dims > s.d.min(2) {
        return Err(HttpError::out_of_range(format!("dims must lie in 1..={}, got {dims}", s.d.min(2))));
    }
    blocking(move || {
        let pr = s.projected(key)?;
        let b = &pr.basis;
        let points = (0..s.dataset.n())
            .map(|i| ProjectedPoint {
                z1: pr.z[(i, 0)],
                z2: (dims > 1).then(|| pr.z[(i, 1)]),
                label: s.dataset.y[i].clone(),
                uncertainty: s.uncertainty[i],
            })
            .collect();
        Ok(Json(Projection {
            schema: PROJECTION_SCHEMA.into(),
            session_id: s.meta.id.clone(),
            lambda: key_lambda(key),
            dims,
            d: b.d(),
            eigenvalues: b.eigenvalues.clone(),
            loc_part: b.loc_part.clone(),
            disp_part: b.disp_part.clone(),
            beta: b.beta.row_iter().map(|r| r.iter().copied().collect()).collect(),
            feature_names: s.dataset.feature_names.clone(),
            axis_names: axis_names(b),
            points,
        }))
    })
    .await
}

async fn boundary(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Boundary>, HttpError> {
    let s = ready(&state, &id)?;
    let key = lambda_param(&q)?;
    let grid: usize = param(&q, "grid")?.unwrap_or(DEFAULT_GRID);
    if !(MIN_GRID..=MAX_GRID).contains(&grid) {
        return Err(HttpError::out_of_range(format!("grid must lie in {MIN_GRID}..={MAX_GRID}, got {grid}")));
    }
    if s.d < 2 {
        return Err(HttpError::out_of_range("the basis has a single direction; a boundary needs two"));
    }
    blocking(move || {
        let pr = s.projected(key)?;
        let frame = ProjectionFrame {
            z: pr.z.columns(0, 2).into_owned(),
            labels: s.dataset.y.clone(),
            axis_names: axis_names(&pr.basis),
            centered: false,
        };
        let c2d = refit_on_projection(&s.classifier, &frame, &s.spec.projection_em())?;
        let raster = BoundaryRaster::compute(&frame, &c2d, grid)?;
        let segments = raster
            .boundary_segments()
            .into_iter()
            .map(|((x0, y0), (x1, y1))| [x0, y0, x1, y1])
            .collect();
        Ok(Json(Boundary {
            schema: BOUNDARY_SCHEMA.into(),
            session_id: s.meta.id.clone(),
            lambda: key_lambda(key),
            grid_size: grid,
            bounds: raster.bounds,
            classes: c2d.classes.clone(),
            max_uncertainty: raster.max_uncertainty(),
            class_at_cell: raster.class_at_cell,
            uncertainty_at_cell: raster.uncertainty_at_cell,
            segments,
        }))
    })
    .await
}

async fn lr_trace(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<LrTracePayload>, HttpError> {
    let s = ready(&state, &id)?;
    let steps: usize = param(&q, "steps")?.unwrap_or(DEFAULT_LR_STEPS);
    if !(1..=MAX_LR_STEPS).contains(&steps) {
        return Err(HttpError::out_of_range(format!("steps must lie in 1..={MAX_LR_STEPS}, got {steps}")));
    }
    let d_eval: usize = param(&q, "d_eval")?.unwrap_or(default_d_eval(s.d));
    if d_eval == 0 || d_eval > s.d {
        return Err(HttpError::out_of_range(format!("d_eval must lie in 1..={}, got {d_eval}", s.d)));
    }
    if let Some(hit) = s.cached_lr(steps, d_eval) {
        return Ok(Json((*hit).clone()));
    }
    blocking(move || {
        let grid = lambda_grid(steps)?;
        let trace = tune_lambda(
            &s.parts,
            &s.dataset.x,
            &s.class_idx,
            &s.classifier,
            &grid,
            d_eval,
            &s.spec.projection_em(),
        )?;
        let payload = LrTracePayload {
            schema: LR_SCHEMA.into(),
            session_id: s.meta.id.clone(),
            d_eval,
            grid: trace.grid,
            lr_values: trace.lr_values,
            argmax_lambda: trace.argmax_lambda,
        };
        Ok(Json((*s.store_lr(steps, d_eval, payload)).clone()))
    })
    .await
}
