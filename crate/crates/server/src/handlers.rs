use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::Json;
use costguard_core::api::{
    label_list, BenchRequest, CreateSessionRequest, ForgetResponse, ObserveRequest,
    ObserveResponse, PredictRequest, PredictResponse, RunResponse, SampleJson, SessionInfo,
    StepResponse, StreamRequest, ThresholdResponse,
};
use costguard_core::experiment::{self, BenchReport, OracleCheckReport};
use costguard_core::stream::{read_stream, stream_to_string};
use costguard_core::synth::{generate as generate_stream, GeneratorConfig};
use costguard_core::Error;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::{ApiError, AppState, Session};

type ApiResult<T> = Result<T, ApiError>;

const CSV: &str = "text/csv; charset=utf-8";

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Join(e.to_string()))?
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    let uuid = Uuid::parse_str(id).map_err(|_| ApiError::SessionNotFound(id.to_string()))?;
    state
        .get(uuid)
        .ok_or_else(|| ApiError::SessionNotFound(id.to_string()))
}

fn with_session<T>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> ApiResult<T>,
) -> ApiResult<T> {
    let session = lookup(state, id)?;
    let mut guard = session.lock().unwrap_or_else(|p| p.into_inner());
    f(&mut guard)
}

fn info(id: &str, s: &Session) -> SessionInfo {
    let state = s.controller.state();
    SessionInfo {
        id: id.to_string(),
        num_classes: s.controller.objective().num_classes(),
        universe: s.controller.universe_kind(),
        n_seen: state.n_seen(),
        calibrated: state.is_calibrated(),
        config: state.config().clone(),
    }
}

pub async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSessionRequest>,
) -> ApiResult<Json<SessionInfo>> {
    let controller = req.build()?;
    let session = Session { controller };
    let snapshot = info("", &session);
    let id = state.insert(session).to_string();
    tracing::info!(%id, "session created");
    Ok(Json(SessionInfo { id, ..snapshot }))
}

pub async fn session_info(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionInfo>> {
    with_session(&state, &id, |s| Ok(Json(info(&id, s))))
}

pub async fn delete_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::SessionNotFound(id.clone()))?;
    if !state.remove(uuid) {
        return Err(ApiError::SessionNotFound(id));
    }
    Ok(Json(json!({ "deleted": id })))
}

pub async fn observe(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ObserveRequest>,
) -> ApiResult<Json<ObserveResponse>> {
    let samples = req
        .samples
        .into_iter()
        .map(SampleJson::into_sample)
        .collect::<Result<Vec<_>, Error>>()?;
    with_session(&state, &id, |s| {
        let ids = samples
            .iter()
            .map(|sample| s.controller.observe(sample))
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(Json(ObserveResponse {
            ids,
            n_seen: s.controller.state().n_seen(),
        }))
    })
}

pub async fn predict(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PredictRequest>,
) -> ApiResult<Json<PredictResponse>> {
    with_session(&state, &id, |s| {
        let prediction = s.controller.predict(&req.probs)?;
        Ok(Json(PredictResponse {
            labels: prediction.set().map(label_list),
            prediction,
            n_seen: s.controller.state().n_seen(),
        }))
    })
}

pub async fn step(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<SampleJson>,
) -> ApiResult<Json<StepResponse>> {
    let sample = req.into_sample()?;
    with_session(&state, &id, |s| {
        let outcome = s.controller.step(&sample)?;
        Ok(Json(StepResponse {
            labels: outcome.prediction.set().map(label_list),
            outcome,
            n_seen: s.controller.state().n_seen(),
        }))
    })
}

pub async fn forget(
    State(state): State<Arc<AppState>>,
    Path((id, sample)): Path<(String, u64)>,
) -> ApiResult<Json<ForgetResponse>> {
    with_session(&state, &id, |s| {
        let removed = s.controller.forget(sample)?;
        Ok(Json(ForgetResponse {
            removed,
            n_seen: s.controller.state().n_seen(),
        }))
    })
}

pub async fn threshold(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ThresholdResponse>> {
    with_session(&state, &id, |s| {
        let n_seen = s.controller.state().n_seen();
        let threshold = if n_seen == 0 {
            None
        } else {
            Some(s.controller.threshold()?)
        };
        Ok(Json(ThresholdResponse { threshold, n_seen }))
    })
}

pub async fn snapshot(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let body = with_session(&state, &id, |s| Ok(s.controller.state().snapshot_csv()))?;
    Ok(([(header::CONTENT_TYPE, CSV)], body))
}

pub async fn generate(Json(config): Json<GeneratorConfig>) -> ApiResult<impl IntoResponse> {
    let body = blocking(move || Ok(stream_to_string(&generate_stream(&config)?)?)).await?;
    Ok(([(header::CONTENT_TYPE, CSV)], body))
}

pub async fn run(Json(req): Json<StreamRequest>) -> ApiResult<Json<RunResponse>> {
    blocking(move || {
        req.config.validate()?;
        let samples = read_stream(req.stream.as_bytes())?;
        let output = experiment::run(&req.config, &samples)?;
        let checks = experiment::check_guarantees(&req.config, &output);
        tracing::info!(
            rows = output.rows.len(),
            predictions = output.log.len(),
            "run finished"
        );
        Ok(Json(RunResponse {
            rows: output.rows,
            checks,
            log: req.include_log.then_some(output.log),
        }))
    })
    .await
}

pub async fn oracle_check(Json(req): Json<StreamRequest>) -> ApiResult<Json<OracleCheckReport>> {
    blocking(move || {
        req.config.validate()?;
        let samples = read_stream(req.stream.as_bytes())?;
        Ok(Json(experiment::oracle_check(&req.config, &samples)?))
    })
    .await
}

pub async fn bench(Json(config): Json<BenchRequest>) -> ApiResult<Json<BenchReport>> {
    blocking(move || Ok(Json(experiment::bench(&config)?))).await
}
