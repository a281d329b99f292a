//! HTTP/JSON service: per-stream calibration sessions plus the experiment
//! operations (generate, run, oracle check, bench).

mod error;
mod handlers;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use costguard_core::OnlineController;
use uuid::Uuid;

pub use error::ApiError;

/// Request bodies carry whole streams.
pub const BODY_LIMIT: usize = 1 << 30;

/// One calibration stream.
pub struct Session {
    pub controller: OnlineController,
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&self, session: Session) -> Uuid {
        let id = Uuid::new_v4();
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        id
    }

    fn get(&self, id: Uuid) -> Option<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
    }

    fn remove(&self, id: Uuid) -> bool {
        self.sessions
            .write()
            .expect("session map poisoned")
            .remove(&id)
            .is_some()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }
}

pub fn router() -> Router {
    router_with_state(Arc::new(AppState::new()))
}

pub fn router_with_state(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(handlers::health))
        .route("/v1/sessions", post(handlers::create_session))
        .route(
            "/v1/sessions/{id}",
            get(handlers::session_info).delete(handlers::delete_session),
        )
        .route("/v1/sessions/{id}/observe", post(handlers::observe))
        .route("/v1/sessions/{id}/predict", post(handlers::predict))
        .route("/v1/sessions/{id}/step", post(handlers::step))
        .route("/v1/sessions/{id}/forget/{sample}", post(handlers::forget))
        .route("/v1/sessions/{id}/threshold", get(handlers::threshold))
        .route("/v1/sessions/{id}/snapshot", get(handlers::snapshot))
        .route("/v1/generate", post(handlers::generate))
        .route("/v1/run", post(handlers::run))
        .route("/v1/oracle-check", post(handlers::oracle_check))
        .route("/v1/bench", post(handlers::bench))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves the router on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router())
        .with_graceful_shutdown(shutdown)
        .await
}
