use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use costguard_core::api::{ErrorBody, ErrorKind};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Core(#[from] costguard_core::Error),
    #[error("no session `{0}`")]
    SessionNotFound(String),
    #[error("background task failed: {0}")]
    Join(String),
}

impl ApiError {
    fn body(&self) -> ErrorBody {
        match self {
            ApiError::Core(e) => ErrorBody::from(e),
            ApiError::SessionNotFound(_) => ErrorBody {
                kind: ErrorKind::NotFound,
                message: self.to_string(),
                line: None,
            },
            ApiError::Join(_) => ErrorBody {
                kind: ErrorKind::Internal,
                message: self.to_string(),
                line: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = self.body();
        let status = match body.kind {
            ErrorKind::Config => StatusCode::BAD_REQUEST,
            ErrorKind::Data => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(body)).into_response()
    }
}
