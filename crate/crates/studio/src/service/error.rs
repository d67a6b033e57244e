use axum::extract::multipart::MultipartError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

/// JSON error response: `{"error": message, "detail": …}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} `{id}`"))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<textmatch::Error> for ApiError {
    fn from(e: textmatch::Error) -> Self {
        use textmatch::Error as E;
        let status = match &e {
            E::UnknownModel(_) => StatusCode::NOT_FOUND,
            E::Io(_) | E::Artifact { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ if e.is_usage() => StatusCode::UNPROCESSABLE_ENTITY,
            E::Ingest { .. } | E::Data(_) | E::NoTrainablePairs => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let detail = match &e {
            E::Schema(problems) => json!(problems),
            E::Ingest { path, line, message } => {
                json!({"file": path.display().to_string(), "line": line, "message": message})
            }
            E::UnknownMetric { valid, .. } => json!({"valid": valid}),
            _ => Value::Null,
        };
        ApiError::new(status, e.to_string()).with_detail(detail)
    }
}

impl From<MultipartError> for ApiError {
    fn from(e: MultipartError) -> Self {
        ApiError::new(e.status(), e.body_text())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.error, "detail": self.detail}))).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
