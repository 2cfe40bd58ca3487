use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use tcfd_core::analysis::ErrorRecord;
use tcfd_core::engine::{EngineError, ErrorKind};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub stage: String,
}

impl ApiError {
    pub fn new(
        status: StatusCode,
        code: impl Into<String>,
        stage: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            stage: stage.into(),
        }
    }

    pub fn bad_request(stage: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", stage, message)
    }

    pub fn not_found(stage: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", stage, message)
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e.kind {
            ErrorKind::Invalid => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Backend => StatusCode::BAD_GATEWAY,
            ErrorKind::Data => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError::new(status, e.code, e.stage, e.message)
    }
}

impl From<&ErrorRecord> for ApiError {
    fn from(r: &ErrorRecord) -> Self {
        let message = match r.question_index {
            Some(q) => format!("question {q}: {}", r.message),
            None => r.message.clone(),
        };
        ApiError::new(
            StatusCode::BAD_GATEWAY,
            r.code.clone(),
            r.stage.to_string(),
            message,
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}
