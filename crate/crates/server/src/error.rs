use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use m3c_core::orchestrator::EngineError;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum ApiError {
    #[error("UNKNOWN_EPISODE: {0}")]
    UnknownEpisode(String),
    #[error("UNKNOWN_SESSION: {0}")]
    UnknownSession(String),
    #[error("NOT_YOUR_TURN")]
    NotYourTurn,
    #[error("SESSION_CLOSED")]
    SessionClosed,
    #[error("SESSION_ACTIVE: {0} is still open")]
    SessionActive(String),
    #[error("NO_MORE_SESSIONS")]
    NoMoreSessions,
    #[error("NO_SEAT: this session has no human seat")]
    NoSeat,
    #[error("INSERT_NOT_ALLOWED")]
    InsertNotAllowed,
    #[error("BAD_REQUEST: {0}")]
    BadRequest(String),
    #[error("{code}: {message}")]
    Engine { code: &'static str, message: String },
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::Engine { code: e.code(), message: e.to_string() }
    }
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownEpisode(_) => "UNKNOWN_EPISODE",
            ApiError::UnknownSession(_) => "UNKNOWN_SESSION",
            ApiError::NotYourTurn => "NOT_YOUR_TURN",
            ApiError::SessionClosed => "SESSION_CLOSED",
            ApiError::SessionActive(_) => "SESSION_ACTIVE",
            ApiError::NoMoreSessions => "NO_MORE_SESSIONS",
            ApiError::NoSeat => "NO_SEAT",
            ApiError::InsertNotAllowed => "INSERT_NOT_ALLOWED",
            ApiError::BadRequest(_) => "BAD_REQUEST",
            ApiError::Engine { code, .. } => code,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownEpisode(_) | ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::NotYourTurn
            | ApiError::SessionClosed
            | ApiError::SessionActive(_)
            | ApiError::NoMoreSessions => StatusCode::CONFLICT,
            ApiError::NoSeat | ApiError::InsertNotAllowed | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Engine { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "code": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
