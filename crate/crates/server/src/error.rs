use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mixdr_client::api::ApiError;
use mixdr_core::Error;

/// An error response: status plus the versioned error body.
#[derive(Debug, Clone)]
pub struct HttpError {
    pub status: StatusCode,
    pub body: ApiError,
}

impl HttpError {
    pub fn new(status: StatusCode, category: &str, message: impl Into<String>) -> Self {
        HttpError {
            status,
            body: ApiError::new(category, message),
        }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session.not_found", format!("no session '{id}'"))
    }

    pub fn out_of_range(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "request.out_of_range", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for HttpError {
    fn from(e: Error) -> Self {
        let status = if e.is_numerical() || matches!(e, Error::Contract(_)) {
            StatusCode::CONFLICT
        } else if matches!(e, Error::Io(_)) {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        HttpError::new(status, e.category(), e.to_string())
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
