use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use loanlens_core::feedback::FeedbackError;
use serde::Serialize;

/// Error body: `{"error": {"code", "message", "field"?}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>, field: Option<&str>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                field: field.map(str::to_string),
            },
        }
    }

    pub fn missing_session() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "missing_session",
            format!("send the session token in the {} header", crate::SESSION_HEADER),
            None,
        )
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unknown_session",
            format!("no session {id}"),
            None,
        )
    }

    pub fn unknown_application(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_application",
            format!("no application {id}"),
            None,
        )
    }

    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "validation_failed",
            message,
            Some(field),
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }

    pub fn code(&self) -> &'static str {
        self.body.code
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::NotFound { kind: "session", id } => Self::unknown_session(&id),
            FeedbackError::NotFound {
                kind: "application",
                id,
            } => Self::unknown_application(&id),
            FeedbackError::OutOfBounds { ref attribute, .. } => {
                let field = format!("weights.{attribute}");
                Self::validation(&field, e.to_string())
            }
            FeedbackError::UnknownAttribute(ref attribute) => {
                let field = format!("weights.{attribute}");
                Self::validation(&field, e.to_string())
            }
            FeedbackError::Fairness(e) => Self::validation("group_attribute", e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Envelope {
            error: ErrorBody,
        }
        (self.status, Json(Envelope { error: self.body })).into_response()
    }
}
